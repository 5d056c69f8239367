#include <httplib.h>
#include <json.hpp>

#include "isoguide/base64.hpp"
#include "isoguide/denoiser.hpp"
#include "isoguide/errors.hpp"
#include "isoguide/tensor_io.hpp"

namespace isoguide {

RemoteDenoiser::RemoteDenoiser(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
    if (endpoint_.empty()) throw ValidationError("remote denoiser endpoint is empty");
}

Latent RemoteDenoiser::predict_eps(const Latent& x, int t, const Condition& c) const {
    nlohmann::json req;
    req["latent_b64"] = base64_encode(io::encode_tensor(x));
    req["t"] = t;
    req["prompt"] = c.text;
    req["condition_id"] = c.id;

    httplib::Client cli(endpoint_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    auto res = cli.Post("/v1/denoise", req.dump(), "application/json");
    if (!res) throw TransportError(endpoint_, "POST /v1/denoise failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw ProtocolError("POST /v1/denoise at " + endpoint_ + " returned HTTP " +
                            std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    nlohmann::json body;
    try {
        body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError("denoise response is not JSON: " + std::string(e.what()));
    }
    if (!body.is_object() || !body.contains("eps_b64") || !body["eps_b64"].is_string()) {
        throw ProtocolError("denoise response lacks string field 'eps_b64'");
    }
    Latent eps;
    try {
        eps = io::decode_tensor(base64_decode(body["eps_b64"].get<std::string>()));
    } catch (const FormatError& e) {
        throw ProtocolError(std::string("denoise response tensor: ") + e.what());
    } catch (const ValidationError& e) {
        throw ProtocolError(std::string("denoise response tensor: ") + e.what());
    }
    if (eps.shape() != x.shape()) {
        throw ProtocolError("denoise response dims " + to_string(eps.shape()) + " differ from request " +
                            to_string(x.shape()));
    }
    return eps;
}

std::shared_ptr<RemoteDenoiser> make_remote_denoiser(std::string endpoint,
                                                     std::chrono::milliseconds timeout) {
    return std::make_shared<RemoteDenoiser>(std::move(endpoint), timeout);
}

}  // namespace isoguide
