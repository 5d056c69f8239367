#include <cmath>

#include <httplib.h>
#include <json.hpp>

#include "isoguide/base64.hpp"
#include "isoguide/errors.hpp"
#include "isoguide/layout.hpp"
#include "isoguide/tensor_io.hpp"

namespace isoguide {

using nlohmann::json;

std::string make_detect_request(const Latent& image) {
    json req;
    req["image_ppm_b64"] = base64_encode(io::encode_ppm(image));
    return req.dump();
}

std::string make_segment_request(const Latent& image, const std::vector<Point>& points) {
    json req;
    req["image_ppm_b64"] = base64_encode(io::encode_ppm(image));
    json pts = json::array();
    for (const auto& p : points) pts.push_back({p.x, p.y});
    req["points"] = std::move(pts);
    return req.dump();
}

namespace {

json parse_body(const std::string& body, const char* what) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string(what) + " response is not JSON: " + e.what());
    }
}

int bbox_coord(const json& v) {
    if (!v.is_number()) throw ProtocolError("bbox coordinates must be numbers");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ProtocolError("bbox coordinate is not finite");
    return static_cast<int>(std::lround(d));
}

}  // namespace

std::vector<Detection> parse_detect_response(const std::string& body, int height, int width) {
    const json j = parse_body(body, "detect");
    if (!j.is_object() || !j.contains("detections") || !j["detections"].is_array()) {
        throw ProtocolError("detect response lacks array field 'detections'");
    }
    std::vector<Detection> out;
    for (const auto& d : j["detections"]) {
        if (!d.is_object() || !d.contains("label") || !d["label"].is_string() || !d.contains("confidence") ||
            !d["confidence"].is_number() || !d.contains("bbox") || !d["bbox"].is_array() ||
            d["bbox"].size() != 4) {
            throw ProtocolError("malformed detection entry: " + d.dump());
        }
        Detection det;
        det.label = d["label"].get<std::string>();
        det.confidence = d["confidence"].get<double>();
        det.bbox = {bbox_coord(d["bbox"][0]), bbox_coord(d["bbox"][1]), bbox_coord(d["bbox"][2]),
                    bbox_coord(d["bbox"][3])};
        try {
            validate_detection(det, height, width);
        } catch (const LayoutError& e) {
            throw ProtocolError(std::string("invalid detection from sidecar: ") + e.what());
        }
        out.push_back(std::move(det));
    }
    return out;
}

std::vector<Mask> parse_segment_response(const std::string& body, int height, int width,
                                         std::size_t n_points) {
    const json j = parse_body(body, "segment");
    if (!j.is_object() || !j.contains("masks") || !j["masks"].is_array()) {
        throw ProtocolError("segment response lacks array field 'masks'");
    }
    if (j["masks"].size() != n_points) {
        throw ProtocolError("segment response has " + std::to_string(j["masks"].size()) + " masks for " +
                            std::to_string(n_points) + " points");
    }
    std::vector<Mask> out;
    for (const auto& m : j["masks"]) {
        if (!m.is_object() || !m.contains("pgm_b64") || !m["pgm_b64"].is_string()) {
            throw ProtocolError("mask entry lacks string field 'pgm_b64'");
        }
        Mask mask;
        try {
            mask = io::decode_mask_pgm(base64_decode(m["pgm_b64"].get<std::string>()));
        } catch (const FormatError& e) {
            throw ProtocolError(std::string("segment mask: ") + e.what());
        }
        if (mask.height() != height || mask.width() != width) {
            throw ShapeError("segment mask is " + std::to_string(mask.width()) + "x" +
                             std::to_string(mask.height()) + ", image is " + std::to_string(width) + "x" +
                             std::to_string(height));
        }
        out.push_back(std::move(mask));
    }
    return out;
}

SidecarClient::SidecarClient(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
    if (endpoint_.empty()) throw ValidationError("sidecar endpoint is empty");
}

std::string SidecarClient::post(const std::string& path, const std::string& body) const {
    httplib::Client cli(endpoint_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    auto res = cli.Post(path, body, "application/json");
    if (!res) throw TransportError(endpoint_, "POST " + path + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw ProtocolError("POST " + path + " at " + endpoint_ + " returned HTTP " +
                            std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    return res->body;
}

std::vector<Detection> SidecarClient::detect(const Latent& image) const {
    return parse_detect_response(post("/v1/detect", make_detect_request(image)), image.shape().height,
                                 image.shape().width);
}

std::vector<Mask> SidecarClient::segment(const Latent& image, const std::vector<Point>& points) const {
    for (const auto& p : points) {
        if (p.x < 0 || p.y < 0 || p.x >= image.shape().width || p.y >= image.shape().height) {
            throw LayoutError("segment point out of bounds");
        }
    }
    return parse_segment_response(post("/v1/segment", make_segment_request(image, points)),
                                  image.shape().height, image.shape().width, points.size());
}

std::string SidecarClient::health() const {
    httplib::Client cli(endpoint_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    auto res = cli.Get("/v1/health");
    if (!res) throw TransportError(endpoint_, "GET /v1/health failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw ProtocolError("health check returned HTTP " + std::to_string(res->status));
    const json j = parse_body(res->body, "health");
    if (!j.is_object() || j.value("status", "") != "ok") throw ProtocolError("sidecar reports unhealthy");
    return j.value("mode", "");
}

}  // namespace isoguide
