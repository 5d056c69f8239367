#include "isoguide/denoiser.hpp"

#include <optional>
#include <algorithm>
#include <cmath>
#include <limits>

#include "isoguide/errors.hpp"

namespace isoguide {
namespace {

void check_t(int t, const NoiseSchedule& sched, const char* who) {
    if (t < 1 || t > sched.max_step()) {
        throw ValidationError(std::string(who) + ": t=" + std::to_string(t) + " outside [1, " +
                              std::to_string(sched.max_step()) + "]");
    }
}

}  // namespace

TemplateDenoiser::TemplateDenoiser(std::map<std::string, Latent> templates, NoiseSchedule sched)
    : templates_(std::move(templates)), sched_(std::move(sched)) {
    if (templates_.empty()) throw ValidationError("template registry is empty");
    const Shape s = templates_.begin()->second.shape();
    for (const auto& [id, tau] : templates_) {
        if (tau.shape() != s) {
            throw ShapeError("template '" + id + "' has dims " + to_string(tau.shape()) + ", expected " +
                             to_string(s));
        }
    }
}

const Latent& TemplateDenoiser::target(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw ConditionError("unknown condition id '" + id + "'");
    return it->second;
}

Latent TemplateDenoiser::predict_eps(const Latent& x, int t, const Condition& c) const {
    check_t(t, sched_, "template denoiser");
    const Latent& tau = target(c.id);
    require_same_shape(x, tau, "template denoiser");
    const double a = std::sqrt(sched_.alpha_bar(t));
    const double inv_b = 1.0 / std::sqrt(1.0 - sched_.alpha_bar(t));
    Latent out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>((x[i] - a * tau[i]) * inv_b);
    }
    return out;
}

std::shared_ptr<TemplateDenoiser> make_template_denoiser(std::map<std::string, Latent> templates,
                                                         NoiseSchedule sched) {
    return std::make_shared<TemplateDenoiser>(std::move(templates), std::move(sched));
}

GmDenoiser::GmDenoiser(std::map<std::string, GaussianMixture> mixtures, NoiseSchedule sched)
    : mixtures_(std::move(mixtures)), sched_(std::move(sched)) {
    if (mixtures_.empty()) throw ValidationError("mixture registry is empty");
    std::optional<Shape> shape;
    for (const auto& [id, gm] : mixtures_) {
        const std::size_t k = gm.weights.size();
        if (k == 0 || gm.means.size() != k || gm.variances.size() != k) {
            throw ValidationError("mixture '" + id + "': weights, means and variances must have equal non-zero length");
        }
        double sum = 0.0;
        for (double w : gm.weights) {
            if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("mixture '" + id + "': weights must be positive");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("mixture '" + id + "': weights must sum to 1");
        for (double v : gm.variances) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("mixture '" + id + "': variances must be >= 0");
        }
        for (const auto& mu : gm.means) {
            if (!shape) shape = mu.shape();
            if (mu.shape() != *shape) throw ShapeError("mixture '" + id + "': component means differ in dims");
        }
    }
}

const GaussianMixture& GmDenoiser::mixture(const std::string& id) const {
    auto it = mixtures_.find(id);
    if (it == mixtures_.end()) throw ConditionError("unknown condition id '" + id + "'");
    return it->second;
}

Latent GmDenoiser::predict_eps(const Latent& x, int t, const Condition& c) const {
    check_t(t, sched_, "mixture denoiser");
    const GaussianMixture& gm = mixture(c.id);
    require_same_shape(x, gm.means.front(), "mixture denoiser");
    const double ab = sched_.alpha_bar(t);
    const double sa = std::sqrt(ab);
    const std::size_t k = gm.weights.size();
    const double dim = static_cast<double>(x.size());

    // Responsibilities via max-shifted log-sum-exp.
    std::vector<double> logr(k), s2(k);
    for (std::size_t j = 0; j < k; ++j) {
        s2[j] = ab * gm.variances[j] + (1.0 - ab);
        double sq = 0.0;
        const Latent& mu = gm.means[j];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - sa * mu[i];
            sq += d * d;
        }
        logr[j] = std::log(gm.weights[j]) - 0.5 * dim * std::log(s2[j]) - 0.5 * sq / s2[j];
    }
    const double mx = *std::max_element(logr.begin(), logr.end());
    double z = 0.0;
    for (auto& v : logr) {
        v = std::exp(v - mx);
        z += v;
    }
    const double sb = std::sqrt(1.0 - ab);
    std::vector<double> acc(x.size(), 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        const double coef = (logr[j] / z) / s2[j];
        const Latent& mu = gm.means[j];
        for (std::size_t i = 0; i < x.size(); ++i) acc[i] += coef * (x[i] - sa * mu[i]);
    }
    Latent out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(sb * acc[i]);
    return out;
}

std::shared_ptr<GmDenoiser> make_gm_denoiser(std::map<std::string, GaussianMixture> mixtures,
                                             NoiseSchedule sched) {
    return std::make_shared<GmDenoiser>(std::move(mixtures), std::move(sched));
}

bool DenoiserSchedule::concurrent_safe() const {
    return (!base || base->concurrent_safe()) && (!refiner || refiner->concurrent_safe());
}

const Denoiser& select_denoiser(const DenoiserSchedule& dsched, std::size_t step_index) {
    if (!dsched.base) throw ValidationError("denoiser schedule has no base denoiser");
    if (dsched.refiner && step_index >= dsched.switch_index) return *dsched.refiner;
    return *dsched.base;
}

}  // namespace isoguide
