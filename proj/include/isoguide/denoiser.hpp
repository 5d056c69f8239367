#pragma once

#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "isoguide/latent.hpp"
#include "isoguide/schedule.hpp"

namespace isoguide {

// Opaque handle for a prompt. Analytic denoisers key on `id`; remote models
// receive `text`.
struct Condition {
    std::string id;
    std::string text;

    friend bool operator==(const Condition&, const Condition&) = default;
};

// epsilon_theta(x, t, c).
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual Latent predict_eps(const Latent& x, int t, const Condition& c) const = 0;

    // False when calls must be serialized; pipelines then evaluate branches
    // one at a time.
    virtual bool concurrent_safe() const { return true; }

    virtual std::string name() const = 0;
};

using DenoiserPtr = std::shared_ptr<const Denoiser>;

// Delta-target denoiser: the optimal epsilon for data concentrated on the
// template tau(c), i.e. (x - sqrt(ab_t) tau) / sqrt(1 - ab_t).
class TemplateDenoiser final : public Denoiser {
public:
    TemplateDenoiser(std::map<std::string, Latent> templates, NoiseSchedule sched);

    Latent predict_eps(const Latent& x, int t, const Condition& c) const override;
    std::string name() const override { return "template"; }

    const Latent& target(const std::string& id) const;
    const std::map<std::string, Latent>& templates() const { return templates_; }

private:
    std::map<std::string, Latent> templates_;
    NoiseSchedule sched_;
};

std::shared_ptr<TemplateDenoiser> make_template_denoiser(std::map<std::string, Latent> templates,
                                                         NoiseSchedule sched);

// Isotropic Gaussian mixture over the whole latent: sum_j w_j N(mu_j, var_j I).
struct GaussianMixture {
    std::vector<double> weights;
    std::vector<Latent> means;
    std::vector<double> variances;
};

// Exact epsilon for a mixture prior:
// eps*(x,t,c) = -sqrt(1 - ab_t) grad log p_t(x | c),
// p_t = sum_j w_j N(sqrt(ab_t) mu_j, (ab_t var_j + 1 - ab_t) I).
class GmDenoiser final : public Denoiser {
public:
    GmDenoiser(std::map<std::string, GaussianMixture> mixtures, NoiseSchedule sched);

    Latent predict_eps(const Latent& x, int t, const Condition& c) const override;
    std::string name() const override { return "gaussian-mixture"; }

    const GaussianMixture& mixture(const std::string& id) const;

private:
    std::map<std::string, GaussianMixture> mixtures_;
    NoiseSchedule sched_;
};

std::shared_ptr<GmDenoiser> make_gm_denoiser(std::map<std::string, GaussianMixture> mixtures,
                                             NoiseSchedule sched);

// Client for a sidecar's POST /v1/denoise.
class RemoteDenoiser final : public Denoiser {
public:
    explicit RemoteDenoiser(std::string endpoint,
                            std::chrono::milliseconds timeout = std::chrono::seconds(30));

    Latent predict_eps(const Latent& x, int t, const Condition& c) const override;
    bool concurrent_safe() const override { return false; }
    std::string name() const override { return "remote"; }

    const std::string& endpoint() const { return endpoint_; }

private:
    std::string endpoint_;
    std::chrono::milliseconds timeout_;
};

std::shared_ptr<RemoteDenoiser> make_remote_denoiser(
    std::string endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(30));

// Base denoiser plus an optional refiner that takes over from switch_index.
struct DenoiserSchedule {
    DenoiserPtr base;
    DenoiserPtr refiner;
    std::size_t switch_index = 0;

    bool concurrent_safe() const;
};

const Denoiser& select_denoiser(const DenoiserSchedule& dsched, std::size_t step_index);

}  // namespace isoguide
