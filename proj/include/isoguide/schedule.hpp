#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "isoguide/latent.hpp"
#include "isoguide/rng.hpp"

namespace isoguide {

enum class ScheduleKind { scaled_linear, linear, cosine };

std::string_view to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view s);

// Discrete forward-process schedule over t = 0..T with alpha_bar(0) = 1.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    int max_step() const { return static_cast<int>(betas_.size()) - 1; }
    ScheduleKind kind() const { return kind_; }
    double beta(int t) const { return betas_.at(static_cast<std::size_t>(t)); }
    double alpha_bar(int t) const { return alpha_bars_.at(static_cast<std::size_t>(t)); }

    friend NoiseSchedule make_noise_schedule(int max_step, ScheduleKind kind);

private:
    ScheduleKind kind_ = ScheduleKind::scaled_linear;
    std::vector<double> betas_;       // betas_[0] is unused (0)
    std::vector<double> alpha_bars_;  // alpha_bars_[0] == 1
};

NoiseSchedule make_noise_schedule(int max_step, ScheduleKind kind = ScheduleKind::scaled_linear);

// Spaced sampling trajectory. Step i moves from timesteps[i] to prev(i); the
// last step lands on t = 0.
struct StepPlan {
    std::vector<int> timesteps;
    std::size_t layout_index = 0;   // first step of the isolated phase
    std::size_t refiner_index = 0;  // first step handled by the refiner

    std::size_t size() const { return timesteps.size(); }
    int prev(std::size_t i) const { return i + 1 < timesteps.size() ? timesteps[i + 1] : 0; }
};

// Uniform trailing spacing from T down. layout_index is the first index whose
// timestep is <= t_layout (size() when none is); the refiner covers the final
// ceil(refiner_fraction * n_steps) steps.
StepPlan make_step_plan(int max_step, int n_steps, int t_layout, double refiner_fraction);

Latent add_noise(const Latent& x0, int t, const Latent& eps, const NoiseSchedule& sched);

enum class SamplerMode { deterministic, ancestral };

std::string_view to_string(SamplerMode m);
SamplerMode parse_sampler_mode(std::string_view s);

// x0 estimate implied by an epsilon prediction at step t.
Latent predict_x0(const Latent& x_t, const Latent& eps_hat, int t, const NoiseSchedule& sched);

// First-order step from t to t_prev. Deterministic mode is the DDIM update;
// ancestral mode (eta = 1) adds noise drawn from `stream`, which must be set.
// The update is pointwise: output[p] depends only on x_t[p] and eps_hat[p].
Latent sampler_step(const Latent& x_t, const Latent& eps_hat, int t, int t_prev,
                    const NoiseSchedule& sched, SamplerMode mode,
                    const RngStream* stream = nullptr);

}  // namespace isoguide
