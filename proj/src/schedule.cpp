#include "isoguide/schedule.hpp"

#include <cmath>
#include <numbers>

#include "isoguide/errors.hpp"

namespace isoguide {

std::string_view to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::scaled_linear: return "scaled-linear";
        case ScheduleKind::linear: return "linear";
        case ScheduleKind::cosine: return "cosine";
    }
    return "?";
}

ScheduleKind parse_schedule_kind(std::string_view s) {
    if (s == "scaled-linear") return ScheduleKind::scaled_linear;
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw ValidationError("unknown schedule kind '" + std::string(s) + "'");
}

NoiseSchedule make_noise_schedule(int max_step, ScheduleKind kind) {
    if (max_step < 1) throw ValidationError("schedule T must be >= 1, got " + std::to_string(max_step));
    NoiseSchedule s;
    s.kind_ = kind;
    const auto T = static_cast<std::size_t>(max_step);
    s.betas_.assign(T + 1, 0.0);
    s.alpha_bars_.assign(T + 1, 1.0);

    auto lerp = [T](double a, double b, std::size_t t) {
        // t in 1..T maps to linspace(a, b, T)
        return T == 1 ? a : a + (b - a) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
    };

    switch (kind) {
        case ScheduleKind::scaled_linear: {
            const double lo = std::sqrt(0.00085), hi = std::sqrt(0.012);
            for (std::size_t t = 1; t <= T; ++t) {
                const double r = lerp(lo, hi, t);
                s.betas_[t] = r * r;
            }
            break;
        }
        case ScheduleKind::linear:
            for (std::size_t t = 1; t <= T; ++t) s.betas_[t] = lerp(1e-4, 0.02, t);
            break;
        case ScheduleKind::cosine: {
            constexpr double offset = 0.008;
            auto f = [&](double t) {
                const double v = std::cos((t / static_cast<double>(T) + offset) / (1.0 + offset) *
                                          std::numbers::pi / 2.0);
                return v * v;
            };
            for (std::size_t t = 1; t <= T; ++t) {
                const double b = 1.0 - f(static_cast<double>(t)) / f(static_cast<double>(t - 1));
                s.betas_[t] = std::min(std::max(b, 1e-8), 0.999);
            }
            break;
        }
    }
    for (std::size_t t = 1; t <= T; ++t) s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - s.betas_[t]);
    return s;
}

StepPlan make_step_plan(int max_step, int n_steps, int t_layout, double refiner_fraction) {
    if (max_step < 1) throw ValidationError("T must be >= 1");
    if (n_steps < 1 || n_steps > max_step) {
        throw ValidationError("steps must be in [1, T], got " + std::to_string(n_steps));
    }
    if (t_layout < 0 || t_layout > max_step) {
        throw ValidationError("t_lay must be in [0, T], got " + std::to_string(t_layout));
    }
    if (!(refiner_fraction >= 0.0 && refiner_fraction < 1.0)) {
        throw ValidationError("refiner fraction must be in [0, 1)");
    }
    StepPlan plan;
    const auto n = static_cast<std::size_t>(n_steps);
    const double stride = static_cast<double>(max_step) / static_cast<double>(n_steps);
    plan.timesteps.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        plan.timesteps.push_back(
            static_cast<int>(std::lround(static_cast<double>(max_step) - static_cast<double>(i) * stride)));
    }
    plan.layout_index = n;
    for (std::size_t i = 0; i < n; ++i) {
        if (plan.timesteps[i] <= t_layout) {
            plan.layout_index = i;
            break;
        }
    }
    // Guard against 0.1 * 50 landing a hair above an integer.
    const auto refined = static_cast<std::size_t>(std::ceil(refiner_fraction * n_steps - 1e-9));
    plan.refiner_index = n - refined;
    return plan;
}

Latent add_noise(const Latent& x0, int t, const Latent& eps, const NoiseSchedule& sched) {
    require_same_shape(x0, eps, "add_noise");
    if (t < 0 || t > sched.max_step()) throw ValidationError("add_noise: t out of range");
    const double a = std::sqrt(sched.alpha_bar(t));
    const double b = std::sqrt(1.0 - sched.alpha_bar(t));
    Latent out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
    }
    return out;
}

std::string_view to_string(SamplerMode m) {
    return m == SamplerMode::deterministic ? "deterministic" : "ancestral";
}

SamplerMode parse_sampler_mode(std::string_view s) {
    if (s == "deterministic") return SamplerMode::deterministic;
    if (s == "ancestral") return SamplerMode::ancestral;
    throw ValidationError("unknown sampler '" + std::string(s) + "'");
}

Latent predict_x0(const Latent& x_t, const Latent& eps_hat, int t, const NoiseSchedule& sched) {
    require_same_shape(x_t, eps_hat, "predict_x0");
    if (t < 1 || t > sched.max_step()) throw ValidationError("predict_x0: t out of range");
    const double a = std::sqrt(sched.alpha_bar(t));
    const double b = std::sqrt(1.0 - sched.alpha_bar(t));
    Latent out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>((x_t[i] - b * eps_hat[i]) / a);
    }
    return out;
}

Latent sampler_step(const Latent& x_t, const Latent& eps_hat, int t, int t_prev,
                    const NoiseSchedule& sched, SamplerMode mode, const RngStream* stream) {
    require_same_shape(x_t, eps_hat, "sampler_step");
    if (t_prev >= t) {
        throw ValidationError("sampler_step: t_prev (" + std::to_string(t_prev) + ") must be < t (" +
                              std::to_string(t) + ")");
    }
    if (t > sched.max_step() || t_prev < 0) throw ValidationError("sampler_step: t out of range");
    const double ab_t = sched.alpha_bar(t);
    const double ab_p = sched.alpha_bar(t_prev);
    const double sa_t = std::sqrt(ab_t), sb_t = std::sqrt(1.0 - ab_t);
    const double sa_p = std::sqrt(ab_p);

    Latent out(x_t.shape());
    if (mode == SamplerMode::deterministic) {
        const double sb_p = std::sqrt(1.0 - ab_p);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double x0 = (x_t[i] - sb_t * eps_hat[i]) / sa_t;
            out[i] = static_cast<float>(sa_p * x0 + sb_p * eps_hat[i]);
        }
        return out;
    }

    if (stream == nullptr) throw ValidationError("sampler_step: ancestral mode needs a noise stream");
    const double sigma2 = (1.0 - ab_p) / (1.0 - ab_t) * (1.0 - ab_t / ab_p);
    const double sigma = std::sqrt(std::max(sigma2, 0.0));
    const double dir = std::sqrt(std::max(1.0 - ab_p - sigma2, 0.0));
    const Latent z = sample_gaussian(*stream, x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x0 = (x_t[i] - sb_t * eps_hat[i]) / sa_t;
        out[i] = static_cast<float>(sa_p * x0 + dir * eps_hat[i] + sigma * z[i]);
    }
    return out;
}

}  // namespace isoguide
