#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "isoguide/guidance.hpp"
#include "isoguide/pipeline.hpp"
#include "isoguide/rng.hpp"
#include "isoguide/tensor_io.hpp"
#include "isoguide/toyworld.hpp"

using namespace isoguide;

namespace {

constexpr int kT = 1000;
constexpr int kSteps = 50;
constexpr int kLayout = 750;
constexpr double kRmse = 1e-2;
constexpr double kBleed = 0.1;

const NoiseSchedule& sched() {
    static const NoiseSchedule s = make_noise_schedule(kT);
    return s;
}

DiffusionSetup setup_for(DenoiserPtr den) {
    DiffusionSetup s;
    s.schedule = sched();
    s.steps = make_step_plan(kT, kSteps, kLayout, 0.0);
    s.denoisers = {std::move(den), {}, s.steps.refiner_index};
    return s;
}

SamplingOptions opts_for(const Shape& shape, GuidanceKind kind, double lam, std::uint64_t seed) {
    SamplingOptions o;
    o.shape = shape;
    o.guidance = {kind, lam, {}};
    o.seed = seed;
    return o;
}

double max_abs(const Latent& a, const Latent& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

bool equal_on(const Latent& a, const Latent& b, const Mask& m) {
    const std::size_t plane = a.shape().plane();
    for (int c = 0; c < a.shape().channels; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = static_cast<std::size_t>(c) * plane + p;
            if (m[p] && std::memcmp(&a.data()[i], &b.data()[i], sizeof(float)) != 0) return false;
        }
    return true;
}

bool same_bytes(const Latent& a, const Latent& b) { return io::encode_tensor(a) == io::encode_tensor(b); }

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void criterion(const char* name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char timing[96];
    if (budget_s > 0) {
        std::snprintf(timing, sizeof timing, "%.2fs (limit %.0fs)", secs, budget_s);
        if (secs >= budget_s) o.pass = false;
    } else {
        std::snprintf(timing, sizeof timing, "%.2fs", secs);
    }
    if (!o.pass) ++failures;
    std::printf("%s %s: %s; %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), timing);
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// (1 - k lam) tau_ucon + lam sum tau_i, computed directly from the templates.
Latent no_base_oracle(const toy::AttachScene& sc, double lam) {
    const Latent& u = sc.scene.templates.at("ucon");
    Latent out(u.shape());
    const double k = static_cast<double>(sc.plan.attachments.size());
    for (std::size_t p = 0; p < out.size(); ++p) {
        double v = (1.0 - k * lam) * u[p];
        for (const auto& a : sc.plan.attachments) v += lam * sc.scene.templates.at(a.id)[p];
        out[p] = static_cast<float>(v);
    }
    return out;
}

// (1 - lam) tau_ucon + lam tau_base + lam sum (tau_i - tau_base).
Latent isolated_oracle(const toy::AttachScene& sc, double lam) {
    const Latent& u = sc.scene.templates.at("ucon");
    const Latent& b = sc.scene.templates.at("base");
    Latent out(u.shape());
    for (std::size_t p = 0; p < out.size(); ++p) {
        double v = (1.0 - lam) * u[p] + lam * b[p];
        for (const auto& a : sc.plan.attachments) v += lam * (sc.scene.templates.at(a.id)[p] - b[p]);
        out[p] = static_cast<float>(v);
    }
    return out;
}

Outcome equation_reductions() {
    const Shape sh{4, 16, 16};
    double worst = 0.0;
    for (std::int64_t i = 0; i < 100; ++i) {
        const Latent u = sample_gaussian({77, 0, i}, sh), c = sample_gaussian({77, 1, i}, sh);
        const Latent b = sample_gaussian({77, 2, i}, sh);
        const double lam = 10.0 * RngStream{77, 3, i}.uniform(0);
        worst = std::max(worst, max_abs(isolated_attach_combine(u, c, {}, lam), cfg_combine(u, c, lam)));
        const Latent one[] = {b};
        worst = std::max(worst, max_abs(no_base_combine(u, one, lam), cfg_combine(u, b, lam)));
    }
    return {worst <= 1e-6, fmt("max |difference| %.3g over 100 triples (tolerance 1e-6)", worst)};
}

Outcome attachment_convergence() {
    double worst = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        const toy::AttachScene sc = toy::build_attach_scene(toy::generate_attach_spec(7000 + i, 1 + i % 3));
        const DiffusionSetup setup = setup_for(make_template_denoiser(sc.scene.templates, sched()));
        for (double lam : {0.0, 1.0, 5.0}) {
            const auto o = opts_for(sc.scene.shape, GuidanceKind::isolated_attach, lam, 10 + i);
            const Latent out = sample_attachments(sc.plan, setup, o);
            worst = std::max(worst, toy::rmse(out, toy::oracle_effective_template(sc.plan, sc.scene, o.guidance)));
            worst = std::max(worst, toy::rmse(out, isolated_oracle(sc, lam)));
        }
    }
    return {worst <= kRmse, fmt("worst RMSE to oracle %.3g over 10 scenes x 3 scales (tolerance 1e-2)", worst)};
}

Outcome no_base_separation() {
    double worst_own = 0.0, worst_iso = 0.0, min_gap = 1e9;
    // With one attachment both combiners are the same affine map.
    for (std::size_t i = 0; i < 10; ++i) {
        const toy::AttachScene sc = toy::build_attach_scene(toy::generate_attach_spec(7000 + i, 2 + i % 2));
        const DiffusionSetup setup = setup_for(make_template_denoiser(sc.scene.templates, sched()));
        for (double lam : {1.0, 5.0}) {
            const Latent nb_oracle = no_base_oracle(sc, lam), iso_oracle = isolated_oracle(sc, lam);
            const Latent nb = sample_guided(sc.plan, setup, opts_for(sc.scene.shape, GuidanceKind::no_base, lam, 20 + i));
            const Latent iso =
                sample_guided(sc.plan, setup, opts_for(sc.scene.shape, GuidanceKind::isolated_attach, lam, 20 + i));
            worst_own = std::max(worst_own, toy::rmse(nb, nb_oracle));
            worst_iso = std::max(worst_iso, toy::rmse(iso, iso_oracle));
            min_gap = std::min(min_gap, toy::rmse(nb_oracle, iso_oracle));
        }
    }
    const bool pass = worst_own <= kRmse && worst_iso <= kRmse && min_gap > 10.0 * kRmse;
    return {pass, fmt("no-base to own oracle %.3g, isolated to own oracle %.3g, min oracle gap %.3g (needs > 0.1)",
                      worst_own, worst_iso, min_gap)};
}

Outcome region_equality() {
    int checks = 0, bad = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const toy::SubjectScene sc = toy::build_subject_scene(toy::generate_subject_spec(7100 + i, 2 + i % 2));
        const DiffusionSetup setup = setup_for(make_template_denoiser(sc.scene.templates, sched()));
        for (SubjectStrategy st : {SubjectStrategy::A, SubjectStrategy::B, SubjectStrategy::C}) {
            auto o = opts_for(sc.scene.shape, GuidanceKind::cfg, 5.0, 30 + i);
            std::vector<Latent> joint_traj, phase1;
            o.observer = [&](const StepRecord& r) { joint_traj.push_back(r.x); };
            const Latent joint = sample_joint(sc.plan, setup, o);
            (void)joint;
            o.observer = [&](const StepRecord& r) {
                if (r.phase == Phase::joint) phase1.push_back(r.x);
            };
            const RevisionResult res = revise_subjects(sc.plan, sc.layout, setup, o, {st, false});
            for (std::size_t s = 0; s < sc.layout.size(); ++s) {
                ++checks;
                if (!equal_on(res.output, res.branches[s], sc.layout.subjects[s].mask)) ++bad;
            }
            ++checks;
            bool replay = phase1.size() == setup.steps.layout_index &&
                          res.at_layout.bitwise_equal(joint_traj.at(setup.steps.layout_index));
            for (std::size_t s = 0; replay && s < phase1.size(); ++s) replay = phase1[s].bitwise_equal(joint_traj[s]);
            if (!replay) ++bad;
        }
    }
    return {bad == 0, fmt("%.0f of %.0f region/replay comparisons bitwise equal", checks - bad, checks)};
}

Outcome bleeding_efficacy() {
    double worst_after = 0.0, min_before = 1e9;
    for (std::size_t i = 0; i < 5; ++i) {
        const toy::SubjectScene sc = toy::build_subject_scene(toy::generate_subject_spec(7100 + i, 2 + i % 2));
        const DiffusionSetup setup = setup_for(make_template_denoiser(sc.scene.templates, sched()));
        const auto o = opts_for(sc.scene.shape, GuidanceKind::cfg, 1.0, 40 + i);
        const Latent before = sample_joint(sc.plan, setup, o);
        const Latent after = revise_subjects(sc.plan, sc.layout, setup, o).output;
        for (std::size_t s = 0; s < sc.layout.size(); ++s) {
            const Latent& tau = sc.scene.templates.at(sc.plan.subjects[s].prompt.id);
            worst_after = std::max(worst_after, toy::region_rmse(after, tau, sc.layout.subjects[s].mask));
            min_before = std::min(min_before, toy::region_rmse(before, tau, sc.layout.subjects[s].mask));
        }
    }
    return {worst_after < kRmse && min_before > kBleed,
            fmt("worst region RMSE after revision %.3g (< 1e-2), best before %.3g (> 0.1)", worst_after, min_before)};
}

Outcome distribution() {
    const toy::MixtureScene ms = toy::build_mixture_scene(sched());
    const DiffusionSetup setup = setup_for(ms.denoiser);
    std::vector<Latent> sampled;
    for (std::uint64_t i = 0; i < 2000; ++i) {
        sampled.push_back(sample_joint(ms.plan, setup, opts_for({1, 1, 1}, GuidanceKind::cfg, 1.0, 5'000'000 + i)));
    }
    const std::vector<Latent> direct = toy::sample_mixture_directly(ms.conditional, 2000, 8080);
    const double ed = toy::mc_energy_distance(sampled, direct);
    double mean = 0.0;
    for (const auto& v : sampled) mean += v[0];
    mean /= 2000.0;
    const double target = 0.3 * 1.0 + 0.7 * 2.0;
    const double rel = std::abs(mean - target) / target;
    return {ed < 0.05 && rel < 0.05,
            fmt("energy distance %.4f (< 0.05), mean %.4f vs 1.7, relative error %.4f (< 0.05)", ed, mean, rel)};
}

Outcome determinism() {
    int runs = 0, bad = 0;
    auto check = [&](const std::function<Latent(bool)>& f) {
        const Latent a = f(false), b = f(false), c = f(true);
        ++runs;
        if (!same_bytes(a, b) || !same_bytes(a, c)) ++bad;
    };
    const toy::AttachScene att = toy::build_attach_scene(toy::generate_attach_spec(7300, 3));
    const toy::SubjectScene sub = toy::build_subject_scene(toy::generate_subject_spec(7301, 3));
    const DiffusionSetup as = setup_for(make_template_denoiser(att.scene.templates, sched()));
    const DiffusionSetup ss = setup_for(make_template_denoiser(sub.scene.templates, sched()));
    const DiffusionSetup is = setup_for(std::make_shared<toy::InterferenceDenoiser>(sub.scene.templates, sched(), 0.5));
    const toy::MixtureScene ms = toy::build_mixture_scene(sched());
    const DiffusionSetup gs = setup_for(ms.denoiser);
    for (SamplerMode mode : {SamplerMode::deterministic, SamplerMode::ancestral}) {
        auto with = [mode](SamplingOptions o, bool conc) {
            o.sampler = mode;
            o.concurrent = conc;
            return o;
        };
        for (GuidanceKind k : {GuidanceKind::isolated_attach, GuidanceKind::no_base}) {
            check([&](bool conc) { return sample_guided(att.plan, as, with(opts_for(att.scene.shape, k, 5.0, 1), conc)); });
        }
        check([&](bool conc) {
            return sample_guided(att.concept_plan, as, with(opts_for(att.scene.shape, GuidanceKind::composable, 5.0, 1), conc));
        });
        for (SubjectStrategy st : {SubjectStrategy::A, SubjectStrategy::B, SubjectStrategy::C}) {
            for (bool per_branch : {false, true}) {
                check([&](bool conc) {
                    return revise_subjects(sub.plan, sub.layout, is,
                                           with(opts_for(sub.scene.shape, GuidanceKind::cfg, 5.0, 2), conc),
                                           {st, per_branch})
                        .output;
                });
            }
        }
        check([&](bool conc) {
            return multidiffusion_baseline(sub.plan, sub.layout, ss, with(opts_for(sub.scene.shape, GuidanceKind::cfg, 5.0, 3), conc));
        });
        check([&](bool conc) {
            return sample_joint(ms.plan, gs, with(opts_for({1, 1, 1}, GuidanceKind::cfg, 1.0, 4), conc));
        });
    }
    return {bad == 0, fmt("%.0f of %.0f pipeline configurations byte-identical across reruns and concurrency", runs - bad,
                          runs)};
}

Outcome baseline_ordering() {
    int regions = 0, ordered = 0;
    double worst_ratio = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        const toy::SubjectScene sc = toy::build_subject_scene(toy::generate_subject_spec(7200 + i, 2));
        const DiffusionSetup setup =
            setup_for(std::make_shared<toy::InterferenceDenoiser>(sc.scene.templates, sched(), 0.5));
        const auto o = opts_for(sc.scene.shape, GuidanceKind::cfg, 1.0, 50 + i);
        const Latent rev = revise_subjects(sc.plan, sc.layout, setup, o).output;
        const Latent md = multidiffusion_baseline(sc.plan, sc.layout, setup, o);
        for (std::size_t s = 0; s < sc.layout.size(); ++s) {
            const Latent& tau = sc.scene.templates.at(sc.plan.subjects[s].prompt.id);
            const double r = toy::region_rmse(rev, tau, sc.layout.subjects[s].mask);
            const double m = toy::region_rmse(md, tau, sc.layout.subjects[s].mask);
            ++regions;
            if (r < m) ++ordered;
            worst_ratio = std::max(worst_ratio, r / m);
        }
    }
    return {ordered == regions, fmt("%.0f of %.0f regions with revision RMSE below multidiffusion (worst ratio %.3f)",
                                    ordered, regions, worst_ratio)};
}

}  // namespace

int main() {
    criterion("equation reductions", 1.0, equation_reductions);
    criterion("attachment oracle convergence", 30.0, attachment_convergence);
    criterion("no-base separation", 0.0, no_base_separation);
    criterion("region equality and phase-1 replay", 20.0, region_equality);
    criterion("bleeding revision efficacy", 0.0, bleeding_efficacy);
    criterion("mixture distribution", 30.0, distribution);
    criterion("determinism", 0.0, determinism);
    criterion("baseline ordering", 0.0, baseline_ordering);
    std::printf("%d of 8 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
