#include "isoguide/pipeline.hpp"

#include <chrono>
#include <exception>
#include <future>
#include <set>
#include <sstream>

#include "isoguide/errors.hpp"
#include "isoguide/rng.hpp"

namespace isoguide {

using nlohmann::json;

namespace {

void check_unique_ids(const std::vector<const Condition*>& conds) {
    std::set<std::string> seen;
    for (const auto* c : conds) {
        if (c->id.empty()) throw ValidationError("condition ids must be non-empty");
        if (!seen.insert(c->id).second) throw ValidationError("duplicate condition id '" + c->id + "'");
    }
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view list) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto comma = list.find(',', start);
        const auto piece = trim(list.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                    : comma - start));
        if (piece.empty()) throw ValidationError("prompt list contains an empty entry");
        out.push_back(piece);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

// A combiner over predictions of several conditions on one latent.
struct Guide {
    GuidanceKind kind = GuidanceKind::cfg;
    double scale = kDefaultGuidanceScale;
    std::vector<double> weights;
    // cfg: {ucon, con}; isolated_attach: {ucon, base, items...};
    // no_base / composable: {ucon, items...}
    std::vector<const Condition*> conds;

    Latent combine(std::span<const Latent> preds) const {
        switch (kind) {
            case GuidanceKind::cfg: return cfg_combine(preds[0], preds[1], scale);
            case GuidanceKind::isolated_attach:
                return isolated_attach_combine(preds[0], preds[1], preds.subspan(2), scale, weights);
            case GuidanceKind::no_base: return no_base_combine(preds[0], preds.subspan(1), scale, weights);
            case GuidanceKind::composable: return composable_combine(preds[0], preds.subspan(1), scale, weights);
        }
        throw ValidationError("unknown guidance kind");
    }
};

Guide cfg_guide(const Condition& ucon, const Condition& con, double scale) {
    return Guide{GuidanceKind::cfg, scale, {}, {&ucon, &con}};
}

Guide subject_guide(const Condition& ucon, const SubjectPrompt& s, double scale) {
    if (s.attachments.empty()) return cfg_guide(ucon, s.prompt, scale);
    Guide g{GuidanceKind::isolated_attach, scale, {}, {&ucon, &s.prompt}};
    for (const auto& a : s.attachments) g.conds.push_back(&a);
    return g;
}

const Condition& joint_condition(const PromptPlan& plan) {
    if (plan.joint) return *plan.joint;
    if (plan.base) return *plan.base;
    throw ValidationError("plan has neither a joint nor a base prompt");
}

Guide plan_guide(const PromptPlan& plan, const GuidanceMode& mode) {
    switch (mode.kind) {
        case GuidanceKind::cfg: return cfg_guide(plan.unconditional, joint_condition(plan), mode.scale);
        case GuidanceKind::isolated_attach: {
            plan.validate_attachment_plan();
            mode.validate(plan.attachments.size());
            Guide g{mode.kind, mode.scale, mode.attachment_weights, {&plan.unconditional, &*plan.base}};
            for (const auto& a : plan.attachments) g.conds.push_back(&a);
            return g;
        }
        case GuidanceKind::no_base:
        case GuidanceKind::composable: {
            if (plan.attachments.empty()) throw ValidationError(std::string(to_string(mode.kind)) + " mode needs at least one condition");
            mode.validate(plan.attachments.size());
            Guide g{mode.kind, mode.scale, mode.attachment_weights, {&plan.unconditional}};
            for (const auto& a : plan.attachments) g.conds.push_back(&a);
            return g;
        }
    }
    throw ValidationError("unknown guidance kind");
}

void run_tasks(std::vector<std::function<void()>>& tasks, bool concurrent) {
    if (!concurrent || tasks.size() < 2) {
        for (auto& t : tasks) t();
        return;
    }
    std::vector<std::future<void>> futures;
    futures.reserve(tasks.size());
    for (auto& t : tasks) futures.push_back(std::async(std::launch::async, t));
    std::exception_ptr first;
    for (auto& f : futures) {
        try {
            f.get();
        } catch (...) {
            if (!first) first = std::current_exception();
        }
    }
    if (first) std::rethrow_exception(first);
}

// Evaluates every guide on its latent for one step and returns the combined
// predictions in order. All denoiser calls of the step run as one batch.
std::vector<Latent> evaluate_guides(const Denoiser& den, std::span<const Guide> guides,
                                    std::span<const Latent* const> latents, int t, bool concurrent) {
    std::vector<std::vector<Latent>> preds(guides.size());
    std::vector<std::function<void()>> tasks;
    for (std::size_t g = 0; g < guides.size(); ++g) {
        preds[g].resize(guides[g].conds.size());
        for (std::size_t c = 0; c < guides[g].conds.size(); ++c) {
            tasks.push_back([&, g, c] { preds[g][c] = den.predict_eps(*latents[g], t, *guides[g].conds[c]); });
        }
    }
    run_tasks(tasks, concurrent && den.concurrent_safe());
    std::vector<Latent> out;
    out.reserve(guides.size());
    for (std::size_t g = 0; g < guides.size(); ++g) out.push_back(guides[g].combine(preds[g]));
    return out;
}

RngStream ancestral_stream(std::uint64_t seed, std::size_t step) {
    return {seed, streams::kAncestral, static_cast<std::int64_t>(step)};
}

Latent run_loop(Latent x, const Guide& guide, const DiffusionSetup& setup, const SamplingOptions& opts,
                std::size_t begin, std::size_t end, Phase phase) {
    const auto& steps = setup.steps;
    for (std::size_t s = begin; s < end; ++s) {
        const int t = steps.timesteps[s];
        const int t_prev = steps.prev(s);
        const Denoiser& den = select_denoiser(setup.denoisers, s);
        const Latent* lat[] = {&x};
        Latent eps = std::move(evaluate_guides(den, std::span<const Guide>(&guide, 1), lat, t, opts.concurrent).front());
        if (opts.observer) opts.observer(StepRecord{phase, s, t, t_prev, x, eps});
        const RngStream stream = ancestral_stream(opts.seed, s);
        x = sampler_step(x, eps, t, t_prev, setup.schedule, opts.sampler, &stream);
    }
    return x;
}

void check_setup(const DiffusionSetup& setup, const SamplingOptions& opts) {
    if (!opts.shape.valid()) throw ShapeError("sampling shape must be positive, got " + to_string(opts.shape));
    if (setup.steps.timesteps.empty()) throw ValidationError("step plan is empty");
    if (setup.steps.timesteps.front() > setup.schedule.max_step()) {
        throw ValidationError("step plan exceeds schedule T");
    }
    if (!setup.denoisers.base) throw ValidationError("no base denoiser configured");
}

}  // namespace

void PromptPlan::validate_attachment_plan() const {
    if (!base) throw ValidationError("attachment plan needs exactly one base prompt");
    std::vector<const Condition*> all{&unconditional, &*base};
    for (const auto& a : attachments) all.push_back(&a);
    check_unique_ids(all);
}

void PromptPlan::validate_subject_plan() const {
    if (!joint) throw ValidationError("subject plan needs exactly one joint prompt");
    if (subjects.empty()) throw ValidationError("subject plan needs at least one subject");
    std::vector<const Condition*> all{&unconditional, &*joint};
    for (const auto& s : subjects) {
        all.push_back(&s.prompt);
        for (const auto& a : s.attachments) all.push_back(&a);
    }
    check_unique_ids(all);
}

PromptPlan parse_attachment_prompt_list(std::string_view list, std::string_view unconditional) {
    const auto items = split_list(list);
    PromptPlan plan;
    plan.unconditional = {"ucon", std::string(unconditional)};
    plan.base = Condition{"base", items.front()};
    for (std::size_t i = 1; i < items.size(); ++i) {
        plan.attachments.push_back({"attach" + std::to_string(i), items[i]});
    }
    return plan;
}

PromptPlan parse_subject_prompt_list(std::string_view list, std::string_view joint,
                                     std::string_view unconditional) {
    const auto items = split_list(list);
    PromptPlan plan;
    plan.unconditional = {"ucon", std::string(unconditional)};
    plan.joint = Condition{"joint", std::string(joint)};
    for (std::size_t i = 0; i < items.size(); ++i) {
        plan.subjects.push_back({{"subject" + std::to_string(i + 1), items[i]}, {}});
    }
    return plan;
}

std::string_view to_string(SubjectStrategy s) {
    switch (s) {
        case SubjectStrategy::A: return "A";
        case SubjectStrategy::B: return "B";
        case SubjectStrategy::C: return "C";
    }
    return "?";
}

SubjectStrategy parse_strategy(std::string_view s) {
    if (s == "A" || s == "a") return SubjectStrategy::A;
    if (s == "B" || s == "b") return SubjectStrategy::B;
    if (s == "C" || s == "c") return SubjectStrategy::C;
    throw ValidationError("unknown strategy '" + std::string(s) + "' (expected A, B or C)");
}

Latent initial_latent(std::uint64_t seed, const Shape& shape) {
    return sample_gaussian({seed, streams::kInitial, 0}, shape);
}

Latent sample_joint(const PromptPlan& plan, const DiffusionSetup& setup, const SamplingOptions& opts) {
    check_setup(setup, opts);
    const Guide g = cfg_guide(plan.unconditional, joint_condition(plan), opts.guidance.scale);
    return run_loop(initial_latent(opts.seed, opts.shape), g, setup, opts, 0, setup.steps.size(), Phase::joint);
}

Latent sample_guided(const PromptPlan& plan, const DiffusionSetup& setup, const SamplingOptions& opts) {
    check_setup(setup, opts);
    const Guide g = plan_guide(plan, opts.guidance);
    return run_loop(initial_latent(opts.seed, opts.shape), g, setup, opts, 0, setup.steps.size(), Phase::joint);
}

Latent sample_attachments(const PromptPlan& plan, const DiffusionSetup& setup, const SamplingOptions& opts) {
    SamplingOptions o = opts;
    o.guidance.kind = GuidanceKind::isolated_attach;
    return sample_guided(plan, setup, o);
}

Latent denoise_range(Latent x, const Condition& unconditional, const Condition& cond,
                     const DiffusionSetup& setup, const SamplingOptions& opts, std::size_t begin,
                     std::size_t end) {
    if (begin > end || end > setup.steps.size()) throw ValidationError("denoise_range: bad step range");
    return run_loop(std::move(x), cfg_guide(unconditional, cond, opts.guidance.scale), setup, opts, begin,
                    end, Phase::joint);
}

std::vector<Latent> make_branch_latents(const Latent& x_layout, const SubjectLayout& layout,
                                        SubjectStrategy strategy, std::span<const Latent> noise) {
    const std::size_t k = layout.size();
    if (k == 0) throw LayoutError("layout has no subjects");
    if (noise.size() != 1 && noise.size() != k) {
        throw ValidationError("branch noise must be shared (1) or per branch (" + std::to_string(k) + ")");
    }
    for (const auto& n : noise) require_same_shape(x_layout, n, "make_branch_latents");
    std::vector<Mask> masks;
    for (const auto& s : layout.subjects) {
        require_mask_fits(s.mask, x_layout.shape(), "make_branch_latents");
        masks.push_back(s.mask);
    }
    std::vector<Latent> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const Latent& eps = noise.size() == 1 ? noise[0] : noise[i];
        if (strategy == SubjectStrategy::B) {
            out.push_back(blend_masked(eps, x_layout, masks[i]));
        } else {
            Mask others(x_layout.shape().height, x_layout.shape().width, false);
            for (std::size_t n = 0; n < k; ++n) {
                if (n != i) others = others | masks[n];
            }
            out.push_back(blend_masked(x_layout, eps, others));
        }
    }
    return out;
}

RevisionResult revise_subjects(const PromptPlan& plan, const SubjectLayout& layout,
                               const DiffusionSetup& setup, const SamplingOptions& opts,
                               const RevisionOptions& ropts) {
    check_setup(setup, opts);
    plan.validate_subject_plan();
    const std::size_t k = plan.subjects.size();
    layout.validate(opts.shape, k);

    const double scale = opts.guidance.scale;
    const Guide joint = cfg_guide(plan.unconditional, *plan.joint, scale);
    std::vector<Guide> guides{joint};
    for (const auto& s : plan.subjects) guides.push_back(subject_guide(plan.unconditional, s, scale));

    const std::size_t n = setup.steps.size();
    const std::size_t lay = setup.steps.layout_index;

    // Phase 1: the joint trajectory, identical to sample_joint for this seed.
    Latent x = run_loop(initial_latent(opts.seed, opts.shape), joint, setup, opts, 0, lay, Phase::joint);

    RevisionResult result;
    result.at_layout = x;

    std::vector<Latent> noise;
    if (ropts.per_branch_noise) {
        for (std::size_t i = 0; i < k; ++i) {
            noise.push_back(sample_gaussian(
                {opts.seed, streams::kBranchReplacement + static_cast<std::int64_t>(i), 0}, opts.shape));
        }
    } else {
        noise.push_back(sample_gaussian({opts.seed, streams::kReplacement, 0}, opts.shape));
    }
    std::vector<Latent> branches = make_branch_latents(x, layout, ropts.strategy, noise);

    std::vector<Mask> others;
    if (ropts.strategy == SubjectStrategy::C) {
        for (std::size_t i = 0; i < k; ++i) {
            Mask o(opts.shape.height, opts.shape.width, false);
            for (std::size_t m = 0; m < k; ++m) {
                if (m != i) o = o | layout.subjects[m].mask;
            }
            others.push_back(std::move(o));
        }
    }

    std::vector<Region> regions(k);
    for (std::size_t s = lay; s < n; ++s) {
        const int t = setup.steps.timesteps[s];
        const int t_prev = setup.steps.prev(s);

        if (ropts.strategy == SubjectStrategy::C && s > lay) {
            for (std::size_t i = 0; i < k; ++i) {
                const std::int64_t id = streams::kBranchRefresh + (ropts.per_branch_noise ? 1 + static_cast<std::int64_t>(i) : 0);
                const Latent fresh = sample_gaussian({opts.seed, id, static_cast<std::int64_t>(s)}, opts.shape);
                branches[i] = blend_masked(branches[i], fresh, others[i]);
            }
        }

        const Denoiser& den = select_denoiser(setup.denoisers, s);
        std::vector<const Latent*> lat{&x};
        for (const auto& b : branches) lat.push_back(&b);
        std::vector<Latent> eps = evaluate_guides(den, guides, lat, t, opts.concurrent);

        for (std::size_t i = 0; i < k; ++i) regions[i] = {&eps[i + 1], &layout.subjects[i].mask};
        const Latent eps_hat = compose_regions(eps[0], regions);

        if (opts.observer) {
            opts.observer(StepRecord{Phase::isolated, s, t, t_prev, x, eps_hat, &eps[0], branches,
                                     std::span<const Latent>(eps).subspan(1)});
        }

        const RngStream stream = ancestral_stream(opts.seed, s);
        for (std::size_t i = 0; i < k; ++i) {
            branches[i] = sampler_step(branches[i], eps[i + 1], t, t_prev, setup.schedule, opts.sampler, &stream);
        }
        x = sampler_step(x, eps_hat, t, t_prev, setup.schedule, opts.sampler, &stream);
    }

    result.output = std::move(x);
    result.branches = std::move(branches);
    return result;
}

Latent multidiffusion_baseline(const PromptPlan& plan, const SubjectLayout& layout,
                               const DiffusionSetup& setup, const SamplingOptions& opts) {
    check_setup(setup, opts);
    plan.validate_subject_plan();
    const std::size_t k = plan.subjects.size();
    if (layout.size() != k) throw LayoutError("layout/subject count mismatch");
    for (const auto& s : layout.subjects) require_mask_fits(s.mask, opts.shape, "multidiffusion");

    const double scale = opts.guidance.scale;
    std::vector<Guide> guides{cfg_guide(plan.unconditional, *plan.joint, scale)};
    for (const auto& s : plan.subjects) guides.push_back(subject_guide(plan.unconditional, s, scale));

    const Mask covered = layout.union_mask();
    const std::size_t plane = opts.shape.plane();
    Latent x = initial_latent(opts.seed, opts.shape);
    for (std::size_t s = 0; s < setup.steps.size(); ++s) {
        const int t = setup.steps.timesteps[s];
        const int t_prev = setup.steps.prev(s);
        const Denoiser& den = select_denoiser(setup.denoisers, s);
        std::vector<const Latent*> lat(guides.size(), &x);
        const std::vector<Latent> eps = evaluate_guides(den, guides, lat, t, opts.concurrent);

        Latent fused(opts.shape);
        for (std::size_t p = 0; p < plane; ++p) {
            const double bg = covered[p] ? 0.0 : 1.0;
            double wsum = bg;
            for (std::size_t i = 0; i < k; ++i) wsum += layout.subjects[i].mask[p] ? 1.0 : 0.0;
            for (int c = 0; c < opts.shape.channels; ++c) {
                const std::size_t idx = static_cast<std::size_t>(c) * plane + p;
                double acc = bg * eps[0][idx];
                for (std::size_t i = 0; i < k; ++i) {
                    if (layout.subjects[i].mask[p]) acc += eps[i + 1][idx];
                }
                fused[idx] = static_cast<float>(acc / wsum);
            }
        }
        if (opts.observer) opts.observer(StepRecord{Phase::joint, s, t, t_prev, x, fused, &eps[0]});
        const RngStream stream = ancestral_stream(opts.seed, s);
        x = sampler_step(x, fused, t, t_prev, setup.schedule, opts.sampler, &stream);
    }
    return x;
}

namespace {

json detections_json(const std::vector<Detection>& dets) {
    json arr = json::array();
    for (const auto& d : dets) {
        arr.push_back({{"label", d.label},
                       {"confidence", d.confidence},
                       {"bbox", {d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1}}});
    }
    return arr;
}

std::string subject_text(const SubjectPrompt& s) {
    return s.prompt.text.empty() ? s.prompt.id : s.prompt.text;
}

}  // namespace

RevisionOutcome end_to_end_revision(const RevisionRequest& req, const DiffusionSetup& setup,
                                    const SamplingOptions& opts) {
    using clock = std::chrono::steady_clock;
    req.plan.validate_subject_plan();
    const auto t_start = clock::now();
    auto ms_since = [](clock::time_point a) {
        return std::chrono::duration<double, std::milli>(clock::now() - a).count();
    };

    RevisionOutcome outcome;
    json& report = outcome.report;
    report["seed"] = opts.seed;
    report["guidance_scale"] = opts.guidance.scale;
    report["steps"] = setup.steps.size();
    json timings;

    outcome.original = sample_joint(req.plan, setup, opts);
    if (req.record_timings) timings["joint_ms"] = ms_since(t_start);

    std::optional<SidecarClient> sidecar;
    if (req.sources.sidecar) sidecar.emplace(*req.sources.sidecar);

    std::optional<std::vector<Detection>> detections = req.detections;
    if (!detections && sidecar) {
        const auto t0 = clock::now();
        detections = sidecar->detect(outcome.original);
        if (req.record_timings) timings["detect_ms"] = ms_since(t0);
    }

    if (detections) {
        const BleedVerdict verdict = bleed_check(*detections, req.policy);
        report["detections"] = detections_json(*detections);
        report["verdict"] = verdict.summary();
        if (verdict.consistent) {
            report["decision"] = "unchanged";
            outcome.output = outcome.original;
            if (req.record_timings) report["timings_ms"] = timings;
            return outcome;
        }
    } else {
        report["verdict"] = "no detector configured; revision requested";
    }

    const Shape& shape = opts.shape;
    SubjectLayout layout;
    std::string source;
    std::vector<std::string> prompts;
    for (const auto& s : req.plan.subjects) prompts.push_back(subject_text(s));

    if (!req.sources.file_masks.empty()) {
        std::vector<Mask> masks;
        for (const auto& m : req.sources.file_masks) masks.push_back(downsample_mask(m, shape.height, shape.width));
        layout = layout_from_masks(masks, req.plan.subjects.size(), req.sources.assignment);
        source = "file";
    } else if (sidecar && detections) {
        const auto t0 = clock::now();
        std::vector<Point> points;
        for (const auto& d : *detections) points.push_back(bbox_center(d.bbox, shape.height, shape.width));
        std::vector<Mask> masks = sidecar->segment(outcome.original, points);
        for (auto& m : masks) m = downsample_mask(m, shape.height, shape.width);
        layout = assign_masks(*detections, masks, prompts, req.sources.assignment);
        source = "sidecar";
        if (req.record_timings) timings["segment_ms"] = ms_since(t0);
    } else if (req.sources.allow_bbox && detections) {
        std::vector<Mask> masks;
        for (const auto& d : *detections) masks.push_back(rasterize_bbox(d.bbox, shape.height, shape.width));
        layout = assign_masks(*detections, masks, prompts, req.sources.assignment);
        source = "bbox";
    } else {
        throw ValidationError("concept bleeding needs subject masks: provide --masks or --sidecar");
    }

    json assignment = json::array();
    for (const auto& s : layout.subjects) {
        assignment.push_back({{"subject", s.subject},
                              {"subject_id", req.plan.subjects[s.subject].prompt.id},
                              {"mask", s.mask_source},
                              {"pixels", s.mask.count()}});
    }
    report["mask_source"] = source;
    report["assignment"] = assignment;
    report["strategy"] = std::string(to_string(req.revision.strategy));
    report["layout_index"] = setup.steps.layout_index;
    report["t_lay_step"] = setup.steps.layout_index < setup.steps.size()
                               ? setup.steps.timesteps[setup.steps.layout_index]
                               : 0;

    const auto t0 = clock::now();
    RevisionResult rev = revise_subjects(req.plan, layout, setup, opts, req.revision);
    if (req.record_timings) {
        timings["revise_ms"] = ms_since(t0);
        timings["total_ms"] = ms_since(t_start);
        report["timings_ms"] = timings;
    }
    report["decision"] = "revised";
    outcome.revised = true;
    outcome.output = std::move(rev.output);
    return outcome;
}

}  // namespace isoguide
