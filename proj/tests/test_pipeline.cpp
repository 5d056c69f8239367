#include <doctest.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <set>

#include "isoguide/errors.hpp"
#include "isoguide/guidance.hpp"
#include "isoguide/pipeline.hpp"
#include "isoguide/rng.hpp"
#include "isoguide/toyworld.hpp"
#include "support/fake_sidecar.hpp"

using namespace isoguide;

namespace {

const NoiseSchedule& sched() {
    static const NoiseSchedule s = make_noise_schedule(1000);
    return s;
}

DiffusionSetup make_setup(DenoiserPtr den, int t_lay = 750, double refiner_fraction = 0.0, DenoiserPtr refiner = {}) {
    DiffusionSetup s;
    s.schedule = sched();
    s.steps = make_step_plan(1000, 50, t_lay, refiner_fraction);
    s.denoisers = {std::move(den), std::move(refiner), s.steps.refiner_index};
    return s;
}

SamplingOptions options(Shape shape, GuidanceKind kind, double scale, std::uint64_t seed) {
    SamplingOptions o;
    o.shape = shape;
    o.guidance = {kind, scale, {}};
    o.seed = seed;
    return o;
}

double linf(const Latent& a, const Latent& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
    return m;
}

bool equal_on(const Latent& a, const Latent& b, const Mask& m) {
    const std::size_t plane = a.shape().plane();
    for (std::size_t p = 0; p < plane; ++p) {
        if (!m[p]) continue;
        for (int c = 0; c < a.shape().channels; ++c) {
            const std::size_t i = static_cast<std::size_t>(c) * plane + p;
            if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(float)) != 0) return false;
        }
    }
    return true;
}

// Records which (step, condition) pairs reached the wrapped denoiser.
class Recording final : public Denoiser {
public:
    explicit Recording(DenoiserPtr inner) : inner_(std::move(inner)) {}
    Latent predict_eps(const Latent& x, int t, const Condition& c) const override {
        std::lock_guard<std::mutex> lock(mu_);
        seen.insert({t, c.id});
        ++calls;
        return inner_->predict_eps(x, t, c);
    }
    std::string name() const override { return "recording"; }

    mutable std::set<std::pair<int, std::string>> seen;
    mutable int calls = 0;

private:
    DenoiserPtr inner_;
    mutable std::mutex mu_;
};

toy::SubjectScene two_subjects(std::uint64_t seed = 3) {
    return toy::build_subject_scene(toy::generate_subject_spec(seed, 2));
}

}  // namespace

TEST_CASE("prompt list parsing") {
    const PromptPlan a = parse_attachment_prompt_list("A baby penguin, a blue hat , a red scarf");
    CHECK(a.base->text == "A baby penguin");
    REQUIRE(a.attachments.size() == 2);
    CHECK(a.attachments[0].id == "attach1");
    CHECK(a.attachments[0].text == "a blue hat");
    CHECK_NOTHROW(a.validate_attachment_plan());
    CHECK(a.unconditional.id == "ucon");

    const PromptPlan s = parse_subject_prompt_list("a cat, a dog", "a cat and a dog");
    CHECK(s.joint->text == "a cat and a dog");
    REQUIRE(s.subjects.size() == 2);
    CHECK(s.subjects[1].prompt.id == "subject2");
    CHECK_NOTHROW(s.validate_subject_plan());

    CHECK_THROWS_AS(parse_attachment_prompt_list(""), ValidationError);
    CHECK_THROWS_AS(parse_subject_prompt_list("a cat,,a dog", "x"), ValidationError);
    CHECK_THROWS_AS(PromptPlan{}.validate_attachment_plan(), ValidationError);
    PromptPlan dup = s;
    dup.subjects[1].prompt.id = "subject1";
    CHECK_THROWS_AS(dup.validate_subject_plan(), ValidationError);
    CHECK(parse_strategy("b") == SubjectStrategy::B);
    CHECK_THROWS_AS(parse_strategy("D"), ValidationError);
}

TEST_CASE("sample_joint converges to the conditional and unconditional templates") {
    const Shape sh{3, 6, 6};
    const Latent tu = sample_gaussian({1, 5, 0}, sh), tc = sample_gaussian({1, 6, 0}, sh);
    const DiffusionSetup setup = make_setup(make_template_denoiser({{"u", tu}, {"c", tc}}, sched()));
    PromptPlan plan;
    plan.unconditional = {"u", ""};
    plan.joint = Condition{"c", "c"};
    const Latent one = sample_joint(plan, setup, options(sh, GuidanceKind::cfg, 1.0, 4));
    CHECK(linf(one, tc) < 1e-3);
    CHECK(linf(sample_joint(plan, setup, options(sh, GuidanceKind::cfg, 0.0, 4)), tu) < 1e-3);
    CHECK(sample_joint(plan, setup, options(sh, GuidanceKind::cfg, 1.0, 4)).bitwise_equal(one));
    CHECK_FALSE(sample_joint(plan, setup, options(sh, GuidanceKind::cfg, 1.0, 5)).bitwise_equal(one));
}

TEST_CASE("sample_attachments examples") {
    const toy::AttachScene sc = toy::build_attach_scene(toy::generate_attach_spec(8, 3));
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    for (double lam : {1.0, 5.0}) {
        const auto opts = options(sc.scene.shape, GuidanceKind::isolated_attach, lam, 2);
        const Latent out = sample_attachments(sc.plan, setup, opts);
        CHECK(toy::rmse(out, toy::oracle_effective_template(sc.plan, sc.scene, opts.guidance)) < 1e-2);
    }
    const Latent lam1 = sample_attachments(sc.plan, setup, options(sc.scene.shape, GuidanceKind::isolated_attach, 1.0, 2));
    CHECK(toy::rmse(lam1, sc.target) < 1e-2);

    PromptPlan bare = sc.plan;
    bare.attachments.clear();
    PromptPlan as_joint;
    as_joint.unconditional = sc.plan.unconditional;
    as_joint.joint = sc.plan.base;
    const auto opts = options(sc.scene.shape, GuidanceKind::cfg, 5.0, 9);
    CHECK(sample_attachments(bare, setup, opts).bitwise_equal(sample_joint(as_joint, setup, opts)));
}

TEST_CASE("make_branch_latents examples") {
    const Shape sh{2, 4, 4};
    const Latent x = sample_gaussian({2, 0, 0}, sh), noise = sample_gaussian({2, 1, 0}, sh);
    const std::vector<Latent> nz{noise};
    Mask left(4, 4), right(4, 4);
    for (int y = 0; y < 4; ++y) {
        left.set(y, 0, true);
        right.set(y, 3, true);
    }
    SubjectLayout one;
    one.subjects.push_back({0, 0, left});
    CHECK(make_branch_latents(x, one, SubjectStrategy::A, nz)[0].bitwise_equal(x));

    SubjectLayout two = one;
    two.subjects.push_back({1, 1, right});
    const auto br = make_branch_latents(x, two, SubjectStrategy::A, nz);
    CHECK(equal_on(br[0], x, ~right));
    CHECK(equal_on(br[0], noise, right));
    CHECK(equal_on(br[1], noise, left));
    CHECK(equal_on(br[1], x, ~left));
    const auto brc = make_branch_latents(x, two, SubjectStrategy::C, nz);
    CHECK(brc[0].bitwise_equal(br[0]));

    const auto brb = make_branch_latents(x, two, SubjectStrategy::B, nz);
    CHECK(equal_on(brb[0], x, left));
    CHECK(equal_on(brb[0], noise, ~left));

    SubjectLayout full;
    full.subjects.push_back({0, 0, Mask(4, 4, true)});
    CHECK(make_branch_latents(x, full, SubjectStrategy::B, nz)[0].bitwise_equal(x));

    const std::vector<Latent> per{noise, x};
    CHECK(equal_on(make_branch_latents(x, two, SubjectStrategy::A, per)[1], x, left));
    CHECK_THROWS(make_branch_latents(x, two, SubjectStrategy::A, std::vector<Latent>{noise, noise, noise}));
}

TEST_CASE("revise_subjects region equality for every strategy and sampler") {
    const toy::SubjectScene sc = two_subjects();
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    for (SamplerMode mode : {SamplerMode::deterministic, SamplerMode::ancestral}) {
        for (SubjectStrategy st : {SubjectStrategy::A, SubjectStrategy::B, SubjectStrategy::C}) {
            for (bool per_branch : {false, true}) {
                auto opts = options(sc.scene.shape, GuidanceKind::cfg, 5.0, 17);
                opts.sampler = mode;
                const RevisionResult r = revise_subjects(sc.plan, sc.layout, setup, opts, {st, per_branch});
                for (std::size_t i = 0; i < 2; ++i) CHECK(equal_on(r.output, r.branches[i], sc.layout.subjects[i].mask));
            }
        }
    }
}

TEST_CASE("isolated phase combines predictions per region") {
    const toy::SubjectScene sc = two_subjects(5);
    const auto den = make_template_denoiser(sc.scene.templates, sched());
    const DiffusionSetup setup = make_setup(den);
    auto opts = options(sc.scene.shape, GuidanceKind::cfg, 5.0, 21);
    const Mask covered = sc.layout.union_mask();
    int isolated_steps = 0;
    opts.observer = [&](const StepRecord& r) {
        if (r.phase != Phase::isolated) return;
        ++isolated_steps;
        const Latent bg = cfg_combine(den->predict_eps(r.x, r.t, sc.plan.unconditional),
                                      den->predict_eps(r.x, r.t, *sc.plan.joint), 5.0);
        CHECK(equal_on(r.eps_hat, bg, ~covered));
        REQUIRE(r.eps_joint != nullptr);
        CHECK(r.eps_joint->bitwise_equal(bg));
        REQUIRE(r.branch_eps.size() == 2);
        for (std::size_t i = 0; i < 2; ++i) {
            const Latent mine = cfg_combine(den->predict_eps(r.branches[i], r.t, sc.plan.unconditional),
                                            den->predict_eps(r.branches[i], r.t, sc.plan.subjects[i].prompt), 5.0);
            CHECK(r.branch_eps[i].bitwise_equal(mine));
            CHECK(equal_on(r.eps_hat, mine, sc.layout.subjects[i].mask));
        }
    };
    revise_subjects(sc.plan, sc.layout, setup, opts);
    CHECK(isolated_steps == static_cast<int>(setup.steps.size() - setup.steps.layout_index));
}

TEST_CASE("phase one replays the joint trajectory") {
    const toy::SubjectScene sc = two_subjects(6);
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    for (SamplerMode mode : {SamplerMode::deterministic, SamplerMode::ancestral}) {
        std::vector<Latent> joint_traj, revise_traj;
        auto opts = options(sc.scene.shape, GuidanceKind::cfg, 5.0, 8);
        opts.sampler = mode;
        opts.observer = [&](const StepRecord& r) { joint_traj.push_back(r.x); };
        sample_joint(sc.plan, setup, opts);
        opts.observer = [&](const StepRecord& r) {
            if (r.phase == Phase::joint) revise_traj.push_back(r.x);
        };
        const RevisionResult res = revise_subjects(sc.plan, sc.layout, setup, opts);
        REQUIRE(revise_traj.size() == setup.steps.layout_index);
        for (std::size_t i = 0; i < revise_traj.size(); ++i) CHECK(revise_traj[i].bitwise_equal(joint_traj[i]));
        CHECK(res.at_layout.bitwise_equal(joint_traj[setup.steps.layout_index]));
    }
}

TEST_CASE("single subject with a full mask follows its own prompt from the branch state") {
    const toy::SubjectScene sc = toy::build_subject_scene(toy::generate_subject_spec(4, 1));
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    SubjectLayout full;
    full.subjects.push_back({0, 0, Mask(16, 16, true)});
    const auto opts = options(sc.scene.shape, GuidanceKind::cfg, 5.0, 12);
    const RevisionResult r = revise_subjects(sc.plan, full, setup, opts);
    const Latent ref = denoise_range(r.at_layout, sc.plan.unconditional, sc.plan.subjects[0].prompt, setup, opts,
                                     setup.steps.layout_index, setup.steps.size());
    CHECK(r.output.bitwise_equal(ref));
    CHECK(r.branches[0].bitwise_equal(ref));
}

TEST_CASE("masks covering the whole canvas leave no background term") {
    const toy::SubjectScene sc = two_subjects(7);
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    Mask left(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 8; ++x) left.set(y, x, true);
    SubjectLayout halves;
    halves.subjects.push_back({0, 0, left});
    halves.subjects.push_back({1, 1, ~left});
    const RevisionResult r = revise_subjects(sc.plan, halves, setup, options(sc.scene.shape, GuidanceKind::cfg, 1.0, 3));
    CHECK(equal_on(r.output, r.branches[0], left));
    CHECK(equal_on(r.output, r.branches[1], ~left));
    CHECK(toy::region_rmse(r.output, sc.scene.templates.at("subject1"), left) < 1e-2);
}

TEST_CASE("revision fixes a bleeding scene") {
    const toy::SubjectScene sc = two_subjects(9);
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    const auto opts = options(sc.scene.shape, GuidanceKind::cfg, 1.0, 30);
    const Latent joint = sample_joint(sc.plan, setup, opts);
    const Latent revised = revise_subjects(sc.plan, sc.layout, setup, opts).output;
    for (std::size_t i = 0; i < 2; ++i) {
        const Latent& tau = sc.scene.templates.at(sc.plan.subjects[i].prompt.id);
        CHECK(toy::region_rmse(joint, tau, sc.layout.subjects[i].mask) > 0.1);
        CHECK(toy::region_rmse(revised, tau, sc.layout.subjects[i].mask) < 1e-2);
    }
}

TEST_CASE("nested subject plans use isolated attachment guidance in the branch") {
    const toy::AttachScene att = toy::build_attach_scene(toy::generate_attach_spec(10, 2));
    // One subject whose prompt is the attachment base; the joint prompt bleeds.
    PromptPlan plan;
    plan.unconditional = att.plan.unconditional;
    plan.joint = att.joint;
    plan.subjects.push_back({*att.plan.base, att.plan.attachments});
    SubjectLayout full;
    full.subjects.push_back({0, 0, Mask(16, 16, true)});
    const DiffusionSetup setup = make_setup(make_template_denoiser(att.scene.templates, sched()));
    const RevisionResult r = revise_subjects(plan, full, setup, options(att.scene.shape, GuidanceKind::cfg, 1.0, 6));
    CHECK(toy::rmse(r.output, att.target) < 1e-2);
}

TEST_CASE("refiner handles the final steps of every trajectory") {
    const toy::SubjectScene sc = two_subjects(11);
    const auto base = std::make_shared<Recording>(make_template_denoiser(sc.scene.templates, sched()));
    const auto refiner = std::make_shared<Recording>(make_template_denoiser(sc.scene.templates, sched()));
    const DiffusionSetup setup = make_setup(base, 750, 0.1, refiner);
    revise_subjects(sc.plan, sc.layout, setup, options(sc.scene.shape, GuidanceKind::cfg, 5.0, 1));
    CHECK(refiner->calls == 5 * 6);
    for (const auto& [t, id] : refiner->seen) CHECK(t <= 100);
    for (const auto& [t, id] : base->seen) CHECK(t > 100);
    for (const char* id : {"ucon", "joint", "subject1", "subject2"}) {
        CHECK(refiner->seen.count({20, id}) == 1);
    }
}

TEST_CASE("strategy C refreshes other-subject regions each step") {
    const toy::SubjectScene sc = two_subjects(12);
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    auto opts = options(sc.scene.shape, GuidanceKind::cfg, 5.0, 14);
    std::vector<Latent> c_branch0;
    opts.observer = [&](const StepRecord& r) {
        if (r.phase == Phase::isolated) c_branch0.push_back(r.branches[0]);
    };
    const RevisionResult rc = revise_subjects(sc.plan, sc.layout, setup, opts, {SubjectStrategy::C, false});
    opts.observer = nullptr;
    const RevisionResult ra = revise_subjects(sc.plan, sc.layout, setup, opts, {SubjectStrategy::A, false});
    const Mask& other = sc.layout.subjects[1].mask;
    // After the first isolated step the other region holds fresh keyed noise.
    for (std::size_t j = 1; j < c_branch0.size(); ++j) {
        const Latent fresh = sample_gaussian(
            {14, streams::kBranchRefresh, static_cast<std::int64_t>(setup.steps.layout_index + j)}, sc.scene.shape);
        CHECK(equal_on(c_branch0[j], fresh, other));
    }
    // A pointwise denoiser never looks outside the mask, so only branches differ.
    CHECK(rc.output.bitwise_equal(ra.output));
    CHECK_FALSE(rc.branches[0].bitwise_equal(ra.branches[0]));
}

TEST_CASE("multidiffusion baseline reductions") {
    const toy::SubjectScene sc = toy::build_subject_scene(toy::generate_subject_spec(13, 1));
    const auto den = make_template_denoiser(sc.scene.templates, sched());
    const DiffusionSetup setup = make_setup(den);
    const auto opts = options(sc.scene.shape, GuidanceKind::cfg, 5.0, 2);
    SubjectLayout full;
    full.subjects.push_back({0, 0, Mask(16, 16, true)});
    PromptPlan single;
    single.unconditional = sc.plan.unconditional;
    single.joint = sc.plan.subjects[0].prompt;
    CHECK(multidiffusion_baseline(sc.plan, full, setup, opts).bitwise_equal(sample_joint(single, setup, opts)));

    // With disjoint masks the weighted average is a branch-free region selection.
    const toy::SubjectScene two = two_subjects(14);
    const auto den2 = make_template_denoiser(two.scene.templates, sched());
    const DiffusionSetup setup2 = make_setup(den2);
    Latent x = initial_latent(2, two.scene.shape);
    for (std::size_t s = 0; s < setup2.steps.size(); ++s) {
        const int t = setup2.steps.timesteps[s];
        auto cfg = [&](const Condition& c) {
            return cfg_combine(den2->predict_eps(x, t, two.plan.unconditional), den2->predict_eps(x, t, c), 5.0);
        };
        const Latent e0 = cfg(*two.plan.joint), e1 = cfg(two.plan.subjects[0].prompt), e2 = cfg(two.plan.subjects[1].prompt);
        const Region regs[] = {{&e1, &two.layout.subjects[0].mask}, {&e2, &two.layout.subjects[1].mask}};
        x = sampler_step(x, compose_regions(e0, regs), t, setup2.steps.prev(s), sched(), SamplerMode::deterministic);
    }
    CHECK(multidiffusion_baseline(two.plan, two.layout, setup2, opts).bitwise_equal(x));
}

TEST_CASE("revision beats multidiffusion on an interference scene") {
    const toy::SubjectScene sc = two_subjects(15);
    const auto den = std::make_shared<toy::InterferenceDenoiser>(sc.scene.templates, sched(), 0.5);
    const DiffusionSetup setup = make_setup(den);
    const auto opts = options(sc.scene.shape, GuidanceKind::cfg, 1.0, 4);
    const Latent rev = revise_subjects(sc.plan, sc.layout, setup, opts).output;
    const Latent md = multidiffusion_baseline(sc.plan, sc.layout, setup, opts);
    for (std::size_t i = 0; i < 2; ++i) {
        const Latent& tau = sc.scene.templates.at(sc.plan.subjects[i].prompt.id);
        const Mask& m = sc.layout.subjects[i].mask;
        CHECK(toy::region_rmse(rev, tau, m) < toy::region_rmse(md, tau, m));
    }
}

TEST_CASE("serial and concurrent execution agree bitwise") {
    const toy::SubjectScene sc = two_subjects(16);
    const toy::AttachScene att = toy::build_attach_scene(toy::generate_attach_spec(16, 3));
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    const DiffusionSetup asetup = make_setup(make_template_denoiser(att.scene.templates, sched()));
    for (SamplerMode mode : {SamplerMode::deterministic, SamplerMode::ancestral}) {
        auto opts = options(sc.scene.shape, GuidanceKind::cfg, 5.0, 99);
        opts.sampler = mode;
        auto conc = opts;
        conc.concurrent = true;
        for (SubjectStrategy st : {SubjectStrategy::A, SubjectStrategy::C}) {
            CHECK(revise_subjects(sc.plan, sc.layout, setup, opts, {st, true})
                      .output.bitwise_equal(revise_subjects(sc.plan, sc.layout, setup, conc, {st, true}).output));
        }
        CHECK(multidiffusion_baseline(sc.plan, sc.layout, setup, opts)
                  .bitwise_equal(multidiffusion_baseline(sc.plan, sc.layout, setup, conc)));
        auto aopts = options(att.scene.shape, GuidanceKind::isolated_attach, 5.0, 99);
        aopts.sampler = mode;
        auto aconc = aopts;
        aconc.concurrent = true;
        CHECK(sample_attachments(att.plan, asetup, aopts).bitwise_equal(sample_attachments(att.plan, asetup, aconc)));
    }
}

TEST_CASE("pipelines reject inconsistent inputs") {
    const toy::SubjectScene sc = two_subjects(17);
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    const auto opts = options(sc.scene.shape, GuidanceKind::cfg, 5.0, 1);
    SubjectLayout one;
    one.subjects.push_back(sc.layout.subjects[0]);
    CHECK_THROWS_AS(revise_subjects(sc.plan, one, setup, opts), LayoutError);
    SubjectLayout empty = sc.layout;
    empty.subjects[1].mask = Mask(16, 16, false);
    CHECK_THROWS_AS(revise_subjects(sc.plan, empty, setup, opts), LayoutError);
    auto wrong = opts;
    wrong.shape = {3, 8, 8};
    CHECK_THROWS(revise_subjects(sc.plan, sc.layout, setup, wrong));
    PromptPlan missing = sc.plan;
    missing.subjects[0].prompt.id = "nobody";
    CHECK_THROWS_AS(revise_subjects(missing, sc.layout, setup, opts), ConditionError);
}

TEST_CASE("end-to-end revision decisions") {
    const toy::SubjectScene sc = two_subjects(18);
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    const auto opts = options(sc.scene.shape, GuidanceKind::cfg, 1.0, 5);
    RevisionRequest req;
    req.plan = sc.plan;
    req.policy.expected_labels = {"square", "square"};

    req.detections = std::vector<Detection>{{"square", 0.9, {0, 0, 4, 4}}, {"square", 0.8, {4, 4, 8, 8}}};
    const RevisionOutcome same = end_to_end_revision(req, setup, opts);
    CHECK_FALSE(same.revised);
    CHECK(same.output.bitwise_equal(same.original));
    CHECK(same.original.bitwise_equal(sample_joint(sc.plan, setup, opts)));
    CHECK(same.report.at("decision") == "unchanged");
    CHECK_FALSE(same.report.contains("timings_ms"));

    req.detections = std::vector<Detection>{{"square", 0.9, {0, 0, 16, 16}}};
    try {
        end_to_end_revision(req, setup, opts);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("provide --masks or --sidecar") != std::string::npos);
    }

    for (const auto& s : sc.layout.subjects) req.sources.file_masks.push_back(s.mask);
    const RevisionOutcome fixed = end_to_end_revision(req, setup, opts);
    CHECK(fixed.revised);
    CHECK(fixed.report.at("decision") == "revised");
    CHECK(fixed.report.at("mask_source") == "file");
    CHECK(fixed.report.at("assignment").size() == 2);
    CHECK(fixed.output.bitwise_equal(revise_subjects(sc.plan, sc.layout, setup, opts).output));

    req.record_timings = true;
    CHECK(end_to_end_revision(req, setup, opts).report.contains("timings_ms"));
}

TEST_CASE("end-to-end revision with bounding-box masks") {
    const toy::SubjectScene sc = two_subjects(19);
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    const auto opts = options(sc.scene.shape, GuidanceKind::cfg, 1.0, 5);
    RevisionRequest req;
    req.plan = parse_subject_prompt_list("a red-blob, a blue-blob", "both");
    req.plan.unconditional = sc.plan.unconditional;
    req.plan.joint = sc.plan.joint;
    req.policy.expected_labels = {"red-blob", "blue-blob"};
    req.detections = std::vector<Detection>{{"red-blob", 0.9, {0, 0, 2, 2}}, {"blue-blob", 0.3, {8, 0, 10, 2}}};
    CHECK_THROWS_AS(end_to_end_revision(req, setup, opts), ValidationError);
    req.sources.allow_bbox = true;
    const RevisionOutcome out = end_to_end_revision(req, setup, opts);
    CHECK(out.revised);
    CHECK(out.report.at("mask_source") == "bbox");
    CHECK(out.report.at("verdict").get<std::string>().find("low confidence") != std::string::npos);
}

TEST_CASE("end-to-end revision through the sidecar") {
    // Dark canvas: red subject and a blue subject that carries some red. The
    // bleeding joint swaps the red channel, so both subjects read as red.
    toy::SubjectSceneSpec spec;
    spec.background = {0.05f, 0.05f, 0.05f};
    spec.subjects = {{{2, 3, 7, 12}, {0.9f, 0.05f, 0.05f}}, {{9, 2, 14, 13}, {0.6f, 0.05f, 0.9f}}};
    const toy::SubjectScene sc = toy::build_subject_scene(spec);
    const DiffusionSetup setup = make_setup(make_template_denoiser(sc.scene.templates, sched()));
    const auto opts = options(sc.scene.shape, GuidanceKind::cfg, 1.0, 7);

    fake::Sidecar sidecar;
    RevisionRequest req;
    req.plan = sc.plan;
    req.plan.subjects[0].prompt.text = "a red-blob";
    req.plan.subjects[1].prompt.text = "a blue-blob";
    req.policy.expected_labels = {"red-blob", "blue-blob"};
    req.sources.sidecar = sidecar.endpoint();

    // Both detections say red, so the blue subject has no label match.
    CHECK_THROWS_AS(end_to_end_revision(req, setup, opts), LayoutError);

    // Detections arrive in scan order: the blue subject starts on a higher row.
    req.sources.assignment = parse_assignment("0:1,1:0");
    const RevisionOutcome out = end_to_end_revision(req, setup, opts);
    CHECK(out.revised);
    CHECK(out.report.at("mask_source") == "sidecar");
    CHECK(out.report.at("detections").size() == 2);
    CHECK(out.report.at("verdict").get<std::string>().find("blue-blob") != std::string::npos);
    for (std::size_t i = 0; i < 2; ++i) {
        const Latent& tau = sc.scene.templates.at(sc.plan.subjects[i].prompt.id);
        CHECK(toy::region_rmse(out.output, tau, sc.layout.subjects[i].mask) < 1e-2);
    }
}
