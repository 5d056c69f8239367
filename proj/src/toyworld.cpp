#include "isoguide/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <future>
#include <numeric>

#include "isoguide/errors.hpp"
#include "isoguide/rng.hpp"

namespace isoguide::toy {

using nlohmann::json;

namespace {

Latent flat(const Shape& s, const Color& c) {
    Latent out(s);
    for (int ch = 0; ch < s.channels; ++ch)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) out.at(ch, y, x) = c[static_cast<std::size_t>(ch % 3)];
    return out;
}

void paint(Latent& img, const Rect& r, const Color& c) {
    for (int ch = 0; ch < img.shape().channels; ++ch)
        for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x) img.at(ch, y, x) = c[static_cast<std::size_t>(ch % 3)];
}

Color add(const Color& a, const Color& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }

void check_rect(const Rect& r, const Shape& s, const char* what) {
    if (!(r.x0 < r.x1 && r.y0 < r.y1) || r.x0 < 0 || r.y0 < 0 || r.x1 > s.width || r.y1 > s.height) {
        throw ValidationError(std::string(what) + " rectangle is empty or outside the canvas");
    }
}

bool inside(const Rect& inner, const Rect& outer) {
    return inner.x0 >= outer.x0 && inner.y0 >= outer.y0 && inner.x1 <= outer.x1 && inner.y1 <= outer.y1;
}

Mask rect_mask(const Rect& r, const Shape& s) {
    Mask m(s.height, s.width, false);
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) m.set(y, x, true);
    return m;
}

const Latent& tmpl(const ToyScene& scene, const Condition& c) {
    auto it = scene.templates.find(c.id);
    if (it == scene.templates.end()) throw ConditionError("no template for condition '" + c.id + "'");
    return it->second;
}

// Draws an integer in [lo, hi] from the stream.
int uniform_int(const RngStream& s, std::uint64_t& counter, int lo, int hi) {
    const double u = s.uniform(counter++);
    return lo + std::min(hi - lo, static_cast<int>(u * (hi - lo + 1)));
}

double uniform_real(const RngStream& s, std::uint64_t& counter, double lo, double hi) {
    return lo + (hi - lo) * s.uniform(counter++);
}

}  // namespace

AttachScene build_attach_scene(const AttachSceneSpec& spec) {
    const Shape& s = spec.shape;
    if (!s.valid()) throw ShapeError("canvas dims must be positive");
    check_rect(spec.subject, s, "subject");
    for (std::size_t i = 0; i < spec.attachments.size(); ++i) {
        const auto& a = spec.attachments[i];
        check_rect(a.region, s, "attachment");
        if (!inside(a.region, spec.subject)) throw ValidationError("attachment region outside the subject");
        for (std::size_t j = 0; j < i; ++j) {
            if (a.region.overlaps(spec.attachments[j].region)) throw ValidationError("attachment regions overlap");
        }
    }

    AttachScene out;
    out.scene.shape = s;
    const Latent background = flat(s, spec.background);
    Latent base = background;
    paint(base, spec.subject, spec.subject_color);

    out.plan.unconditional = {"ucon", ""};
    out.plan.base = Condition{"base", "subject"};
    out.concept_plan.unconditional = out.plan.unconditional;
    out.scene.templates["ucon"] = background;
    out.scene.templates["base"] = base;

    const std::size_t k = spec.attachments.size();
    out.target = base;
    Latent joint = base;
    for (std::size_t i = 0; i < k; ++i) {
        const auto& a = spec.attachments[i];
        const std::string n = std::to_string(i + 1);
        const Color colour = add(spec.subject_color, a.delta);

        Latent bound = base;
        paint(bound, a.region, colour);
        out.scene.templates["attach" + n] = bound;
        out.plan.attachments.push_back({"attach" + n, "subject with attachment " + n});

        Latent concept_only = background;
        paint(concept_only, a.region, colour);
        out.scene.templates["concept" + n] = concept_only;
        out.concept_plan.attachments.push_back({"concept" + n, "attachment " + n});

        paint(out.target, a.region, colour);
        // Bleeding: each attachment wears the next attachment's colour.
        paint(joint, a.region, add(spec.subject_color, spec.attachments[(i + 1) % k].delta));
    }
    out.joint = {"joint", "subject with all attachments"};
    out.scene.templates["joint"] = joint;
    return out;
}

SubjectScene build_subject_scene(const SubjectSceneSpec& spec) {
    const Shape& s = spec.shape;
    if (!s.valid()) throw ShapeError("canvas dims must be positive");
    if (spec.subjects.empty()) throw ValidationError("subject scene needs at least one subject");
    for (std::size_t i = 0; i < spec.subjects.size(); ++i) {
        check_rect(spec.subjects[i].region, s, "subject");
        for (std::size_t j = 0; j < i; ++j) {
            if (spec.subjects[i].region.overlaps(spec.subjects[j].region)) {
                throw ValidationError("subjects " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
            }
        }
    }
    for (int ch : spec.swapped_channels) {
        if (ch < 0 || ch >= 3) throw ValidationError("swapped channel index out of range");
    }

    SubjectScene out;
    out.scene.shape = s;
    const Latent background = flat(s, spec.background);
    out.scene.templates["ucon"] = background;
    out.plan.unconditional = {"ucon", ""};
    out.plan.joint = Condition{"joint", "all subjects"};

    const std::size_t k = spec.subjects.size();
    out.correct_joint = background;
    Latent joint = background;
    for (std::size_t i = 0; i < k; ++i) {
        const auto& subj = spec.subjects[i];
        const std::string n = std::to_string(i + 1);
        Latent alone = background;
        paint(alone, subj.region, subj.color);
        out.scene.templates["subject" + n] = alone;
        out.plan.subjects.push_back({{"subject" + n, "subject " + n}, {}});

        paint(out.correct_joint, subj.region, subj.color);
        Color swapped = subj.color;
        for (int ch : spec.swapped_channels) {
            swapped[static_cast<std::size_t>(ch)] = spec.subjects[(i + 1) % k].color[static_cast<std::size_t>(ch)];
        }
        paint(joint, subj.region, swapped);
        out.layout.subjects.push_back({i, i, rect_mask(subj.region, s)});
    }
    out.scene.templates["joint"] = joint;
    return out;
}

AttachSceneSpec generate_attach_spec(std::uint64_t seed, std::size_t n_attachments, Shape shape) {
    if (n_attachments == 0) throw ValidationError("generate_attach_spec: need at least one attachment");
    const RngStream rs{seed, streams::kSceneGeneration, 0};
    std::uint64_t ctr = 0;
    AttachSceneSpec spec;
    spec.shape = shape;
    const int min_h = std::max(static_cast<int>(n_attachments), shape.height / 2);
    const int min_w = shape.width / 2;
    const int h = uniform_int(rs, ctr, min_h, shape.height);
    const int w = uniform_int(rs, ctr, min_w, shape.width);
    const int y0 = uniform_int(rs, ctr, 0, shape.height - h);
    const int x0 = uniform_int(rs, ctr, 0, shape.width - w);
    spec.subject = {x0, y0, x0 + w, y0 + h};
    // Subject colour sits far from the mid-grey background on every channel.
    for (auto& c : spec.subject_color) {
        const bool high = rs.uniform(ctr++) < 0.5;
        c = static_cast<float>(high ? uniform_real(rs, ctr, 0.8, 0.95) : uniform_real(rs, ctr, 0.05, 0.2));
    }
    // Attachments are stripes over the left half of the subject; the right
    // half carries only the subject colour.
    const auto k = static_cast<int>(n_attachments);
    for (int i = 0; i < k; ++i) {
        const int sy0 = y0 + (h * i) / k;
        const int sy1 = y0 + (h * (i + 1)) / k;
        AttachmentSpec a;
        a.region = {x0, sy0, x0 + w / 2, sy1};
        for (auto& d : a.delta) {
            const double mag = uniform_real(rs, ctr, 0.15, 0.4);
            d = static_cast<float>(rs.uniform(ctr++) < 0.5 ? -mag : mag);
        }
        spec.attachments.push_back(a);
    }
    return spec;
}

SubjectSceneSpec generate_subject_spec(std::uint64_t seed, std::size_t n_subjects, Shape shape) {
    if (n_subjects == 0) throw ValidationError("generate_subject_spec: need at least one subject");
    const RngStream rs{seed, streams::kSceneGeneration, 1};
    std::uint64_t ctr = 0;
    SubjectSceneSpec spec;
    spec.shape = shape;
    const auto k = static_cast<int>(n_subjects);
    for (int i = 0; i < k; ++i) {
        // Each subject lives in its own vertical band, so subjects never overlap.
        const int bx0 = (shape.width * i) / k, bx1 = (shape.width * (i + 1)) / k;
        const int bw = bx1 - bx0;
        const int w = uniform_int(rs, ctr, std::max(1, bw * 2 / 3), bw);
        const int h = uniform_int(rs, ctr, std::max(1, shape.height / 2), shape.height);
        const int x0 = uniform_int(rs, ctr, bx0, bx1 - w);
        const int y0 = uniform_int(rs, ctr, 0, shape.height - h);
        SubjectSpec subj;
        subj.region = {x0, y0, x0 + w, y0 + h};
        // Channel 0 (the swapped attribute) uses well-separated levels.
        const double level = k == 1 ? 0.5 : 0.1 + 0.8 * static_cast<double>(i) / static_cast<double>(k - 1);
        subj.color[0] = static_cast<float>(level + uniform_real(rs, ctr, -0.05, 0.05));
        subj.color[1] = static_cast<float>(uniform_real(rs, ctr, 0.1, 0.9));
        subj.color[2] = static_cast<float>(uniform_real(rs, ctr, 0.1, 0.9));
        spec.subjects.push_back(subj);
    }
    return spec;
}

Latent oracle_effective_template(const PromptPlan& plan, const ToyScene& scene, const GuidanceMode& mode) {
    const double lam = mode.scale;
    const Latent& ucon = tmpl(scene, plan.unconditional);
    auto weight = [&](std::size_t i) {
        return mode.attachment_weights.empty() ? lam : lam * mode.attachment_weights.at(i);
    };
    std::vector<double> acc(ucon.size());
    switch (mode.kind) {
        case GuidanceKind::cfg: {
            const Condition& con = plan.joint ? *plan.joint : plan.base.value();
            const Latent& c = tmpl(scene, con);
            for (std::size_t p = 0; p < acc.size(); ++p) acc[p] = (1.0 - lam) * ucon[p] + lam * c[p];
            break;
        }
        case GuidanceKind::isolated_attach: {
            if (!plan.base) throw ValidationError("isolated-attach oracle needs a base prompt");
            const Latent& b = tmpl(scene, *plan.base);
            for (std::size_t p = 0; p < acc.size(); ++p) acc[p] = (1.0 - lam) * ucon[p] + lam * b[p];
            for (std::size_t i = 0; i < plan.attachments.size(); ++i) {
                const Latent& a = tmpl(scene, plan.attachments[i]);
                for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += weight(i) * (static_cast<double>(a[p]) - b[p]);
            }
            break;
        }
        case GuidanceKind::no_base:
        case GuidanceKind::composable: {
            double total = 0.0;
            for (std::size_t i = 0; i < plan.attachments.size(); ++i) total += weight(i);
            for (std::size_t p = 0; p < acc.size(); ++p) acc[p] = (1.0 - total) * ucon[p];
            for (std::size_t i = 0; i < plan.attachments.size(); ++i) {
                const Latent& a = tmpl(scene, plan.attachments[i]);
                for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += weight(i) * a[p];
            }
            break;
        }
    }
    std::vector<float> data(acc.begin(), acc.end());
    return Latent(ucon.shape(), std::move(data));
}

double region_rmse(const Latent& x, const Latent& ref, const Mask& mask) {
    require_same_shape(x, ref, "region_rmse");
    require_mask_fits(mask, x.shape(), "region_rmse");
    const std::size_t plane = x.shape().plane();
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < plane; ++p) {
        if (!mask[p]) continue;
        for (int c = 0; c < x.shape().channels; ++c) {
            const std::size_t i = static_cast<std::size_t>(c) * plane + p;
            const double d = static_cast<double>(x[i]) - ref[i];
            sq += d * d;
            ++n;
        }
    }
    if (n == 0) throw ValidationError("region_rmse: empty mask");
    return std::sqrt(sq / static_cast<double>(n));
}

double rmse(const Latent& x, const Latent& ref) {
    return region_rmse(x, ref, Mask(x.shape().height, x.shape().width, true));
}

namespace {

// Sum over all ordered pairs of |a_i - b_j| for scalars, via sorting.
double cross_abs_sum(std::vector<double> a, std::vector<double> b) {
    std::sort(b.begin(), b.end());
    std::vector<double> prefix(b.size() + 1, 0.0);
    for (std::size_t j = 0; j < b.size(); ++j) prefix[j + 1] = prefix[j] + b[j];
    double total = 0.0;
    for (double v : a) {
        const auto below = static_cast<std::size_t>(std::lower_bound(b.begin(), b.end(), v) - b.begin());
        const double lo = v * static_cast<double>(below) - prefix[below];
        const double hi = (prefix[b.size()] - prefix[below]) - v * static_cast<double>(b.size() - below);
        total += lo + hi;
    }
    return total;
}

double within_abs_sum(std::vector<double> a) {
    std::sort(a.begin(), a.end());
    double total = 0.0;
    const auto n = static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * (2.0 * static_cast<double>(i) - n + 1.0);
    return 2.0 * total;  // ordered pairs
}

double euclid(const Latent& a, const Latent& b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        sq += d * d;
    }
    return std::sqrt(sq);
}

}  // namespace

double mc_energy_distance(const std::vector<Latent>& a, const std::vector<Latent>& b) {
    if (a.empty() || b.empty()) throw ValidationError("energy distance needs non-empty sample sets");
    const Shape s = a.front().shape();
    for (const auto& v : a) require_same_shape(a.front(), v, "energy distance");
    for (const auto& v : b) require_same_shape(a.front(), v, "energy distance");
    const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());

    double ab = 0.0, aa = 0.0, bb = 0.0;
    if (s.numel() == 1) {
        std::vector<double> va, vb;
        for (const auto& v : a) va.push_back(v[0]);
        for (const auto& v : b) vb.push_back(v[0]);
        ab = cross_abs_sum(va, vb);
        aa = within_abs_sum(va);
        bb = within_abs_sum(vb);
    } else {
        for (const auto& x : a)
            for (const auto& y : b) ab += euclid(x, y);
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = i + 1; j < a.size(); ++j) aa += 2.0 * euclid(a[i], a[j]);
        for (std::size_t i = 0; i < b.size(); ++i)
            for (std::size_t j = i + 1; j < b.size(); ++j) bb += 2.0 * euclid(b[i], b[j]);
    }
    const double ed = 2.0 * ab / (na * nb) - aa / (na * na) - bb / (nb * nb);
    return std::max(ed, 0.0);
}

InterferenceDenoiser::InterferenceDenoiser(std::map<std::string, Latent> templates, NoiseSchedule sched,
                                           double leak)
    : templates_(std::move(templates)), sched_(std::move(sched)), leak_(leak) {
    if (!std::isfinite(leak_)) throw ValidationError("leak must be finite");
    auto u = templates_.find("ucon");
    if (u == templates_.end()) throw ConditionError("interference denoiser needs a 'ucon' template");
    const Shape& s = u->second.shape();
    const std::size_t plane = s.plane();
    salient_ = Mask(s.height, s.width);
    for (const auto& [id, tau] : templates_) {
        require_same_shape(tau, u->second, "interference denoiser");
        Mask m(s.height, s.width);
        for (std::size_t p = 0; p < plane; ++p) {
            bool differs = false;
            for (int ch = 0; ch < s.channels; ++ch) {
                const std::size_t i = static_cast<std::size_t>(ch) * plane + p;
                differs = differs || tau[i] != u->second[i];
            }
            if (differs) m.set(static_cast<int>(p) / s.width, static_cast<int>(p) % s.width, true);
        }
        salient_ = salient_ | m;
        support_.emplace(id, std::move(m));
    }
}

Latent InterferenceDenoiser::predict_eps(const Latent& x, int t, const Condition& c) const {
    if (t < 1 || t > sched_.max_step()) throw ValidationError("interference denoiser: t out of range");
    auto it = templates_.find(c.id);
    if (it == templates_.end()) throw ConditionError("unknown condition id '" + c.id + "'");
    const Latent& tau = it->second;
    require_same_shape(x, tau, "interference denoiser");
    const Mask& own = support_.at(c.id);
    const Mask others = salient_ & ~own;
    const double ab = sched_.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double inv_b = 1.0 / std::sqrt(1.0 - ab);
    const Shape& s = x.shape();
    const std::size_t plane = s.plane();
    const std::size_t n_others = others.count();
    Latent out(s);
    for (int ch = 0; ch < s.channels; ++ch) {
        const std::size_t off = static_cast<std::size_t>(ch) * plane;
        double gap = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            if (others[p]) gap += x[off + p] / a - tau[off + p];
        }
        const double pull = n_others == 0 ? 0.0 : leak_ * ab * gap / static_cast<double>(n_others);
        for (std::size_t p = 0; p < plane; ++p) {
            const double target = tau[off + p] + (own[p] ? pull : 0.0);
            out[off + p] = static_cast<float>((x[off + p] - a * target) * inv_b);
        }
    }
    return out;
}

MixtureScene build_mixture_scene(NoiseSchedule sched) {
    MixtureScene scene;
    scene.schedule = sched;
    const Shape one{1, 1, 1};
    scene.conditional.weights = {0.3, 0.7};
    scene.conditional.means = {Latent(one, 1.0f), Latent(one, 2.0f)};
    scene.conditional.variances = {0.03, 0.03};
    scene.conditional_mean = 0.3 * 1.0 + 0.7 * 2.0;

    GaussianMixture broad;
    broad.weights = {1.0};
    broad.means = {Latent(one, 0.0f)};
    broad.variances = {1.0};

    scene.denoiser = make_gm_denoiser({{"ucon", broad}, {"cond", scene.conditional}}, std::move(sched));
    scene.plan.unconditional = {"ucon", ""};
    scene.plan.joint = Condition{"cond", "two-mode target"};
    return scene;
}

std::vector<Latent> sample_mixture_directly(const GaussianMixture& gm, std::size_t n, std::uint64_t seed) {
    std::vector<Latent> out;
    out.reserve(n);
    const Shape s = gm.means.front().shape();
    for (std::size_t i = 0; i < n; ++i) {
        const RngStream rs{seed, streams::kSceneGeneration + 1, static_cast<std::int64_t>(i)};
        double u = rs.uniform(0);
        std::size_t j = 0;
        while (j + 1 < gm.weights.size() && u >= gm.weights[j]) {
            u -= gm.weights[j];
            ++j;
        }
        const Latent z = sample_gaussian({seed, streams::kSceneGeneration + 2, static_cast<std::int64_t>(i)}, s);
        Latent v(s);
        const double sd = std::sqrt(gm.variances[j]);
        for (std::size_t p = 0; p < v.size(); ++p) v[p] = static_cast<float>(gm.means[j][p] + sd * z[p]);
        out.push_back(std::move(v));
    }
    return out;
}

Suite parse_suite(const std::string& s) {
    if (s == "attach") return Suite::attach;
    if (s == "subjects") return Suite::subjects;
    if (s == "ablations") return Suite::ablations;
    if (s == "baselines") return Suite::baselines;
    if (s == "distribution") return Suite::distribution;
    if (s == "all") return Suite::all;
    throw ValidationError("unknown suite '" + s + "'");
}

namespace {

constexpr int kT = 1000;
constexpr int kSteps = 50;
constexpr int kLayout = 750;
constexpr std::size_t kAttachScenes = 10;
constexpr std::size_t kSubjectScenes = 5;
constexpr std::size_t kMixtureSamples = 2000;

DiffusionSetup toy_setup(DenoiserPtr den) {
    DiffusionSetup setup;
    setup.schedule = make_noise_schedule(kT);
    setup.steps = make_step_plan(kT, kSteps, kLayout, 0.0);
    setup.denoisers.base = std::move(den);
    setup.denoisers.switch_index = setup.steps.refiner_index;
    return setup;
}

json row(const char* suite, const std::string& scene, const std::string& mode, const json& strategy,
         double lambda, json metrics, json thresholds, bool pass) {
    return {{"suite", suite},         {"scene", scene},       {"mode", mode},
            {"strategy", strategy},   {"lambda", lambda},     {"metrics", std::move(metrics)},
            {"thresholds", std::move(thresholds)}, {"pass", pass}};
}

bool region_equal(const Latent& a, const Latent& b, const Mask& m) {
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

std::string scene_name(const char* kind, std::size_t i) { return std::string(kind) + "-" + std::to_string(i); }

void attach_suite(SuiteReport& rep, bool concurrent) {
    for (std::size_t i = 0; i < kAttachScenes; ++i) {
        const AttachScene sc = build_attach_scene(generate_attach_spec(100 + i, 2 + i % 3));
        const DiffusionSetup setup = toy_setup(make_template_denoiser(sc.scene.templates, make_noise_schedule(kT)));
        for (double lam : {0.0, 1.0, 5.0}) {
            SamplingOptions opts;
            opts.shape = sc.scene.shape;
            opts.seed = 7 + i;
            opts.guidance = {GuidanceKind::isolated_attach, lam, {}};
            opts.concurrent = concurrent;
            const Latent out = sample_attachments(sc.plan, setup, opts);
            const double err = rmse(out, oracle_effective_template(sc.plan, sc.scene, opts.guidance));
            const bool pass = err <= kConvergenceRmse;
            rep.pass = rep.pass && pass;
            rep.rows.push_back(row("attach", scene_name("attach", i), "isolated-attach", nullptr, lam,
                                   {{"rmse_to_oracle", err}}, {{"rmse_max", kConvergenceRmse}}, pass));
        }
    }
}

struct RevisionMetrics {
    double max_revised = 0.0;
    double min_joint = 1e300;
    bool region_equal = true;
};

RevisionMetrics measure_revision(const SubjectScene& sc, const DiffusionSetup& setup, const SamplingOptions& opts,
                                 SubjectStrategy strategy) {
    RevisionMetrics m;
    const Latent joint = sample_joint(sc.plan, setup, opts);
    const RevisionResult rev = revise_subjects(sc.plan, sc.layout, setup, opts, {strategy, false});
    for (std::size_t i = 0; i < sc.layout.size(); ++i) {
        const Mask& mask = sc.layout.subjects[i].mask;
        const Latent ref = oracle_effective_template(
            PromptPlan{sc.plan.unconditional, sc.plan.subjects[i].prompt, {}, std::nullopt, {}}, sc.scene,
            {GuidanceKind::cfg, opts.guidance.scale, {}});
        m.max_revised = std::max(m.max_revised, region_rmse(rev.output, ref, mask));
        m.min_joint = std::min(m.min_joint, region_rmse(joint, ref, mask));
        m.region_equal = m.region_equal && region_equal(rev.output, rev.branches[i], mask);
    }
    return m;
}

void subjects_suite(SuiteReport& rep, bool concurrent) {
    for (std::size_t i = 0; i < kSubjectScenes; ++i) {
        const SubjectScene sc = build_subject_scene(generate_subject_spec(200 + i, 2 + i % 2));
        const DiffusionSetup setup = toy_setup(make_template_denoiser(sc.scene.templates, make_noise_schedule(kT)));
        SamplingOptions opts;
        opts.shape = sc.scene.shape;
        opts.seed = 11 + i;
        opts.guidance = {GuidanceKind::cfg, 1.0, {}};
        opts.concurrent = concurrent;
        const RevisionMetrics m = measure_revision(sc, setup, opts, SubjectStrategy::A);
        const bool pass = m.max_revised < kConvergenceRmse && m.min_joint > kBleedingRmse && m.region_equal;
        rep.pass = rep.pass && pass;
        rep.rows.push_back(row("subjects", scene_name("bleed", i), "revise", "A", 1.0,
                               {{"max_region_rmse_revised", m.max_revised},
                                {"min_region_rmse_joint", m.min_joint},
                                {"region_equal", m.region_equal}},
                               {{"revised_max", kConvergenceRmse}, {"joint_min", kBleedingRmse}}, pass));
    }
}

void ablations_suite(SuiteReport& rep, bool concurrent) {
    for (std::size_t i = 0; i < 4; ++i) {
        const AttachScene sc = build_attach_scene(generate_attach_spec(300 + i, 2 + i % 3));
        const DiffusionSetup setup = toy_setup(make_template_denoiser(sc.scene.templates, make_noise_schedule(kT)));
        for (double lam : {1.0, 5.0}) {
            SamplingOptions opts;
            opts.shape = sc.scene.shape;
            opts.seed = 3 + i;
            opts.concurrent = concurrent;
            opts.guidance = {GuidanceKind::no_base, lam, {}};
            const Latent nb = sample_guided(sc.plan, setup, opts);
            const Latent nb_oracle = oracle_effective_template(sc.plan, sc.scene, opts.guidance);
            const Latent iso_oracle =
                oracle_effective_template(sc.plan, sc.scene, {GuidanceKind::isolated_attach, lam, {}});
            const double own = rmse(nb, nb_oracle);
            const double gap = rmse(nb_oracle, iso_oracle);
            const bool pass = own <= kConvergenceRmse && gap > 10.0 * kConvergenceRmse;
            rep.pass = rep.pass && pass;
            rep.rows.push_back(row("ablations", scene_name("attach", i), "no-base", nullptr, lam,
                                   {{"rmse_to_own_oracle", own}, {"oracle_gap_vs_isolated", gap}},
                                   {{"rmse_max", kConvergenceRmse}, {"gap_min", 10.0 * kConvergenceRmse}}, pass));
        }
    }
    for (std::size_t i = 0; i < 3; ++i) {
        const SubjectScene sc = build_subject_scene(generate_subject_spec(400 + i, 2 + i % 2));
        const DiffusionSetup setup = toy_setup(make_template_denoiser(sc.scene.templates, make_noise_schedule(kT)));
        for (SubjectStrategy strat : {SubjectStrategy::A, SubjectStrategy::B, SubjectStrategy::C}) {
            SamplingOptions opts;
            opts.shape = sc.scene.shape;
            opts.seed = 21 + i;
            opts.concurrent = concurrent;
            opts.guidance = {GuidanceKind::cfg, 1.0, {}};
            const RevisionMetrics m = measure_revision(sc, setup, opts, strat);
            const bool pass = m.max_revised < kConvergenceRmse && m.region_equal;
            rep.pass = rep.pass && pass;
            rep.rows.push_back(row("ablations", scene_name("bleed", i), "revise", std::string(to_string(strat)), 1.0,
                                   {{"max_region_rmse_revised", m.max_revised}, {"region_equal", m.region_equal}},
                                   {{"revised_max", kConvergenceRmse}}, pass));
        }
    }
}

void baselines_suite(SuiteReport& rep, bool concurrent) {
    for (std::size_t i = 0; i < 4; ++i) {
        const AttachScene sc = build_attach_scene(generate_attach_spec(500 + i, 2 + i % 3));
        const DiffusionSetup setup = toy_setup(make_template_denoiser(sc.scene.templates, make_noise_schedule(kT)));
        SamplingOptions opts;
        opts.shape = sc.scene.shape;
        opts.seed = 5 + i;
        opts.concurrent = concurrent;
        opts.guidance = {GuidanceKind::isolated_attach, 1.0, {}};
        const double iso = rmse(sample_attachments(sc.plan, setup, opts), sc.target);
        opts.guidance.kind = GuidanceKind::composable;
        const double comp = rmse(sample_guided(sc.concept_plan, setup, opts), sc.target);
        opts.guidance.kind = GuidanceKind::cfg;
        PromptPlan joint_plan{sc.plan.unconditional, std::nullopt, {}, sc.joint, {}};
        const double joint = rmse(sample_joint(joint_plan, setup, opts), sc.target);
        const bool pass = iso < comp;
        rep.pass = rep.pass && pass;
        rep.rows.push_back(row("baselines", scene_name("attach", i), "isolated-attach vs composable", nullptr, 1.0,
                               {{"rmse_isolated", iso}, {"rmse_composable", comp}, {"rmse_joint_cfg", joint}},
                               {{"isolated_below_composable", true}}, pass));
    }
    for (std::size_t i = 0; i < 3; ++i) {
        const SubjectScene sc = build_subject_scene(generate_subject_spec(600 + i, 2));
        auto den = std::make_shared<InterferenceDenoiser>(sc.scene.templates, make_noise_schedule(kT), 0.5);
        const DiffusionSetup setup = toy_setup(den);
        SamplingOptions opts;
        opts.shape = sc.scene.shape;
        opts.seed = 31 + i;
        opts.concurrent = concurrent;
        opts.guidance = {GuidanceKind::cfg, 1.0, {}};
        const Latent iso = revise_subjects(sc.plan, sc.layout, setup, opts).output;
        const Latent md = multidiffusion_baseline(sc.plan, sc.layout, setup, opts);
        double e_iso = 0.0, e_md = 0.0;
        bool pass = true;
        for (std::size_t s = 0; s < sc.layout.size(); ++s) {
            const Latent& ref = sc.scene.templates.at(sc.plan.subjects[s].prompt.id);
            const double r_iso = region_rmse(iso, ref, sc.layout.subjects[s].mask);
            const double r_md = region_rmse(md, ref, sc.layout.subjects[s].mask);
            pass = pass && r_iso < r_md;
            e_iso = std::max(e_iso, r_iso);
            e_md = std::max(e_md, r_md);
        }
        rep.pass = rep.pass && pass;
        rep.rows.push_back(row("baselines", scene_name("interference", i), "revise vs multidiffusion", "A", 1.0,
                               {{"max_region_rmse_revise", e_iso}, {"max_region_rmse_multidiffusion", e_md}},
                               {{"revise_below_multidiffusion_every_region", true}}, pass));
    }
}

void distribution_suite(SuiteReport& rep, bool concurrent) {
    const MixtureScene ms = build_mixture_scene(make_noise_schedule(kT));
    const DiffusionSetup setup = toy_setup(ms.denoiser);
    std::vector<Latent> sampled(kMixtureSamples);
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            SamplingOptions opts;
            opts.shape = {1, 1, 1};
            opts.seed = 1'000'000 + i;
            opts.guidance = {GuidanceKind::cfg, 1.0, {}};
            sampled[i] = sample_joint(ms.plan, setup, opts);
        }
    };
    if (concurrent) {
        std::vector<std::future<void>> fs;
        const std::size_t chunks = 8;
        for (std::size_t c = 0; c < chunks; ++c) {
            fs.push_back(std::async(std::launch::async, work, c * kMixtureSamples / chunks,
                                    (c + 1) * kMixtureSamples / chunks));
        }
        for (auto& f : fs) f.get();
    } else {
        work(0, kMixtureSamples);
    }
    const std::vector<Latent> direct = sample_mixture_directly(ms.conditional, kMixtureSamples, 4242);
    const double ed = mc_energy_distance(sampled, direct);
    double mean = 0.0;
    for (const auto& v : sampled) mean += v[0];
    mean /= static_cast<double>(sampled.size());
    const double rel = std::abs(mean - ms.conditional_mean) / std::abs(ms.conditional_mean);
    const bool pass = ed < kEnergyDistanceGate && rel < kMeanRelativeGate;
    rep.pass = rep.pass && pass;
    rep.rows.push_back(row("distribution", "mixture-1d", "cfg", nullptr, 1.0,
                           {{"energy_distance", ed}, {"sample_mean", mean}, {"target_mean", ms.conditional_mean},
                            {"mean_relative_error", rel}},
                           {{"energy_distance_max", kEnergyDistanceGate}, {"mean_relative_max", kMeanRelativeGate}},
                           pass));
}

}  // namespace

SuiteReport run_suite(Suite suite, bool concurrent) {
    SuiteReport rep;
    const bool all = suite == Suite::all;
    if (all || suite == Suite::attach) attach_suite(rep, concurrent);
    if (all || suite == Suite::subjects) subjects_suite(rep, concurrent);
    if (all || suite == Suite::ablations) ablations_suite(rep, concurrent);
    if (all || suite == Suite::baselines) baselines_suite(rep, concurrent);
    if (all || suite == Suite::distribution) distribution_suite(rep, concurrent);
    return rep;
}

}  // namespace isoguide::toy
