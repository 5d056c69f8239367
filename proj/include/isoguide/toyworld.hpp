#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "isoguide/denoiser.hpp"
#include "isoguide/guidance.hpp"
#include "isoguide/layout.hpp"
#include "isoguide/pipeline.hpp"

namespace isoguide::toy {

using Color = std::array<float, 3>;

inline constexpr Shape kDefaultCanvas{3, 16, 16};
inline constexpr double kConvergenceRmse = 1e-2;
inline constexpr double kBleedingRmse = 0.1;
inline constexpr double kEnergyDistanceGate = 0.05;
inline constexpr double kMeanRelativeGate = 0.05;

struct Rect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool overlaps(const Rect& o) const {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }
};

// Scene with templates per condition id (the delta-target registry).
struct ToyScene {
    Shape shape = kDefaultCanvas;
    std::map<std::string, Latent> templates;
};

struct AttachmentSpec {
    Rect region;   // must lie inside the subject
    Color delta;   // added to the subject colour on `region`
};

struct AttachSceneSpec {
    Shape shape = kDefaultCanvas;
    Color background{0.5f, 0.5f, 0.5f};
    Rect subject;
    Color subject_color{0.2f, 0.2f, 0.2f};
    std::vector<AttachmentSpec> attachments;
};

// Conditions: ucon, base, attach_1..k (base + one attachment), concept_1..k
// (attachment alone on the background, for the composable baseline), and a
// joint condition whose attachment deltas are cyclically swapped.
struct AttachScene {
    ToyScene scene;
    PromptPlan plan;            // ucon, base, attach_i
    PromptPlan concept_plan;    // ucon, concept_i (no base subject)
    Condition joint;            // bleeding joint prompt
    Latent target;              // base + all attachments, the intended image
};

AttachScene build_attach_scene(const AttachSceneSpec& spec);

struct SubjectSpec {
    Rect region;
    Color color;
};

struct SubjectSceneSpec {
    Shape shape = kDefaultCanvas;
    Color background{0.5f, 0.5f, 0.5f};
    std::vector<SubjectSpec> subjects;
    // Channels whose values are swapped across subjects in the joint template.
    std::vector<int> swapped_channels{0};
};

// Conditions: ucon, joint (bleeding: subject colours permuted cyclically on
// the swapped channels), subject_i (subject i alone on the background).
struct SubjectScene {
    ToyScene scene;
    PromptPlan plan;
    SubjectLayout layout;       // ground-truth masks, subject i -> mask i
    Latent correct_joint;       // all subjects with their own colours
};

SubjectScene build_subject_scene(const SubjectSceneSpec& spec);

// Deterministic pseudo-random scene generators for the suites.
AttachSceneSpec generate_attach_spec(std::uint64_t seed, std::size_t n_attachments,
                                     Shape shape = kDefaultCanvas);
SubjectSceneSpec generate_subject_spec(std::uint64_t seed, std::size_t n_subjects,
                                       Shape shape = kDefaultCanvas);

// Affine closure of a combiner under delta-target denoisers.
Latent oracle_effective_template(const PromptPlan& plan, const ToyScene& scene,
                                 const GuidanceMode& mode);

double region_rmse(const Latent& x, const Latent& ref, const Mask& mask);
double rmse(const Latent& x, const Latent& ref);

// V-statistic energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'| with Euclidean
// norm over flattened samples.
double mc_energy_distance(const std::vector<Latent>& a, const std::vector<Latent>& b);

// Template denoiser with cross-subject leakage. A condition's support is
// where its template differs from "ucon"; the salient area is the union of
// all supports. On its own support, the predicted clean image of a condition
// is pulled by `leak * alpha_bar(t)` times the per-channel gap between the
// latent (in x0 units) and the template, averaged over the rest of the
// salient area. Other subjects visible in the latent therefore bleed in;
// conditions covering the whole salient area see no pull.
class InterferenceDenoiser final : public Denoiser {
public:
    InterferenceDenoiser(std::map<std::string, Latent> templates, NoiseSchedule sched, double leak);

    Latent predict_eps(const Latent& x, int t, const Condition& c) const override;
    std::string name() const override { return "interference"; }

private:
    std::map<std::string, Latent> templates_;
    std::map<std::string, Mask> support_;
    Mask salient_;
    NoiseSchedule sched_;
    double leak_;
};

// 1-D two-component mixture used by the distribution suite.
struct MixtureScene {
    NoiseSchedule schedule;
    std::shared_ptr<GmDenoiser> denoiser;
    PromptPlan plan;
    GaussianMixture conditional;
    double conditional_mean = 0.0;
};

MixtureScene build_mixture_scene(NoiseSchedule sched);
std::vector<Latent> sample_mixture_directly(const GaussianMixture& gm, std::size_t n,
                                            std::uint64_t seed);

enum class Suite { attach, subjects, ablations, baselines, distribution, all };

Suite parse_suite(const std::string& s);

struct SuiteReport {
    nlohmann::json rows = nlohmann::json::array();
    bool pass = true;
};

SuiteReport run_suite(Suite suite, bool concurrent = false);

}  // namespace isoguide::toy
