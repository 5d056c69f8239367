#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "isoguide/denoiser.hpp"
#include "isoguide/guidance.hpp"
#include "isoguide/layout.hpp"
#include "isoguide/schedule.hpp"

namespace isoguide {

struct SubjectPrompt {
    Condition prompt;
    // Non-empty turns `prompt` into the base of a nested attachment plan.
    std::vector<Condition> attachments;
};

// Role-tagged prompt list. Attachment plans fill `base` + `attachments`;
// subject plans fill `joint` + `subjects`.
struct PromptPlan {
    Condition unconditional;
    std::optional<Condition> base;
    std::vector<Condition> attachments;
    std::optional<Condition> joint;
    std::vector<SubjectPrompt> subjects;

    void validate_attachment_plan() const;
    void validate_subject_plan() const;
};

// Comma-separated prompt list. For attachments the first entry is the base
// subject; for subjects every entry is a subject. Ids are generated.
PromptPlan parse_attachment_prompt_list(std::string_view list, std::string_view unconditional = "");
PromptPlan parse_subject_prompt_list(std::string_view list, std::string_view joint,
                                     std::string_view unconditional = "");

enum class SubjectStrategy { A, B, C };

std::string_view to_string(SubjectStrategy s);
SubjectStrategy parse_strategy(std::string_view s);

struct DiffusionSetup {
    NoiseSchedule schedule;
    StepPlan steps;
    DenoiserSchedule denoisers;
};

enum class Phase { joint, isolated };

// Snapshot handed to an observer before each step is applied.
struct StepRecord {
    Phase phase;
    std::size_t step_index;
    int t;
    int t_prev;
    const Latent& x;        // main latent at t
    const Latent& eps_hat;  // combined prediction used for the main latent
    const Latent* eps_joint = nullptr;          // eps^0 (isolated phase only)
    std::span<const Latent> branches = {};      // branch latents at t
    std::span<const Latent> branch_eps = {};    // eps^i
};

using StepObserver = std::function<void(const StepRecord&)>;

struct SamplingOptions {
    Shape shape;
    GuidanceMode guidance;
    std::uint64_t seed = 0;
    SamplerMode sampler = SamplerMode::deterministic;
    // Evaluate the per-step denoiser calls concurrently (when the denoisers
    // allow it). Results are identical either way.
    bool concurrent = false;
    StepObserver observer;
};

Latent initial_latent(std::uint64_t seed, const Shape& shape);

// Plain CFG loop over the joint prompt (or the base prompt if no joint).
Latent sample_joint(const PromptPlan& plan, const DiffusionSetup& setup, const SamplingOptions& opts);

// Guided loop for any combiner; isolated_attach uses base + attachments,
// no_base/composable use the attachments alone, cfg uses joint/base.
Latent sample_guided(const PromptPlan& plan, const DiffusionSetup& setup, const SamplingOptions& opts);

// Multi-attachment isolated guidance (opts.guidance.kind is forced to isolated_attach).
Latent sample_attachments(const PromptPlan& plan, const DiffusionSetup& setup,
                          const SamplingOptions& opts);

// Continue a CFG trajectory for one condition over steps [begin, end).
Latent denoise_range(Latent x, const Condition& unconditional, const Condition& cond,
                     const DiffusionSetup& setup, const SamplingOptions& opts,
                     std::size_t begin, std::size_t end);

std::vector<Latent> make_branch_latents(const Latent& x_layout, const SubjectLayout& layout,
                                        SubjectStrategy strategy, std::span<const Latent> noise);

struct RevisionOptions {
    SubjectStrategy strategy = SubjectStrategy::A;
    bool per_branch_noise = false;  // default: one x_eps shared by every branch
};

struct RevisionResult {
    Latent output;
    Latent at_layout;  // main latent when the isolated phase starts
    std::vector<Latent> branches;  // final branch latents
};

RevisionResult revise_subjects(const PromptPlan& plan, const SubjectLayout& layout,
                               const DiffusionSetup& setup, const SamplingOptions& opts,
                               const RevisionOptions& ropts = {});

// Region-fused baseline: every prompt denoises the same latent; predictions
// are averaged per pixel by mask weight, background from the joint prompt.
Latent multidiffusion_baseline(const PromptPlan& plan, const SubjectLayout& layout,
                               const DiffusionSetup& setup, const SamplingOptions& opts);

// Where subject masks come from, in precedence order file > sidecar > bbox.
struct MaskSources {
    std::vector<Mask> file_masks;
    std::optional<std::string> sidecar;
    bool allow_bbox = false;
    AssignmentOverride assignment;
};

struct RevisionRequest {
    PromptPlan plan;
    BleedPolicy policy;
    MaskSources sources;
    RevisionOptions revision;
    // Pre-computed detections; when empty and a sidecar is configured the
    // sidecar detects on the joint sample.
    std::optional<std::vector<Detection>> detections;
    bool record_timings = false;
};

struct RevisionOutcome {
    bool revised = false;
    Latent original;
    Latent output;
    nlohmann::json report;
};

// Regenerates X_0 from opts.seed, checks for bleeding and revises if needed.
RevisionOutcome end_to_end_revision(const RevisionRequest& req, const DiffusionSetup& setup,
                                    const SamplingOptions& opts);

}  // namespace isoguide
