#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "isoguide/guidance.hpp"
#include "isoguide/pipeline.hpp"
#include "isoguide/schedule.hpp"

namespace isoguide::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitAcceptance = 3;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kSidecarEnv = "ISOGUIDE_SIDECAR";

// Parsed and validated config document. Relative paths inside the document
// are resolved against the document's directory.
struct RunConfig {
    std::uint64_t seed = 0;
    SamplerMode sampler = SamplerMode::deterministic;
    bool concurrent = false;
    std::optional<Shape> shape;

    int max_step = 1000;
    int steps = 50;
    ScheduleKind schedule_kind = ScheduleKind::scaled_linear;
    double refiner_fraction = 0.0;

    std::optional<GuidanceKind> guidance_kind;
    double guidance_scale = kDefaultGuidanceScale;
    std::vector<double> attachment_weights;

    std::string unconditional;
    std::string prompt_list;
    std::string joint_prompt;

    nlohmann::json denoiser;  // validated spec
    nlohmann::json refiner;   // null when absent

    int t_lay = 750;
    SubjectStrategy strategy = SubjectStrategy::A;
    bool per_branch_noise = false;
    double conf_threshold = 0.5;
    std::optional<std::vector<std::string>> expected_labels;
    std::vector<std::filesystem::path> masks;
    bool bbox_masks = false;
    std::string assign;
    std::optional<std::filesystem::path> detections;
    std::optional<std::string> sidecar;

    std::filesystem::path out_dir = "out";
    bool timings = false;

    std::string suite = "all";
    std::optional<std::filesystem::path> report;

    std::optional<std::filesystem::path> image;
};

// Strict parse: unknown keys and type mismatches throw ValidationError naming
// the dotted field path.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& file);

// Runs one command line (args[0] is the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace isoguide::cli
