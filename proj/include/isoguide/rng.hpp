#pragma once

#include <cstdint>

#include "isoguide/latent.hpp"

namespace isoguide {

// Well-known branch ids. Pipelines key every random draw by
// (seed, branch, step) so draws never depend on evaluation order.
namespace streams {
inline constexpr std::int64_t kInitial = 0;            // x_T
inline constexpr std::int64_t kAncestral = 1;          // per-step sampler noise, shared by all trajectories
inline constexpr std::int64_t kReplacement = 2;        // x_eps shared across branches
inline constexpr std::int64_t kBranchReplacement = 1000;  // + branch index, per-branch x_eps
inline constexpr std::int64_t kBranchRefresh = 2000;      // + branch index, strategy C refresh noise
inline constexpr std::int64_t kSceneGeneration = 9000;
}  // namespace streams

// Counter-based stream: value i is a pure function of (seed, branch, step, i).
struct RngStream {
    std::uint64_t master_seed = 0;
    std::int64_t branch_id = 0;
    std::int64_t step_id = 0;

    std::uint64_t bits(std::uint64_t counter) const;
    // Uniform in the open interval (0, 1).
    double uniform(std::uint64_t counter) const;
    // Standard normal; uses counters 2*counter and 2*counter+1.
    double normal(std::uint64_t counter) const;

    friend bool operator==(const RngStream&, const RngStream&) = default;
};

Latent sample_gaussian(const RngStream& stream, const Shape& shape);

}  // namespace isoguide
