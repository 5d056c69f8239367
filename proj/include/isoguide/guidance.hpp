#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "isoguide/latent.hpp"

namespace isoguide {

enum class GuidanceKind { cfg, isolated_attach, no_base, composable };

std::string_view to_string(GuidanceKind k);
GuidanceKind parse_guidance_kind(std::string_view s);

inline constexpr double kDefaultGuidanceScale = 5.0;

struct GuidanceMode {
    GuidanceKind kind = GuidanceKind::isolated_attach;
    double scale = kDefaultGuidanceScale;
    // Optional per-attachment multipliers on `scale`; empty means uniform.
    std::vector<double> attachment_weights;

    void validate(std::size_t n_attachments) const;
};

// (1 - scale) eps_ucon + scale eps_con
Latent cfg_combine(const Latent& eps_ucon, const Latent& eps_con, double scale);

// (1 - scale) eps_ucon + scale eps_base + sum_i scale_i (eps_i - eps_base)
Latent isolated_attach_combine(const Latent& eps_ucon, const Latent& eps_base,
                               std::span<const Latent> eps_attach, double scale,
                               std::span<const double> weights = {});

// eps_ucon + sum_i scale_i (eps_i - eps_ucon)
Latent no_base_combine(const Latent& eps_ucon, std::span<const Latent> eps_items, double scale,
                       std::span<const double> weights = {});

// Same formula as no_base_combine, fed with independently split concepts.
Latent composable_combine(const Latent& eps_ucon, std::span<const Latent> eps_items,
                          double scale, std::span<const double> weights = {});

}  // namespace isoguide
