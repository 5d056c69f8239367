#include "isoguide/guidance.hpp"

#include <cmath>
#include <string>

#include "isoguide/errors.hpp"

namespace isoguide {
namespace {

double term_scale(double scale, std::span<const double> weights, std::size_t i) {
    return weights.empty() ? scale : scale * weights[i];
}

void check_weights(std::span<const double> weights, std::size_t n) {
    if (!weights.empty() && weights.size() != n) {
        throw ValidationError("attachment weights: expected " + std::to_string(n) + ", got " +
                              std::to_string(weights.size()));
    }
}

}  // namespace

std::string_view to_string(GuidanceKind k) {
    switch (k) {
        case GuidanceKind::cfg: return "cfg";
        case GuidanceKind::isolated_attach: return "isolated-attach";
        case GuidanceKind::no_base: return "no-base";
        case GuidanceKind::composable: return "composable";
    }
    return "?";
}

GuidanceKind parse_guidance_kind(std::string_view s) {
    if (s == "cfg") return GuidanceKind::cfg;
    if (s == "isolated-attach") return GuidanceKind::isolated_attach;
    if (s == "no-base") return GuidanceKind::no_base;
    if (s == "composable") return GuidanceKind::composable;
    throw ValidationError("unknown guidance mode '" + std::string(s) + "'");
}

void GuidanceMode::validate(std::size_t n_attachments) const {
    if (!std::isfinite(scale)) throw ValidationError("guidance scale must be finite");
    check_weights(attachment_weights, n_attachments);
    for (double w : attachment_weights) {
        if (!std::isfinite(w)) throw ValidationError("attachment weights must be finite");
    }
}

Latent cfg_combine(const Latent& eps_ucon, const Latent& eps_con, double scale) {
    require_same_shape(eps_ucon, eps_con, "cfg_combine");
    Latent out(eps_ucon.shape());
    const double a = 1.0 - scale;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(a * eps_ucon[i] + scale * eps_con[i]);
    }
    return out;
}

Latent isolated_attach_combine(const Latent& eps_ucon, const Latent& eps_base,
                               std::span<const Latent> eps_attach, double scale,
                               std::span<const double> weights) {
    require_same_shape(eps_ucon, eps_base, "isolated_attach_combine");
    for (const auto& e : eps_attach) require_same_shape(eps_ucon, e, "isolated_attach_combine");
    check_weights(weights, eps_attach.size());
    Latent out(eps_ucon.shape());
    const double a = 1.0 - scale;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = a * eps_ucon[i] + scale * eps_base[i];
        for (std::size_t j = 0; j < eps_attach.size(); ++j) {
            acc += term_scale(scale, weights, j) * (static_cast<double>(eps_attach[j][i]) - eps_base[i]);
        }
        out[i] = static_cast<float>(acc);
    }
    return out;
}

Latent no_base_combine(const Latent& eps_ucon, std::span<const Latent> eps_items, double scale,
                       std::span<const double> weights) {
    if (eps_items.empty()) throw ValidationError("no_base_combine needs at least one condition");
    for (const auto& e : eps_items) require_same_shape(eps_ucon, e, "no_base_combine");
    check_weights(weights, eps_items.size());
    Latent out(eps_ucon.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        // Grouped as (1 - sum s_j) eps_ucon + sum s_j eps_j so one item reduces
        // to cfg_combine exactly.
        double total = 0.0;
        double acc = 0.0;
        for (std::size_t j = 0; j < eps_items.size(); ++j) {
            const double s = term_scale(scale, weights, j);
            total += s;
            acc += s * eps_items[j][i];
        }
        out[i] = static_cast<float>((1.0 - total) * eps_ucon[i] + acc);
    }
    return out;
}

Latent composable_combine(const Latent& eps_ucon, std::span<const Latent> eps_items, double scale,
                          std::span<const double> weights) {
    return no_base_combine(eps_ucon, eps_items, scale, weights);
}

}  // namespace isoguide
