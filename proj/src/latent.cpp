#include "isoguide/latent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "isoguide/errors.hpp"

namespace isoguide {

std::string to_string(const Shape& s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
           std::to_string(s.width);
}

Latent::Latent(Shape shape, float fill) : shape_(shape) {
    if (!shape.valid()) throw ShapeError("latent dims must be positive, got " + to_string(shape));
    if (!std::isfinite(fill)) throw ValidationError("latent fill value must be finite");
    data_.assign(shape.numel(), fill);
}

Latent::Latent(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (!shape.valid()) throw ShapeError("latent dims must be positive, got " + to_string(shape));
    if (data_.size() != shape.numel()) {
        throw ShapeError("latent data length " + std::to_string(data_.size()) +
                         " does not match dims " + to_string(shape));
    }
    if (!all_finite()) throw ValidationError("latent contains non-finite values");
}

bool Latent::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool Latent::bitwise_equal(const Latent& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

Mask::Mask(int height, int width, bool fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw ShapeError("mask dims must be positive");
    data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill ? 1 : 0);
}

Mask::Mask(int height, int width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
    if (height <= 0 || width <= 0) throw ShapeError("mask dims must be positive");
    if (data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
        throw ShapeError("mask data length does not match dims");
    }
    for (auto v : data_) {
        if (v > 1) throw ValidationError("mask values must be 0 or 1");
    }
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

Mask Mask::operator|(const Mask& other) const {
    if (other.height_ != height_ || other.width_ != width_) throw ShapeError("mask dims differ");
    Mask out = *this;
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] |= other.data_[i];
    return out;
}

Mask Mask::operator&(const Mask& other) const {
    if (other.height_ != height_ || other.width_ != width_) throw ShapeError("mask dims differ");
    Mask out = *this;
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] &= other.data_[i];
    return out;
}

Mask Mask::operator~() const {
    Mask out = *this;
    for (auto& v : out.data_) v = v ? 0 : 1;
    return out;
}

Mask mask_union(std::span<const Mask> masks, int height, int width) {
    Mask out(height, width, false);
    for (const auto& m : masks) out = out | m;
    return out;
}

void require_same_shape(const Latent& a, const Latent& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

void require_mask_fits(const Mask& m, const Shape& s, const char* what) {
    if (!m.matches(s)) {
        throw ShapeError(std::string(what) + ": mask " + std::to_string(m.height()) + "x" +
                         std::to_string(m.width()) + " does not match latent " + to_string(s));
    }
}

Latent blend_masked(const Latent& x, const Latent& y, const Mask& m) {
    require_same_shape(x, y, "blend_masked");
    require_mask_fits(m, x.shape(), "blend_masked");
    Latent out = x;
    const std::size_t plane = x.shape().plane();
    for (int c = 0; c < x.shape().channels; ++c) {
        const std::size_t off = static_cast<std::size_t>(c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            if (m[p]) out[off + p] = y[off + p];
        }
    }
    return out;
}

Latent compose_regions(const Latent& background, std::span<const Region> regions) {
    Latent out = background;
    const std::size_t plane = background.shape().plane();
    std::vector<std::uint8_t> claimed(plane, 0);
    for (const auto& r : regions) {
        require_same_shape(background, *r.value, "compose_regions");
        require_mask_fits(*r.mask, background.shape(), "compose_regions");
        for (std::size_t p = 0; p < plane; ++p) {
            if (!(*r.mask)[p]) continue;
            if (claimed[p]) throw LayoutError("compose_regions: masks overlap");
            claimed[p] = 1;
            for (int c = 0; c < background.shape().channels; ++c) {
                const std::size_t i = static_cast<std::size_t>(c) * plane + p;
                out[i] = (*r.value)[i];
            }
        }
    }
    return out;
}

Mask downsample_mask(const Mask& m, int height, int width) {
    if (height <= 0 || width <= 0) throw ShapeError("downsample_mask: target dims must be positive");
    if (m.height() == height && m.width() == width) return m;
    if (m.height() % height != 0 || m.width() % width != 0) {
        throw ShapeError("downsample_mask: " + std::to_string(m.height()) + "x" +
                         std::to_string(m.width()) + " is not an integer multiple of " +
                         std::to_string(height) + "x" + std::to_string(width));
    }
    const int fy = m.height() / height;
    const int fx = m.width() / width;
    const int cell = fy * fx;
    Mask out(height, width, false);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            int on = 0;
            for (int dy = 0; dy < fy; ++dy)
                for (int dx = 0; dx < fx; ++dx) on += m(y * fy + dy, x * fx + dx) ? 1 : 0;
            out.set(y, x, 2 * on >= cell);
        }
    }
    return out;
}

}  // namespace isoguide
