#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace isoguide {

struct Shape {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(width);
    }
    std::size_t plane() const {
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    bool valid() const { return channels > 0 && height > 0 && width > 0; }

    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Rank-3 (channels x height x width) row-major float tensor. Values are
// required to be finite; construction validates this.
class Latent {
public:
    Latent() = default;
    explicit Latent(Shape shape, float fill = 0.0f);
    Latent(Shape shape, std::vector<float> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    float at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    bool all_finite() const;

    // Bitwise comparison, so -0.0f != 0.0f and NaN payloads count.
    bool bitwise_equal(const Latent& other) const;

    friend bool operator==(const Latent&, const Latent&) = default;

private:
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * static_cast<std::size_t>(shape_.height) +
                static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(shape_.width) +
               static_cast<std::size_t>(x);
    }

    Shape shape_{};
    std::vector<float> data_;
};

// Hard binary spatial mask (height x width), each value 0 or 1.
class Mask {
public:
    Mask() = default;
    Mask(int height, int width, bool fill = false);
    Mask(int height, int width, std::vector<std::uint8_t> data);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }

    bool operator()(int y, int x) const { return data_[idx(y, x)] != 0; }
    void set(int y, int x, bool v) { data_[idx(y, x)] = v ? 1 : 0; }
    bool operator[](std::size_t i) const { return data_[i] != 0; }

    std::span<const std::uint8_t> data() const { return data_; }

    std::size_t count() const;
    bool none() const { return count() == 0; }
    bool all() const { return count() == size(); }

    Mask operator|(const Mask& other) const;
    Mask operator&(const Mask& other) const;
    Mask operator~() const;

    bool matches(const Shape& s) const { return s.height == height_ && s.width == width_; }

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    std::size_t idx(int y, int x) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> data_;
};

// Union of a list of same-sized masks; an empty list yields an all-zero mask
// of the given size.
Mask mask_union(std::span<const Mask> masks, int height, int width);

// x where m = 0, y where m = 1, broadcast over channels.
Latent blend_masked(const Latent& x, const Latent& y, const Mask& m);

// Per-pixel selection: regions[i].second's pixels take regions[i].first,
// remaining pixels take background. Regions must be pairwise disjoint.
struct Region {
    const Latent* value;
    const Mask* mask;
};
Latent compose_regions(const Latent& background, std::span<const Region> regions);

// Nearest-neighbour majority-vote downsampling of an image-resolution mask to a
// latent grid whose dims divide the mask dims; ties resolve to 1.
Mask downsample_mask(const Mask& m, int height, int width);

void require_same_shape(const Latent& a, const Latent& b, const char* what);
void require_mask_fits(const Mask& m, const Shape& s, const char* what);

}  // namespace isoguide
