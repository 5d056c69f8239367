#include "isoguide/rng.hpp"

#include <cmath>
#include <numbers>

namespace isoguide {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t stream_key(const RngStream& s) {
    std::uint64_t k = splitmix64(s.master_seed);
    k = splitmix64(k ^ static_cast<std::uint64_t>(s.branch_id));
    k = splitmix64(k ^ (static_cast<std::uint64_t>(s.step_id) * kGolden));
    return k;
}

}  // namespace

std::uint64_t RngStream::bits(std::uint64_t counter) const {
    return splitmix64(stream_key(*this) ^ splitmix64(counter));
}

double RngStream::uniform(std::uint64_t counter) const {
    // 53 random bits mapped to the open interval (0, 1).
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal(std::uint64_t counter) const {
    const double u1 = uniform(2 * counter);
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Latent sample_gaussian(const RngStream& stream, const Shape& shape) {
    Latent out(shape);
    const std::uint64_t key = stream_key(stream);
    auto u = [key](std::uint64_t c) {
        return (static_cast<double>(splitmix64(key ^ splitmix64(c)) >> 11) + 0.5) * 0x1.0p-53;
    };
    // Box-Muller, both outputs used.
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; i += 2) {
        const double r = std::sqrt(-2.0 * std::log(u(i)));
        const double theta = 2.0 * std::numbers::pi * u(i + 1);
        out[i] = static_cast<float>(r * std::cos(theta));
        if (i + 1 < n) out[i + 1] = static_cast<float>(r * std::sin(theta));
    }
    return out;
}

}  // namespace isoguide
