#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "isoguide/latent.hpp"

namespace isoguide::io {

// ILTD tensor container: "ILTD", u32 LE version (1), u8 ndim, ndim x u32 LE
// dims, float32 LE payload in row-major order.
inline constexpr std::uint32_t kTensorVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Latent& t);
Latent decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Latent& t);
Latent read_tensor(const std::filesystem::path& path);

// Binary PGM (P5, maxval 255). 0 -> 0, 255 -> 1; other values are rejected.
std::vector<std::uint8_t> encode_mask_pgm(const Mask& m);
Mask decode_mask_pgm(std::span<const std::uint8_t> bytes);

void write_mask(const std::filesystem::path& path, const Mask& m);
Mask read_mask(const std::filesystem::path& path);

// Binary PPM (P6). Channels are clamped to [0,1] and scaled to [0,255]; a
// single-channel latent is replicated to grey, otherwise the first three
// channels are used.
std::vector<std::uint8_t> encode_ppm(const Latent& image);
Latent decode_ppm(std::span<const std::uint8_t> bytes);

void write_ppm(const std::filesystem::path& path, const Latent& image);
Latent read_ppm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace isoguide::io
