#include "isoguide/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "isoguide/errors.hpp"

namespace isoguide::io {
namespace {


constexpr char kMagic[4] = {'I', 'L', 'T', 'D'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[off + static_cast<std::size_t>(i)]} << (8 * i);
    return v;
}

// Minimal netpbm header reader: magic, then `n_fields` whitespace-separated
// integers (comments allowed), then exactly one whitespace byte.
struct PnmHeader {
    std::vector<int> fields;
    std::size_t payload = 0;
};

PnmHeader read_pnm_header(std::span<const std::uint8_t> b, const char* magic, int n_fields) {
    if (b.size() < 2 || b[0] != static_cast<std::uint8_t>(magic[0]) ||
        b[1] != static_cast<std::uint8_t>(magic[1])) {
        throw FormatError(std::string("expected netpbm magic ") + magic);
    }
    PnmHeader h;
    std::size_t i = 2;
    while (static_cast<int>(h.fields.size()) < n_fields) {
        while (i < b.size() && (std::isspace(b[i]) || b[i] == '#')) {
            if (b[i] == '#') {
                while (i < b.size() && b[i] != '\n') ++i;
            } else {
                ++i;
            }
        }
        if (i >= b.size() || !std::isdigit(b[i])) throw FormatError("truncated or malformed netpbm header");
        long v = 0;
        while (i < b.size() && std::isdigit(b[i])) {
            v = v * 10 + (b[i] - '0');
            if (v > 1 << 24) throw FormatError("netpbm header value out of range");
            ++i;
        }
        h.fields.push_back(static_cast<int>(v));
    }
    if (i >= b.size() || !std::isspace(b[i])) throw FormatError("malformed netpbm header terminator");
    h.payload = i + 1;
    return h;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Latent& t) {
    if (!t.all_finite()) throw ValidationError("refusing to write non-finite tensor");
    std::vector<std::uint8_t> out;
    out.reserve(4 + 4 + 1 + 12 + 4 * t.size());
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, kTensorVersion);
    out.push_back(3);
    put_u32(out, static_cast<std::uint32_t>(t.shape().channels));
    put_u32(out, static_cast<std::uint32_t>(t.shape().height));
    put_u32(out, static_cast<std::uint32_t>(t.shape().width));
    for (float f : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

Latent decode_tensor(std::span<const std::uint8_t> b) {
    if (b.size() < 9) throw FormatError("tensor file truncated in header");
    if (std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError("tensor file has bad magic");
    const std::uint32_t version = get_u32(b, 4);
    if (version != kTensorVersion) {
        throw FormatError("unsupported tensor version " + std::to_string(version));
    }
    const int ndim = b[8];
    if (ndim < 1 || ndim > 3) throw FormatError("tensor ndim must be 1..3, got " + std::to_string(ndim));
    if (b.size() < 9 + 4 * static_cast<std::size_t>(ndim)) throw FormatError("tensor file truncated in dims");
    std::array<int, 3> dims{1, 1, 1};
    for (int d = 0; d < ndim; ++d) {
        const std::uint32_t v = get_u32(b, 9 + 4 * static_cast<std::size_t>(d));
        if (v == 0 || v > (1u << 24)) throw FormatError("tensor dim out of range");
        dims[static_cast<std::size_t>(3 - ndim + d)] = static_cast<int>(v);
    }
    const Shape shape{dims[0], dims[1], dims[2]};
    const std::size_t off = 9 + 4 * static_cast<std::size_t>(ndim);
    if (b.size() != off + 4 * shape.numel()) {
        throw FormatError(b.size() < off + 4 * shape.numel() ? "tensor payload truncated"
                                                            : "tensor payload has trailing bytes");
    }
    std::vector<float> data(shape.numel());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(get_u32(b, off + 4 * i));
    if (!std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); })) {
        throw FormatError("tensor payload contains non-finite values");
    }
    return Latent(shape, std::move(data));
}

std::vector<std::uint8_t> encode_mask_pgm(const Mask& m) {
    const std::string header =
        "P5\n" + std::to_string(m.width()) + " " + std::to_string(m.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (auto v : m.data()) out.push_back(v ? 255 : 0);
    return out;
}

Mask decode_mask_pgm(std::span<const std::uint8_t> b) {
    const auto h = read_pnm_header(b, "P5", 3);
    const int w = h.fields[0], hgt = h.fields[1], maxval = h.fields[2];
    if (w <= 0 || hgt <= 0) throw FormatError("mask dims must be positive");
    if (maxval != 255) throw FormatError("mask PGM maxval must be 255");
    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(hgt);
    if (b.size() != h.payload + n) throw FormatError("mask PGM payload size mismatch");
    std::vector<std::uint8_t> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto v = b[h.payload + i];
        if (v != 0 && v != 255) {
            throw ValidationError("mask pixel value " + std::to_string(v) + " is neither 0 nor 255");
        }
        data[i] = v ? 1 : 0;
    }
    return Mask(hgt, w, std::move(data));
}

std::vector<std::uint8_t> encode_ppm(const Latent& image) {
    const auto& s = image.shape();
    if (s.channels != 1 && s.channels < 3) {
        throw ShapeError("PPM export needs 1 or >= 3 channels, got " + std::to_string(s.channels));
    }
    const std::string header = "P6\n" + std::to_string(s.width) + " " + std::to_string(s.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + 3 * s.plane());
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = image.at(s.channels == 1 ? 0 : c, y, x);
                const float clamped = std::clamp(v, 0.0f, 1.0f);
                out.push_back(static_cast<std::uint8_t>(std::lround(clamped * 255.0f)));
            }
        }
    }
    return out;
}

Latent decode_ppm(std::span<const std::uint8_t> b) {
    const auto h = read_pnm_header(b, "P6", 3);
    const int w = h.fields[0], hgt = h.fields[1], maxval = h.fields[2];
    if (w <= 0 || hgt <= 0) throw FormatError("PPM dims must be positive");
    if (maxval != 255) throw FormatError("PPM maxval must be 255");
    const Shape s{3, hgt, w};
    if (b.size() != h.payload + 3 * s.plane()) throw FormatError("PPM payload size mismatch");
    Latent out(s);
    std::size_t i = h.payload;
    for (int y = 0; y < hgt; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(b[i++]) / 255.0f;
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Latent& t) { write_file(path, encode_tensor(t)); }
Latent read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }
void write_mask(const std::filesystem::path& path, const Mask& m) { write_file(path, encode_mask_pgm(m)); }
Mask read_mask(const std::filesystem::path& path) { return decode_mask_pgm(read_file(path)); }
void write_ppm(const std::filesystem::path& path, const Latent& image) { write_file(path, encode_ppm(image)); }
Latent read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }

}  // namespace isoguide::io
