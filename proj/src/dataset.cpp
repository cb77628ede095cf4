#include "memtrain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "memtrain/errors.hpp"
#include "memtrain/rng.hpp"

namespace memtrain {

Tensor Dataset::to_float() const {
    Tensor t({n, channels, height, width});
    const float inv = 1.0f / 255.0f;
    for (size_t i = 0; i < images.size(); ++i) t[i] = images[i] * inv;
    return t;
}

Dataset Dataset::slice(int begin, int count) const {
    Dataset out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.n = std::min(count, n - begin);
    const size_t sz = static_cast<size_t>(channels) * height * width;
    out.images.assign(images.begin() + static_cast<long>(begin) * sz,
                      images.begin() + static_cast<long>(begin + out.n) * sz);
    out.labels.assign(labels.begin() + begin, labels.begin() + begin + out.n);
    return out;
}

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> buf(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(buf.data()), size);
    if (!in) throw DataError("short read from " + path);
    return buf;
}

uint32_t be32(const std::vector<uint8_t>& buf, size_t off, const std::string& path) {
    if (off + 4 > buf.size())
        throw FormatError(path + ": truncated at byte offset " + std::to_string(off) +
                          " (need 4 bytes, have " + std::to_string(buf.size() - off) + ")");
    return (static_cast<uint32_t>(buf[off]) << 24) | (static_cast<uint32_t>(buf[off + 1]) << 16) |
           (static_cast<uint32_t>(buf[off + 2]) << 8) | static_cast<uint32_t>(buf[off + 3]);
}

} // namespace

Dataset load_mnist(const std::string& images_path, const std::string& labels_path) {
    const auto ibuf = read_file(images_path);
    const uint32_t imagic = be32(ibuf, 0, images_path);
    if (imagic != 0x00000803u)
        throw FormatError(images_path + ": bad magic 0x" + std::to_string(imagic) +
                          " at byte offset 0 (expected 0x803 IDX3)");
    const uint32_t n = be32(ibuf, 4, images_path);
    const uint32_t rows = be32(ibuf, 8, images_path);
    const uint32_t cols = be32(ibuf, 12, images_path);
    const size_t expected = 16 + static_cast<size_t>(n) * rows * cols;
    if (ibuf.size() != expected)
        throw FormatError(images_path + ": expected " + std::to_string(expected) +
                          " bytes, have " + std::to_string(ibuf.size()));

    const auto lbuf = read_file(labels_path);
    const uint32_t lmagic = be32(lbuf, 0, labels_path);
    if (lmagic != 0x00000801u)
        throw FormatError(labels_path + ": bad magic 0x" + std::to_string(lmagic) +
                          " at byte offset 0 (expected 0x801 IDX1)");
    const uint32_t ln = be32(lbuf, 4, labels_path);
    if (ln != n)
        throw FormatError(labels_path + ": " + std::to_string(ln) + " labels for " +
                          std::to_string(n) + " images");
    if (lbuf.size() != 8 + static_cast<size_t>(ln))
        throw FormatError(labels_path + ": expected " + std::to_string(8 + ln) + " bytes, have " +
                          std::to_string(lbuf.size()));

    Dataset d;
    d.n = static_cast<int>(n);
    d.channels = 1;
    d.height = static_cast<int>(rows);
    d.width = static_cast<int>(cols);
    d.images.assign(ibuf.begin() + 16, ibuf.end());
    d.labels.assign(lbuf.begin() + 8, lbuf.end());
    for (size_t i = 0; i < d.labels.size(); ++i)
        if (d.labels[i] > 9)
            throw FormatError(labels_path + ": label " + std::to_string(d.labels[i]) +
                              " out of range at index " + std::to_string(i));
    return d;
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
    constexpr size_t kRecord = 3073; // label + 3 * 1024 pixels
    Dataset d;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    for (const auto& path : batch_paths) {
        const auto buf = read_file(path);
        if (buf.size() % kRecord != 0)
            throw FormatError(path + ": size " + std::to_string(buf.size()) +
                              " is not a multiple of " + std::to_string(kRecord));
        const size_t records = buf.size() / kRecord;
        for (size_t r = 0; r < records; ++r) {
            const uint8_t label = buf[r * kRecord];
            if (label > 9)
                throw FormatError(path + ": label " + std::to_string(label) + " out of range in record " +
                                  std::to_string(r));
            d.labels.push_back(label);
            d.images.insert(d.images.end(), buf.begin() + static_cast<long>(r * kRecord + 1),
                            buf.begin() + static_cast<long>((r + 1) * kRecord));
        }
        d.n += static_cast<int>(records);
    }
    return d;
}

namespace {

// 5x7 glyphs; rows top to bottom, 5 bits each.
const char* kGlyphs[10][7] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"}};

double glyph_coverage(int digit, double u, double v) {
    // u, v in glyph units (0..5, 0..7); bilinear over the binary bitmap
    const int iu = static_cast<int>(std::floor(u - 0.5));
    const int iv = static_cast<int>(std::floor(v - 0.5));
    const double fu = (u - 0.5) - iu;
    const double fv = (v - 0.5) - iv;
    auto cell = [&](int cu, int cv) -> double {
        if (cu < 0 || cu >= 5 || cv < 0 || cv >= 7) return 0.0;
        return kGlyphs[digit][cv][cu] == '1' ? 1.0 : 0.0;
    };
    return cell(iu, iv) * (1 - fu) * (1 - fv) + cell(iu + 1, iv) * fu * (1 - fv) +
           cell(iu, iv + 1) * (1 - fu) * fv + cell(iu + 1, iv + 1) * fu * fv;
}

} // namespace

Dataset synth_digits(int n, uint64_t seed) {
    Dataset d;
    d.n = n;
    d.channels = 1;
    d.height = 28;
    d.width = 28;
    d.images.assign(static_cast<size_t>(n) * 784, 0);
    d.labels.resize(static_cast<size_t>(n));
    StreamKey key = root_key(seed ^ 0x5d1f00d5u);

    std::vector<double> raw(784);
    for (int i = 0; i < n; ++i) {
        Rng rng = key.sub(static_cast<uint64_t>(i)).rng();
        const int digit = static_cast<int>(rng.below(10));
        d.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(digit);

        const double theta = rng.uniform(-0.22, 0.22);
        const double shear = rng.uniform(-0.18, 0.18);
        const double sx = rng.uniform(2.4, 3.4);  // glyph-cell size in pixels
        const double sy = rng.uniform(2.4, 3.1);
        const double cxs = 14.0 + rng.uniform(-2.0, 2.0);
        const double cys = 14.0 + rng.uniform(-2.0, 2.0);
        const double amp = rng.uniform(0.75, 1.0);
        const double ct = std::cos(theta), st = std::sin(theta);

        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x) {
                const double dx = x - cxs;
                const double dy = y - cys;
                const double rx = ct * dx + st * dy;
                const double ry = -st * dx + ct * dy;
                const double u = (rx + shear * ry) / sx + 2.5;
                const double v = ry / sy + 3.5;
                raw[static_cast<size_t>(y) * 28 + x] = amp * glyph_coverage(digit, u, v);
            }
        // one smoothing pass plus pixel noise
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x) {
                double acc = 0.0, wsum = 0.0;
                for (int oy = -1; oy <= 1; ++oy)
                    for (int ox = -1; ox <= 1; ++ox) {
                        const int yy = y + oy, xx = x + ox;
                        if (yy < 0 || yy >= 28 || xx < 0 || xx >= 28) continue;
                        const double w = (ox == 0 && oy == 0) ? 2.0 : 1.0;
                        acc += w * raw[static_cast<size_t>(yy) * 28 + xx];
                        wsum += w;
                    }
                double v = acc / wsum * 255.0 + rng.normal(0.0, 6.0);
                v = std::clamp(v, 0.0, 255.0);
                d.images[(static_cast<size_t>(i) * 784) + static_cast<size_t>(y) * 28 + x] =
                    static_cast<uint8_t>(std::lround(v));
            }
    }
    return d;
}

Dataset synth_textures(int n, uint64_t seed) {
    Dataset d;
    d.n = n;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    d.images.assign(static_cast<size_t>(n) * 3 * 1024, 0);
    d.labels.resize(static_cast<size_t>(n));
    StreamKey key = root_key(seed ^ 0xc1fa7700u);

    for (int i = 0; i < n; ++i) {
        Rng rng = key.sub(static_cast<uint64_t>(i)).rng();
        const int cls = static_cast<int>(rng.below(10));
        d.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(cls);

        // class-specific orientation, frequency and palette with per-sample jitter
        const double angle = cls * 0.31415 + rng.uniform(-0.1, 0.1);
        const double freq = 0.25 + 0.09 * (cls % 5) + rng.uniform(-0.02, 0.02);
        const double phase = rng.uniform(0.0, 6.28318);
        const double cx = rng.uniform(10.0, 22.0), cy = rng.uniform(10.0, 22.0);
        const double blob_r = 5.0 + (cls % 3) * 2.5;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double base[3] = {80.0 + 17.0 * ((cls * 3) % 10), 80.0 + 17.0 * ((cls * 7 + 3) % 10),
                                80.0 + 17.0 * ((cls * 5 + 6) % 10)};

        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const double t = std::sin(freq * (ca * x + sa * y) * 3.1415 + phase);
                const double rr = std::hypot(x - cx, y - cy);
                const double blob = std::exp(-rr * rr / (2.0 * blob_r * blob_r));
                for (int ch = 0; ch < 3; ++ch) {
                    double v = base[ch] * (0.55 + 0.45 * t) + 70.0 * blob * ((cls + ch) % 2 ? 1.0 : -0.5) +
                               rng.normal(0.0, 9.0);
                    v = std::clamp(v, 0.0, 255.0);
                    d.images[((static_cast<size_t>(i) * 3 + ch) * 1024) + static_cast<size_t>(y) * 32 + x] =
                        static_cast<uint8_t>(std::lround(v));
                }
            }
    }
    return d;
}

} // namespace memtrain
