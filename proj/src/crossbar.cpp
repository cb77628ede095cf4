#include "memtrain/crossbar.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace memtrain {

Tile::Tile(const TileConfig& cfg) : config(cfg) {
    cfg.validate();
    const size_t n = static_cast<size_t>(cfg.rows) * cfg.cols;
    g_us.assign(n, 0.0);
    last_target_us.assign(n, std::numeric_limits<double>::quiet_NaN());
}

DeviceState Tile::cell(int r, int c) const {
    const size_t i = static_cast<size_t>(r) * config.cols + c;
    return DeviceState{g_us[i], last_target_us[i]};
}

void Tile::set_cell(int r, int c, const DeviceState& dev) {
    const size_t i = static_cast<size_t>(r) * config.cols + c;
    g_us[i] = dev.g_us;
    last_target_us[i] = dev.last_target_us;
}

std::vector<double> column_currents(const Tile& tile, const DeviceConfig& dev_cfg,
                                    std::span<const uint8_t> bits, VmmMode mode, Rng& read_rng) {
    const int rows = tile.rows();
    const int cols = tile.cols();
    if (static_cast<int>(bits.size()) != rows)
        throw DimensionMismatch("column_currents: bit vector length " +
                                std::to_string(bits.size()) + " != rows " + std::to_string(rows));

    std::vector<double> out(cols, 0.0);
    int n_active = 0;
    for (int r = 0; r < rows; ++r) {
        if (!bits[r]) continue;
        ++n_active;
        const double* gr = tile.g_us.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) out[c] += gr[c];
    }
    const double v = dev_cfg.v_read_v;
    for (int c = 0; c < cols; ++c) out[c] *= v;

    if (mode == VmmMode::Noisy && dev_cfg.sigma_read > 0.0 && n_active > 0) {
        const double sigma = dev_cfg.sigma_read * dev_cfg.level_separation_ua() *
                             std::sqrt(static_cast<double>(n_active));
        for (int c = 0; c < cols; ++c) out[c] = std::max(out[c] + read_rng.normal(0.0, sigma), 0.0);
    }
    return out;
}

namespace {

inline int quantize_code(double weighted_ua, const TileConfig& cfg) {
    // Multiply before dividing so full-scale half-codes land exactly on .5
    // and round away from zero, e.g. 35 uA at 70 uA full scale -> code 128.
    const double scaled = weighted_ua * cfg.code_max() / cfg.adc_i_max_ua;
    long code = std::lround(scaled);
    return static_cast<int>(std::clamp(code, 0L, static_cast<long>(cfg.code_max())));
}

} // namespace

int adc_convert(std::span<const double> cycle_currents_ua, const TileConfig& cfg, Rng& adc_rng) {
    if (static_cast<int>(cycle_currents_ua.size()) != cfg.dac_bits)
        throw DimensionMismatch("adc_convert: expected " + std::to_string(cfg.dac_bits) +
                                " cycle currents, got " + std::to_string(cycle_currents_ua.size()));
    double weighted = 0.0;
    for (int n = 0; n < cfg.dac_bits; ++n) {
        if (cycle_currents_ua[n] < 0.0)
            throw InputOutOfRange("adc_convert: negative cycle current");
        weighted += std::ldexp(cycle_currents_ua[n], n - cfg.dac_bits);
    }
    if (cfg.sigma_adc_ua > 0.0) weighted += adc_rng.normal(0.0, cfg.sigma_adc_ua);
    return quantize_code(weighted, cfg);
}

std::vector<int> tile_vmm(const Tile& tile, const DeviceConfig& dev_cfg,
                          std::span<const uint16_t> inputs, VmmMode mode,
                          Rng& read_rng, Rng& adc_rng) {
    const int rows = tile.rows();
    const int cols = tile.cols();
    const TileConfig& cfg = tile.config;
    if (static_cast<int>(inputs.size()) != rows)
        throw DimensionMismatch("tile_vmm: input length " + std::to_string(inputs.size()) +
                                " != rows " + std::to_string(rows));
    for (int r = 0; r < rows; ++r)
        if (inputs[r] > cfg.input_max())
            throw InputOutOfRange("tile_vmm: input " + std::to_string(inputs[r]) +
                                  " exceeds DAC range at row " + std::to_string(r));

    // Accumulate the binary-weighted sum of per-cycle column currents. The
    // read noise of all cycles is folded into one Gaussian per column with
    // the exact combined variance sum_b 4^(b-dac) * n_active_b * sigma_cell^2.
    std::vector<double> weighted(cols, 0.0);
    std::vector<double> cyc(cols);
    double noise_var_scale = 0.0; // in units of (sigma_read * level_sep)^2
    const double v = dev_cfg.v_read_v;
    for (int b = 0; b < cfg.dac_bits; ++b) {
        std::fill(cyc.begin(), cyc.end(), 0.0);
        int n_active = 0;
        for (int r = 0; r < rows; ++r) {
            if (!((inputs[r] >> b) & 1u)) continue;
            ++n_active;
            const double* gr = tile.g_us.data() + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) cyc[c] += gr[c];
        }
        const double w = std::ldexp(1.0, b - cfg.dac_bits);
        for (int c = 0; c < cols; ++c) weighted[c] += w * cyc[c] * v;
        noise_var_scale += w * w * n_active;
    }

    std::vector<int> codes(cols);
    if (mode == VmmMode::Noisy) {
        const double sigma_cell = dev_cfg.sigma_read * dev_cfg.level_separation_ua();
        const double sigma_read_total = sigma_cell * std::sqrt(noise_var_scale);
        for (int c = 0; c < cols; ++c) {
            double w = weighted[c];
            if (sigma_read_total > 0.0) w += read_rng.normal(0.0, sigma_read_total);
            if (cfg.sigma_adc_ua > 0.0) w += adc_rng.normal(0.0, cfg.sigma_adc_ua);
            codes[c] = quantize_code(w, cfg);
        }
    } else {
        for (int c = 0; c < cols; ++c) codes[c] = quantize_code(weighted[c], cfg);
    }
    return codes;
}

std::vector<int> tile_vmm_batch(const Tile& tile, const DeviceConfig& dev_cfg,
                                const uint16_t* inputs, int n, VmmMode mode,
                                StreamKey read_key, StreamKey adc_key, bool parallel) {
    const int rows = tile.rows();
    const int cols = tile.cols();
    std::vector<int> codes(static_cast<size_t>(n) * cols);

#pragma omp parallel for schedule(static) if (parallel)
    for (int i = 0; i < n; ++i) {
        Rng read_rng = read_key.sub(i).rng();
        Rng adc_rng = adc_key.sub(i).rng();
        std::span<const uint16_t> in(inputs + static_cast<size_t>(i) * rows, rows);
        std::vector<int> c = tile_vmm(tile, dev_cfg, in, mode, read_rng, adc_rng);
        std::copy(c.begin(), c.end(), codes.begin() + static_cast<size_t>(i) * cols);
    }
    return codes;
}

namespace {
constexpr char kMagic[4] = {'M', 'T', 'C', 'B'};

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
} // namespace

void save_tile(const Tile& tile, std::ostream& out) {
    out.write(kMagic, 4);
    put_u32(out, static_cast<uint32_t>(tile.rows()));
    put_u32(out, static_cast<uint32_t>(tile.cols()));
    out.write(reinterpret_cast<const char*>(tile.g_us.data()),
              static_cast<std::streamsize>(tile.g_us.size() * sizeof(double)));
}

Tile load_tile(std::istream& in, const TileConfig& cfg_template) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("tile snapshot: bad magic (expected MTCB)");
    const uint32_t rows = get_u32(in);
    const uint32_t cols = get_u32(in);
    if (!in) throw FormatError("tile snapshot: truncated header");
    TileConfig cfg = cfg_template;
    cfg.rows = static_cast<int>(rows);
    cfg.cols = static_cast<int>(cols);
    Tile tile(cfg);
    in.read(reinterpret_cast<char*>(tile.g_us.data()),
            static_cast<std::streamsize>(tile.g_us.size() * sizeof(double)));
    if (!in) throw FormatError("tile snapshot: truncated payload, expected " +
                               std::to_string(tile.g_us.size() * sizeof(double)) + " bytes");
    return tile;
}

void save_tile_file(const Tile& tile, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    save_tile(tile, out);
}

Tile load_tile_file(const std::string& path, const TileConfig& cfg_template) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return load_tile(in, cfg_template);
}

} // namespace memtrain
