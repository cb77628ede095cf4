#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "memtrain/device.hpp"

namespace memtrain {

// One 1T1R tile: rows x cols devices behind per-row DACs and column-shared
// TIA+ADC groups. Inputs are applied as dac_bits 1-bit pulse trains; the ADC
// binary-weights the per-cycle column currents and digitizes the sum once.
struct TileConfig {
    int rows = 64;
    int cols = 64;
    int dac_bits = 8;
    int adc_bits = 8;
    double adc_i_max_ua = 70.0; // full-scale weighted current
    double sigma_adc_ua = 0.0;  // conversion-noise std
    int group_size = 8;         // columns per shared ADC (latency accounting only)

    int code_max() const { return (1 << adc_bits) - 1; }
    int input_max() const { return (1 << dac_bits) - 1; }

    void validate() const {
        if (rows < 1 || cols < 1) throw ConfigError("tile: rows/cols must be >= 1");
        if (group_size < 1 || cols % group_size != 0)
            throw ConfigError("tile: cols must be divisible by group_size");
        if (!(adc_i_max_ua > 0.0)) throw ConfigError("tile: adc_i_max must be > 0");
        if (sigma_adc_ua < 0.0) throw ConfigError("tile: sigma_adc must be >= 0");
        if (dac_bits < 1 || dac_bits > 16 || adc_bits < 1 || adc_bits > 16)
            throw ConfigError("tile: dac/adc bits out of range");
    }
};

// Device conductances are stored as flat arrays (row-major) rather than
// per-cell structs so the VMM inner loops stream contiguously.
struct Tile {
    TileConfig config;
    std::vector<double> g_us;          // rows*cols conductances
    std::vector<double> last_target_us; // NaN until programmed

    Tile() = default;
    explicit Tile(const TileConfig& cfg);

    int rows() const { return config.rows; }
    int cols() const { return config.cols; }

    DeviceState cell(int r, int c) const;
    void set_cell(int r, int c, const DeviceState& dev);

    double& g_at(int r, int c) { return g_us[static_cast<size_t>(r) * config.cols + c]; }
    double g_at(int r, int c) const { return g_us[static_cast<size_t>(r) * config.cols + c]; }
};

enum class VmmMode { Ideal, Noisy };

// Per-column currents for one binary input vector: I_j = sum_i b_i * I(cell_ij).
// In noisy mode the per-cell read noises are drawn as one Gaussian per column
// with std sigma_read * level_sep * sqrt(n_active); the sum of independent
// per-cell noises has exactly this distribution.
std::vector<double> column_currents(const Tile& tile, const DeviceConfig& dev_cfg,
                                    std::span<const uint8_t> bits, VmmMode mode, Rng& read_rng);

// Binary-weighted multi-cycle conversion: cycle n (1-based, carrying input
// bit n) contributes with weight 2^(n - 1 - dac_bits); the weighted sum gets
// one Gaussian of std sigma_adc and is quantized to adc_bits.
int adc_convert(std::span<const double> cycle_currents_ua, const TileConfig& cfg, Rng& adc_rng);

// Full bit-serial VMM: dac_bits-wide unsigned inputs, one 8-bit code per
// column. Read noise and ADC noise come from separate streams so either can
// be ablated without perturbing the other's draw sequence.
std::vector<int> tile_vmm(const Tile& tile, const DeviceConfig& dev_cfg,
                          std::span<const uint16_t> inputs, VmmMode mode,
                          Rng& read_rng, Rng& adc_rng);

// Batched tile_vmm over n input vectors (row-major, n x rows). Each sample
// derives its own noise streams from the keys, so serial and OpenMP
// execution produce identical codes.
std::vector<int> tile_vmm_batch(const Tile& tile, const DeviceConfig& dev_cfg,
                                const uint16_t* inputs, int n, VmmMode mode,
                                StreamKey read_key, StreamKey adc_key, bool parallel);

// Snapshot format: magic "MTCB", rows and cols as u32 little-endian, then
// row-major float64 conductances in uS.
void save_tile(const Tile& tile, std::ostream& out);
Tile load_tile(std::istream& in, const TileConfig& cfg_template);
void save_tile_file(const Tile& tile, const std::string& path);
Tile load_tile_file(const std::string& path, const TileConfig& cfg_template);

} // namespace memtrain
