#pragma once

#include <optional>
#include <vector>

#include "memtrain/crossbar.hpp"
#include "memtrain/tensor.hpp"

namespace memtrain {

// Signed-weight to conductance conversion and the tiling of layers onto
// crossbars: dual-column pairs, im2col unrolling, row slicing across tiles,
// and partial-sum recombination with per-tile scale factors.
struct MapConfig {
    double g_min_us = 10.0;
    double g_max_us = 70.0;
    double weight_clip = 1.0; // |w| mapped onto (g_max - g_min)
    int tile_rows = 64;
    int tile_cols = 64;

    double scale() const { return (g_max_us - g_min_us) / weight_clip; }

    void validate() const {
        if (!(g_min_us > 0.0) || !(g_max_us > g_min_us))
            throw ConfigError("map: need g_max > g_min > 0");
        if (!(weight_clip > 0.0)) throw ConfigError("map: weight_clip must be > 0");
        if (tile_rows < 1 || tile_cols < 2) throw ConfigError("map: tile too small for dual columns");
    }
};

// Conductances stay double precision on the analog side.
struct PairedConductances {
    std::vector<int> shape;
    std::vector<double> g_pos; // uS
    std::vector<double> g_neg;
    double scale = 0.0; // uS per weight unit
};

// w >= 0 drives the positive column above g_min, w <= 0 the negative one;
// both rest at g_min so the digital subtraction cancels the offset.
// Weights beyond +/-weight_clip saturate.
PairedConductances weights_to_pairs(const Tensor& w, const MapConfig& cfg);
Tensor pairs_to_weights(const PairedConductances& pc, const MapConfig& cfg);
Tensor pairs_to_weights(const Tensor& g_pos, const Tensor& g_neg, const MapConfig& cfg);

// im2col: row p of the result is the flattened receptive field of sliding
// position p, ordered channel-major then kernel row then kernel column.
// Input is C x H x W (row-major), output positions x (C*k*k).
Tensor im2col(const Tensor& input, int k, int stride, int pad);

// Output spatial size of a k x k window over an n-wide input.
int conv_out_dim(int n, int k, int stride, int pad);

struct RowSlice {
    int begin = 0;
    int end = 0; // half-open, in weight-row units
    int size() const { return end - begin; }
};

struct ColGroup {
    int begin = 0;
    int end = 0; // half-open, in weight-column units
    int size() const { return end - begin; }
};

// Tiling skeleton for one fan_in x fan_out layer. Rows are sliced in units
// of `row_block` (the im2col footprint k*k of one input channel) so a
// receptive-field block never straddles two tiles; row_block = 1 for fully
// connected layers. Column groups hold floor(tile_cols/2) weight columns.
struct TilingPlan {
    std::vector<RowSlice> row_slices;
    std::vector<ColGroup> col_groups;
    int tiles() const { return static_cast<int>(row_slices.size() * col_groups.size()); }
};

TilingPlan plan_tiling(int fan_in, int fan_out, const MapConfig& cfg, int row_block = 1);

// A mapped layer: one programmed tile per (row slice, column group), plus a
// trainable scale factor per tile that converts summed signed codes back to
// activation units.
struct LayerMapping {
    MapConfig map_cfg;
    TileConfig tile_cfg;
    int fan_in = 0;
    int fan_out = 0;
    TilingPlan plan;
    std::vector<Tile> tiles;  // row-major over (slice, group)
    std::vector<double> alpha; // per tile, trainable
    double weight_clip = 0.0;  // frozen at first mapping
    double scale = 0.0;        // uS per weight unit

    int tile_index(int slice, int group) const {
        return slice * static_cast<int>(plan.col_groups.size()) + group;
    }
    Tile& tile_at(int slice, int group) { return tiles[tile_index(slice, group)]; }
    const Tile& tile_at(int slice, int group) const { return tiles[tile_index(slice, group)]; }

    // Device columns of weight column j (relative to its group): pair (2j', 2j'+1).
    static int pos_col(int j_rel) { return 2 * j_rel; }
    static int neg_col(int j_rel) { return 2 * j_rel + 1; }
};

struct ProgramStats {
    long attempts = 0;  // verify trials consumed
    long programmed = 0; // devices written
    long verified = 0;   // devices that landed in the verify window
};

// Build a mapping for weight matrix w (fan_in x fan_out) and program every
// device pair. weight_clip: explicit when > 0, otherwise max|w| at mapping
// time. sigma override: program noiselessly when `ideal_program` is set
// (used for transfer experiments that inject their own perturbation).
LayerMapping map_layer(const Tensor& w, const MapConfig& map_cfg, const TileConfig& tile_cfg,
                       const DeviceConfig& dev_cfg, int row_block, StreamKey prog_key,
                       bool ideal_program = false, ProgramStats* stats = nullptr);

// Program the device pair of one weight (global weight-matrix coordinates).
void program_weight(LayerMapping& m, const DeviceConfig& dev_cfg, int row, int col,
                    double w_value, Rng& prog_rng, bool ideal_program = false,
                    ProgramStats* stats = nullptr);

// Noiseless readout of the whole mapped matrix back to weight units.
Tensor read_weights(const LayerMapping& m);

// The de-quantization gain that makes an ideal CIM output equal the
// full-precision product for inputs quantized with `act_scale`:
//   y = signed_code * act_scale * 2^dac_bits * lsb / (scale * v_read).
double dequant_gain(const LayerMapping& m, const DeviceConfig& dev_cfg, double act_scale);

// CIM forward over a batch of pre-quantized activation rows (n x fan_in
// codes). Per tile: bit-serial VMM, digital pos-neg subtraction, partial
// sums over row slices, then the per-tile alpha. Results are in
// weight*activation units. Per-sample noise substreams keep parallel and
// serial execution identical. When `signed_sums` is non-null it receives the
// per-slice signed code sums (n x fan_out per slice) for the alpha gradient.
Tensor cim_linear_forward(const LayerMapping& m, const DeviceConfig& dev_cfg,
                          const std::vector<uint16_t>& codes, int n, double act_scale,
                          VmmMode mode, StreamKey read_key, StreamKey adc_key,
                          bool parallel = true,
                          std::vector<std::vector<int16_t>>* signed_sums = nullptr);

// JSON manifest of the mapping geometry (tile dims, row slices, column
// groups, alpha, weight_clip).
std::string mapping_manifest_json(const LayerMapping& m);

} // namespace memtrain
