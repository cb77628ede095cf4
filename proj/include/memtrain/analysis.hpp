#pragma once

#include <string>
#include <vector>

#include "memtrain/netcore.hpp"
#include "memtrain/trainer.hpp"

namespace memtrain {

// Analytic energy/latency model and the weight-transfer robustness protocol.

struct CostModelConfig {
    int tile_rows = 64;
    int tile_cols = 64;
    int dac_bits = 8;
    int adc_bits = 8;
    int group_size = 8;
    double e_tile_op_nj = 2.66; // energy per full-tile VMM
    double clock_mhz = 100.0;
    double t_op_us = 0.0;             // 0 = derived: (dac_bits+1)*(cols/group_size)/clock
    std::vector<int> copies;          // per mapped-layer replication factor (empty = none)

    double op_time_us() const {
        if (t_op_us > 0.0) return t_op_us;
        return (dac_bits + 1) * (static_cast<double>(tile_cols) / group_size) / clock_mhz;
    }
};

struct LayerResources {
    int node = -1;
    long positions = 0;
    int tiles = 0;
    int copies = 1;
    long weights = 0;
    // per-tile footprint (used rows x used device columns) for copy packing
    std::vector<std::pair<int, int>> tile_dims;
};

struct ResourceCount {
    long devices = 0;
    long long flops = 0; // 2 * MACs
    int crossbars = 0;
    int crossbars_with_copies = 0;
    long ops = 0;      // sequential VMM steps per image
    long tile_ops = 0; // tile activations per image
    std::vector<LayerResources> layers;
};

ResourceCount count_resources(const ModelSpec& model, const CostModelConfig& cost);

struct CostReport {
    std::string model;
    long devices = 0;
    long long flops = 0;
    int crossbars = 0;
    int crossbars_with_copies = 0;
    long ops = 0;
    long tile_ops = 0;
    double latency_ms = 0.0;
    double pipelined_ms = 0.0;
    double copies_ms = 0.0;
    double energy_mj = 0.0;
    double peak_tops_w = 0.0;
    double norm_tops_w = 0.0;
};

enum class LatencyMode { Serial, Pipelined, PipelinedWithCopies };

// Energy = tile_ops * e_tile_op regardless of mode; latency depends on it:
// serial sums every op, pipelining is bound by the slowest layer, and layer
// copies divide that layer's effective op count.
CostReport energy_latency(const ModelSpec& model, const CostModelConfig& cost, int input_bits = 8,
                          int weight_bits = 4);

// (peak, normalized): peak = 2*rows*cols / e_tile_op in TOPS/W; normalized
// scales by input_bits * weight_bits.
std::pair<double, double> tops_per_watt(const CostModelConfig& cost, int input_bits,
                                        int weight_bits);

std::string cost_report_csv_header();
std::string cost_report_csv_row(const CostReport& r);

// ---- weight-transfer robustness (boxplot protocol) ----

// Perturb every conv/fc weight by N(0, sigma * step) where step is the
// weight-space image of one conductance level, then clip to the mappable
// range. sigma is in level-separation units.
void inject_transfer_noise(ParamSet& params, const ModelSpec& model, double sigma, double step,
                           double clip, Rng& rng);

struct TransferRecord {
    std::string model;
    double sigma = 0.0;
    int trial = 0;
    double accuracy = 0.0;
    double normalized = 0.0;
};

struct TransferSummary {
    std::string model;
    double sigma = 0.0;
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0; // of normalized accuracy
};

// Quartiles with linear interpolation over the sorted sample.
TransferSummary summarize(const std::string& model, double sigma,
                          const std::vector<double>& normalized);

// One transferred-chip evaluation: perturb the checkpoint weights by
// N(0, sigma * step) with step the per-layer weight image of one grid level
// (2 * clip / (step_levels - 1)), map them onto fresh ideal-programmed
// arrays (the injected noise is the programming error model) and run a noisy
// CIM evaluation.
double transfer_trial(const ModelSpec& model, const ParamSet& trained, const TrainerConfig& tcfg,
                      const DeviceConfig& dev_cfg, const TileConfig& tile_cfg,
                      const MapConfig& map_cfg, double sigma, int step_levels, const Tensor& test_x,
                      const std::vector<uint8_t>& test_y, int subset, uint64_t trial_seed);

} // namespace memtrain
