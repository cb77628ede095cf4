#pragma once

#include <functional>
#include <string>
#include <vector>

#include "memtrain/mapping.hpp"
#include "memtrain/netcore.hpp"

namespace memtrain {

// The mixed-precision loop: analog forward passes, FP32 gradients against
// the digital weight copy W_FP, per-batch accumulation into dW_FP, and
// thresholded write-and-verify device updates.

enum class TrainMode { Mixed, Naive, Software, Qat };

struct TrainerConfig {
    TrainMode mode = TrainMode::Mixed;
    int batch_size = 64;
    int batches_per_epoch = 400;
    int max_epochs = 25;
    double lr = 0.004;
    double weight_decay = 1e-4;
    bool plateau = false;
    int patience = 5;
    double lr_factor = 0.5;
    bool train_alpha = true;
    int qat_levels = 16;
    // Update-threshold quantum in weight-precision levels; 0 = the device's
    // n_levels. The paper's 2-bit LeNet granularity bounds how often devices
    // are written, not how precisely write-and-verify can place them.
    int granularity_levels = 0;
    int test_subset = 2560; // 0 = full test set
    bool init_from_devices = true;
    double init_lo_ua = 0.82;
    double init_hi_ua = 2.0;
    bool stop_on_zero_updates = true;
    double early_stop_accuracy = 0.0; // 0 = disabled
    bool parallel = true;
    uint64_t seed = 1;
};

// Per-layer mixed-precision bookkeeping for one mapped conv/fc node.
struct CimLayer {
    int node = -1;
    int w_param = -1;     // W_FP
    int alpha_param = -1; // per-tile trainable scale factors
    LayerMapping mapping;
    Tensor dw_acc; // accumulated updates, same shape as W_FP
    std::vector<uint32_t> update_count;
    std::vector<uint8_t> unverified; // weight pairs whose last programming missed the window
    double theta = 0.0;              // update threshold, weight units
    double act_scale = 0.0;          // input quantization scale (0 until calibrated)
    long prog_attempts = 0;          // verify trials this epoch
    long prog_programmed = 0;
    long prog_verified = 0;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    long weight_updates = 0;
    long prog_attempts = 0;
    double verified_fraction = 1.0;
    double lr = 0.0;
};

struct ConfusionMatrix {
    int classes = 0;
    std::vector<long> counts; // classes x classes, [true][pred]

    explicit ConfusionMatrix(int c = 0) : classes(c), counts(static_cast<size_t>(c) * c, 0) {}
    long& at(int t, int p) { return counts[static_cast<size_t>(t) * classes + p]; }
    long at(int t, int p) const { return counts[static_cast<size_t>(t) * classes + p]; }
};

struct EvalResult {
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    long samples = 0;
};

enum class EvalMode { Cim, CimIdeal, Reference };

struct TrainState {
    ModelSpec model;
    ParamSet params;
    AdamW opt;
    std::vector<CimLayer> cim;
    TrainerConfig cfg;
    DeviceConfig dev_cfg;
    TileConfig tile_cfg;
    MapConfig map_cfg;
    StreamKey root;
    PlateauScheduler sched;
    long long total_updates = 0;
    long long total_batches = 0;
    int epoch = 0;
    // shuffled-index cycle over the training set
    std::vector<uint32_t> perm;
    size_t perm_pos = 0;
    uint64_t reshuffles = 0;

    long n_cim_weights() const {
        long n = 0;
        for (const auto& l : cim) n += static_cast<long>(l.dw_acc.numel());
        return n;
    }
};

// Update threshold: the weight-space image of one conductance level
// separation under the signed dual-column span, (2 * weight_clip) / (n_levels - 1).
double threshold_for(const DeviceConfig& dev_cfg, const MapConfig& map_cfg);

// Build a fresh training state. Device-initialized runs draw random
// conductances and read W_FP out of the arrays; software-initialized runs
// map Kaiming weights onto the devices.
TrainState make_state(const ModelSpec& model, const TrainerConfig& cfg,
                      const DeviceConfig& dev_cfg, const TileConfig& tile_cfg,
                      const MapConfig& map_cfg);

// One batch: CIM forward, digital backward on W_FP, optimizer proposal,
// accumulation into dW_FP (devices untouched). Returns the batch loss.
double train_batch(TrainState& st, const Tensor& x, const std::vector<uint8_t>& labels,
                   int batch_index);

// Thresholded transfer: weights with |dW_FP| >= theta are programmed to
// clip(W_FP + dW_FP), W_FP takes the theoretical value even when
// verification fails, and the accumulator resets. Returns weights updated.
long apply_threshold_updates(TrainState& st, int batch_index);

// Naive baseline: every weight reprogrammed to W_FP + delta each batch, no
// accumulation. Returns weights programmed (all of them).
long apply_naive_updates(TrainState& st, int batch_index);

EvalResult evaluate(TrainState& st, const Tensor& images, const std::vector<uint8_t>& labels,
                    EvalMode mode, int subset, uint64_t eval_id);

// Calibrate activation quantization scales with a reference-mode forward
// over a calibration batch (used when mapping an externally trained model).
void calibrate_act_scales(TrainState& st, const Tensor& sample);

using EpochCallback = std::function<void(const EpochStats&)>;

// Full training run: per epoch, batches_per_epoch batches (train_batch then
// the per-batch update pass), test evaluation, optional plateau scheduling.
// Stops at max_epochs, on a zero-update epoch, or at early_stop_accuracy.
std::vector<EpochStats> run_training(TrainState& st, const Tensor& train_x,
                                     const std::vector<uint8_t>& train_y, const Tensor& test_x,
                                     const std::vector<uint8_t>& test_y,
                                     const EpochCallback& on_epoch = {});

// Checkpointing: parameter tensors, dW_FP, optimizer state, counters and
// activation scales in the named-tensor file, device snapshots alongside.
void save_checkpoint(const TrainState& st, const std::string& dir);
void load_checkpoint(TrainState& st, const std::string& dir);

} // namespace memtrain
