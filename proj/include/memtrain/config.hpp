#pragma once

#include <map>
#include <string>
#include <vector>

#include "memtrain/analysis.hpp"
#include "memtrain/crossbar.hpp"
#include "memtrain/device.hpp"
#include "memtrain/mapping.hpp"
#include "memtrain/trainer.hpp"

namespace memtrain {

// Flat typed key-value configuration with one section per module.

struct DataConfig {
    std::string kind = "mnist"; // mnist | cifar10 | synthetic | synthetic-cifar
    std::string root;           // empty = $MEMTRAIN_DATA
    std::string train_images = "train-images-idx3-ubyte";
    std::string train_labels = "train-labels-idx1-ubyte";
    std::string test_images = "test-images-idx3-ubyte";
    std::string test_labels = "test-labels-idx1-ubyte";
    std::vector<std::string> cifar_train;
    std::vector<std::string> cifar_test;
    int synth_train = 8000;
    int synth_test = 2000;
};

struct TransferConfig {
    std::vector<double> sigmas = {0.5};
    int samples = 10;
    std::vector<std::string> models; // checkpoint directories
    int step_levels = 16;            // grid the noise step derives from
    int subset = 2560;
    double baseline_accuracy = 0.0;  // 0 = normalize to each model's reference accuracy
};

struct RunConfig {
    std::string model = "lenet";
    std::string out_dir = "out";
    int threads = 0; // 0 = library default
    TrainerConfig trainer;
    DeviceConfig device;
    TileConfig tile;
    MapConfig map; // weight_clip <= 0 means per-layer auto
    DataConfig data;
    CostModelConfig cost;
    TransferConfig transfer;
    int cost_input_bits = 8;
    int cost_weight_bits = 4;
};

// Parses the INI-style file; throws ConfigError on unknown sections/keys or
// malformed values. The [map] conductance window defaults to the device
// window; the [cost] tile geometry defaults to the [tile] section.
RunConfig load_config(const std::string& path);

// Parse from text (used by tests).
RunConfig parse_config(const std::string& text, const std::string& origin = "<memory>");

} // namespace memtrain
