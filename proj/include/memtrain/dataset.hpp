#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memtrain/tensor.hpp"

namespace memtrain {

struct Dataset {
    int n = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<uint8_t> images; // n * c * h * w, pixel values 0..255
    std::vector<uint8_t> labels; // n class indices

    // Pixels scaled to [0, 1], shape [n, c, h, w].
    Tensor to_float() const;
    Dataset slice(int begin, int count) const;
};

// IDX format, parsed bit-exactly: big-endian magic 0x00000803 for images
// (dims n, rows, cols), 0x00000801 for labels. FormatError messages carry
// the offending byte offset or the expected vs available byte counts.
Dataset load_mnist(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (R, G, B planes of 32x32). Batches concatenate.
Dataset load_cifar10(const std::vector<std::string>& batch_paths);

// Deterministic procedural stand-ins used by tests and by runs where the
// real datasets are not on disk: affine-warped glyph digits (1x28x28) and
// textured color classes (3x32x32).
Dataset synth_digits(int n, uint64_t seed);
Dataset synth_textures(int n, uint64_t seed);

} // namespace memtrain
