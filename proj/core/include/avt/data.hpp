#pragma once

#include "avt/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace avt {

// Immutable after load; safe to read from any number of threads.
struct Dataset {
    std::vector<int> sample_shape;  // [C,H,W] for images, [d] for flat inputs
    std::vector<Tensor> inputs;     // all values in [0,1]
    std::vector<int> labels;        // 0 .. n_classes-1
    int n_classes = 0;
    std::string name;

    std::size_t size() const { return inputs.size(); }
};

struct BlobSpec {
    int n_classes = 0;
    int input_dim = 0;
    std::vector<std::vector<double>> class_centers; // one vector per class
    double noise_stddev = 0.0;
    int samples_per_class = 0;
    std::uint64_t seed = 0;
};

// IDX image/label pair (big-endian headers, unsigned bytes scaled by 1/255).
// Image magic 0x00000803, label magic 0x00000801.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// All *.bin files in the directory, each a sequence of 3073-byte records
// (1 label byte + 3072 channel-major pixel bytes, 32x32 RGB).
Dataset load_cifar10(const std::string& directory);

// Gaussian point clouds around the class centers, clipped to [0,1].
// Byte-identical output for equal specs.
Dataset synth_blobs(const BlobSpec& spec);

// Writes a dataset in IDX layout (values quantized to the nearest 1/255 step,
// which is lossless exactly when values already lie on that grid). Supports
// single-channel image shapes and flat shapes (written as [N,1,d]).
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

struct Batch {
    Tensor inputs;            // [B, ...sample_shape]
    std::vector<int> labels;
    std::vector<int> indices; // positions in the source dataset
};

// Seeded per-epoch permutation (seed combined with epoch_index); the last
// batch may be short and the union of batches is the whole dataset.
std::vector<Batch> batches(const Dataset& ds, int batch_size, std::uint64_t seed, int epoch_index);

// Assembles one batch from explicit sample indices (used by NDT node training
// and the evaluators).
Batch make_batch(const Dataset& ds, const std::vector<int>& indices);

BlobSpec blob_spec_from_json_text(const std::string& text);
std::string blob_spec_to_json_text(const BlobSpec& spec);

} // namespace avt
