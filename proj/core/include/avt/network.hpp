#pragma once

#include "avt/data.hpp"
#include "avt/tensor.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace avt {

struct DenseSpec {
    int in = 0;
    int out = 0;
};
struct Conv2DSpec {
    int in_ch = 0;
    int out_ch = 0;
    int kh = 0;
    int kw = 0;
    int stride = 1;
    int pad = 0;
};
struct ReluSpec {};
struct FlattenSpec {};
// Constant per-channel x*scale + shift, excluded from optimization (input
// standardization lives here so that perturbations stay in raw pixel space).
struct FixedAffineSpec {
    Tensor scale;
    Tensor shift;
};

using LayerSpec = std::variant<DenseSpec, Conv2DSpec, ReluSpec, FlattenSpec, FixedAffineSpec>;

struct LayerParams {
    Tensor w; // dense: [out,in]; conv: [F,C,kh,kw]
    Tensor b; // dense: [out];    conv: [F]
};

// Feed-forward classifier. The final layer is always Dense (required for
// folding specification matrices into it) and networks are immutable during
// inference; training owns them exclusively.
struct Network {
    std::vector<LayerSpec> layers;
    std::vector<int> param_of_layer;  // index into params, -1 for parameter-free layers
    std::vector<LayerParams> params;
    std::vector<int> input_shape;
    int n_classes = 0;
    std::uint64_t seed = 0;
    std::string tag;

    const DenseSpec& final_dense() const;
    const LayerParams& final_params() const;
    int penultimate_dim() const { return final_dense().in; }
};

// He-uniform weights (bound sqrt(6/fan_in)), zero biases, deterministic per
// seed. Shapes must compose from input_shape to a final Dense output >= 2.
Network init_network(std::vector<LayerSpec> arch, std::vector<int> input_shape, std::uint64_t seed,
                     std::string tag = "");

// Batched forward pass: inputs [B, ...input_shape] -> logits [B, n_classes].
Tensor forward_batch(const Network& net, const Tensor& x);
// Single sample: [...input_shape] -> [n_classes].
Tensor forward(const Network& net, const Tensor& x);

// Model file round trips are bit-exact: every 64-bit parameter is stored as
// its hexadecimal bit pattern.
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

// Copies every layer except the final Dense, which is re-initialized with
// new_out_dim outputs. The head seed derives from the base seed unless given.
Network clone_for_head(const Network& base, int new_out_dim);
Network clone_for_head(const Network& base, int new_out_dim, std::uint64_t head_seed);

// Named architecture presets plus custom layer stacks. A custom stack's final
// Dense out-dimension is instantiated to the requested class count.
struct ArchSpec {
    std::string preset;            // "mlp-small" | "lenet-basic" | "" when custom
    std::vector<LayerSpec> custom; // used when preset is empty
    bool standardize = false;      // prepend a FixedAffine built from dataset statistics
};

Network build_network(const ArchSpec& arch, const std::vector<int>& input_shape, int n_classes,
                      std::uint64_t seed, const Dataset* stats_source = nullptr);

} // namespace avt
