#include "avt/network.hpp"

#include "avt/errors.hpp"
#include "avt/rng.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace avt {

namespace {

using nlohmann::ordered_json;

// Walks the layer stack computing output shapes (without the batch axis).
std::vector<int> layer_output_shape(const LayerSpec& spec, const std::vector<int>& in) {
    if (std::holds_alternative<DenseSpec>(spec)) {
        const auto& d = std::get<DenseSpec>(spec);
        if (in.size() != 1 || in[0] != d.in)
            throw ShapeError("dense layer input dimension does not compose");
        return {d.out};
    }
    if (std::holds_alternative<Conv2DSpec>(spec)) {
        const auto& c = std::get<Conv2DSpec>(spec);
        if (in.size() != 3 || in[0] != c.in_ch)
            throw ShapeError("conv layer input shape does not compose");
        int oh = (in[1] + 2 * c.pad - c.kh) / c.stride + 1;
        int ow = (in[2] + 2 * c.pad - c.kw) / c.stride + 1;
        if (in[1] + 2 * c.pad < c.kh || in[2] + 2 * c.pad < c.kw || oh < 1 || ow < 1)
            throw ShapeError("conv layer output would be empty");
        return {c.out_ch, oh, ow};
    }
    if (std::holds_alternative<FlattenSpec>(spec)) {
        return {static_cast<int>(shape_numel(in))};
    }
    if (std::holds_alternative<FixedAffineSpec>(spec)) {
        const auto& f = std::get<FixedAffineSpec>(spec);
        std::int64_t n = f.scale.numel();
        bool ok = (n == 1) || (n == shape_numel(in)) || (in.size() == 3 && n == in[0]);
        if (!ok || !f.scale.same_shape(f.shift))
            throw ShapeError("fixed affine constants do not match the input shape");
        return in;
    }
    return in; // relu
}

std::string hex_encode(const Tensor& t) {
    std::string out;
    out.reserve(t.v.size() * 16);
    char buf[17];
    for (double x : t.v) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(bits));
        out.append(buf, 16);
    }
    return out;
}

std::vector<double> hex_decode(const std::string& s, std::int64_t expect, const char* what) {
    if (static_cast<std::int64_t>(s.size()) != expect * 16)
        throw FormatError(std::string("model file: ") + what + " has wrong encoded length");
    std::vector<double> out(static_cast<std::size_t>(expect));
    for (std::int64_t i = 0; i < expect; ++i) {
        std::uint64_t bits = 0;
        for (int k = 0; k < 16; ++k) {
            char c = s[static_cast<std::size_t>(i * 16 + k)];
            int d;
            if (c >= '0' && c <= '9')
                d = c - '0';
            else if (c >= 'a' && c <= 'f')
                d = c - 'a' + 10;
            else if (c >= 'A' && c <= 'F')
                d = c - 'A' + 10;
            else
                throw FormatError(std::string("model file: ") + what + " has a non-hex character");
            bits = (bits << 4) | static_cast<std::uint64_t>(d);
        }
        out[static_cast<std::size_t>(i)] = std::bit_cast<double>(bits);
    }
    return out;
}

ordered_json layer_to_json(const LayerSpec& spec) {
    ordered_json j;
    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
        j["type"] = "dense";
        j["in"] = d->in;
        j["out"] = d->out;
    } else if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
        j["type"] = "conv2d";
        j["in_ch"] = c->in_ch;
        j["out_ch"] = c->out_ch;
        j["kh"] = c->kh;
        j["kw"] = c->kw;
        j["stride"] = c->stride;
        j["pad"] = c->pad;
    } else if (std::holds_alternative<ReluSpec>(spec)) {
        j["type"] = "relu";
    } else if (std::holds_alternative<FlattenSpec>(spec)) {
        j["type"] = "flatten";
    } else {
        const auto& f = std::get<FixedAffineSpec>(spec);
        j["type"] = "fixed_affine";
        j["len"] = f.scale.numel();
        j["scale"] = hex_encode(f.scale);
        j["shift"] = hex_encode(f.shift);
    }
    return j;
}

LayerSpec layer_from_json(const ordered_json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "dense") return DenseSpec{j.at("in").get<int>(), j.at("out").get<int>()};
    if (type == "conv2d")
        return Conv2DSpec{j.at("in_ch").get<int>(), j.at("out_ch").get<int>(), j.at("kh").get<int>(),
                          j.at("kw").get<int>(),    j.at("stride").get<int>(), j.at("pad").get<int>()};
    if (type == "relu") return ReluSpec{};
    if (type == "flatten") return FlattenSpec{};
    if (type == "fixed_affine") {
        int len = j.at("len").get<int>();
        FixedAffineSpec f;
        f.scale = Tensor({len}, hex_decode(j.at("scale").get<std::string>(), len, "fixed_affine.scale"));
        f.shift = Tensor({len}, hex_decode(j.at("shift").get<std::string>(), len, "fixed_affine.shift"));
        return f;
    }
    throw FormatError("model file: unknown layer type '" + type + "'");
}

} // namespace

const DenseSpec& Network::final_dense() const {
    if (layers.empty() || !std::holds_alternative<DenseSpec>(layers.back()))
        throw ShapeError("network does not end in a dense layer");
    return std::get<DenseSpec>(layers.back());
}

const LayerParams& Network::final_params() const {
    final_dense();
    return params[static_cast<std::size_t>(param_of_layer.back())];
}

Network init_network(std::vector<LayerSpec> arch, std::vector<int> input_shape, std::uint64_t seed,
                     std::string tag) {
    Network net;
    net.layers = std::move(arch);
    net.input_shape = std::move(input_shape);
    net.seed = seed;
    net.tag = std::move(tag);

    std::vector<int> shape = net.input_shape;
    Rng rng(seed);
    for (const LayerSpec& spec : net.layers) {
        shape = layer_output_shape(spec, shape);
        if (const auto* d = std::get_if<DenseSpec>(&spec)) {
            double bound = std::sqrt(6.0 / d->in);
            LayerParams p;
            p.w = Tensor({d->out, d->in}, 0.0);
            for (double& x : p.w.v) x = rng.uniform(-bound, bound);
            p.b = Tensor({d->out}, 0.0);
            net.param_of_layer.push_back(static_cast<int>(net.params.size()));
            net.params.push_back(std::move(p));
        } else if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
            double bound = std::sqrt(6.0 / (c->in_ch * c->kh * c->kw));
            LayerParams p;
            p.w = Tensor({c->out_ch, c->in_ch, c->kh, c->kw}, 0.0);
            for (double& x : p.w.v) x = rng.uniform(-bound, bound);
            p.b = Tensor({c->out_ch}, 0.0);
            net.param_of_layer.push_back(static_cast<int>(net.params.size()));
            net.params.push_back(std::move(p));
        } else {
            net.param_of_layer.push_back(-1);
        }
    }
    if (shape.size() != 1 || shape[0] < 2)
        throw ShapeError("network must end with a dense layer of at least 2 outputs");
    net.final_dense();
    net.n_classes = shape[0];
    return net;
}

Tensor forward_batch(const Network& net, const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("forward: empty input");
    const int batch = x.dim(0);
    std::vector<int> sample_shape(x.shape.begin() + 1, x.shape.end());
    if (sample_shape != net.input_shape)
        throw ShapeError("forward: input shape does not match the network");

    Tensor cur = x;
    std::vector<int> shape = net.input_shape;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& spec = net.layers[li];
        const std::vector<int> next_shape = layer_output_shape(spec, shape);
        if (const auto* d = std::get_if<DenseSpec>(&spec)) {
            const LayerParams& p = net.params[static_cast<std::size_t>(net.param_of_layer[li])];
            Tensor flat({batch, d->in}, std::move(cur.v));
            Tensor out = gemm_nt(flat, p.w);
            for (int i = 0; i < batch; ++i)
                for (int j = 0; j < d->out; ++j) out.at(i, j) += p.b.v[static_cast<std::size_t>(j)];
            cur = std::move(out);
        } else if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
            const LayerParams& p = net.params[static_cast<std::size_t>(net.param_of_layer[li])];
            int h = shape[1], w = shape[2];
            int oh = (h + 2 * c->pad - c->kh) / c->stride + 1;
            int ow = (w + 2 * c->pad - c->kw) / c->stride + 1;
            Tensor kmat({c->out_ch, c->in_ch * c->kh * c->kw}, p.w.v);
            Tensor out({batch, c->out_ch, oh, ow}, 0.0);
            const std::int64_t in_sz = static_cast<std::int64_t>(c->in_ch) * h * w;
            const std::int64_t out_sz = static_cast<std::int64_t>(c->out_ch) * oh * ow;
            for (int b = 0; b < batch; ++b) {
                Tensor cols =
                    im2col(cur.data() + b * in_sz, c->in_ch, h, w, c->kh, c->kw, c->stride, c->pad, oh, ow);
                Tensor y = gemm_nt(cols, kmat);
                double* dst = out.data() + b * out_sz;
                for (int pidx = 0; pidx < oh * ow; ++pidx)
                    for (int j = 0; j < c->out_ch; ++j)
                        dst[static_cast<std::int64_t>(j) * oh * ow + pidx] =
                            y.at(pidx, j) + p.b.v[static_cast<std::size_t>(j)];
            }
            cur = std::move(out);
        } else if (std::holds_alternative<ReluSpec>(spec)) {
            for (double& v : cur.v)
                if (v < 0.0) v = 0.0;
        } else if (std::holds_alternative<FlattenSpec>(spec)) {
            cur = Tensor({batch, static_cast<int>(shape_numel(shape))}, std::move(cur.v));
        } else {
            const auto& f = std::get<FixedAffineSpec>(spec);
            const std::int64_t nchan = f.scale.numel();
            std::int64_t csize = 1;
            if (shape.size() == 3 && nchan == shape[0])
                csize = static_cast<std::int64_t>(shape[1]) * shape[2];
            else if (nchan != 1 && nchan != shape_numel(shape))
                throw ShapeError("fixed affine constants do not match the input shape");
            const std::int64_t per_sample = shape_numel(shape);
            for (std::int64_t i = 0; i < cur.numel(); ++i) {
                std::int64_t ch = ((i % per_sample) / csize) % nchan;
                cur.v[static_cast<std::size_t>(i)] =
                    cur.v[static_cast<std::size_t>(i)] * f.scale.v[static_cast<std::size_t>(ch)] +
                    f.shift.v[static_cast<std::size_t>(ch)];
            }
        }
        shape = next_shape;
    }
    return cur; // [batch, n_classes]
}

Tensor forward(const Network& net, const Tensor& x) {
    std::vector<int> shape = {1};
    shape.insert(shape.end(), x.shape.begin(), x.shape.end());
    Tensor batched(shape, x.v);
    Tensor out = forward_batch(net, batched);
    return Tensor({net.n_classes}, std::move(out.v));
}

void save_network(const Network& net, const std::string& path) {
    ordered_json j;
    j["format_version"] = 1;
    j["tag"] = net.tag;
    j["seed"] = net.seed;
    j["n_classes"] = net.n_classes;
    j["input_shape"] = net.input_shape;
    ordered_json arch = ordered_json::array();
    for (const LayerSpec& l : net.layers) arch.push_back(layer_to_json(l));
    j["architecture"] = std::move(arch);
    ordered_json params = ordered_json::array();
    for (const LayerParams& p : net.params) {
        ordered_json jp;
        jp["w"] = hex_encode(p.w);
        jp["b"] = hex_encode(p.b);
        params.push_back(std::move(jp));
    }
    j["params"] = std::move(params);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(path + ": cannot open for writing");
    out << j.dump(1) << "\n";
    if (!out) throw Error(path + ": write failed");
}

Network load_network(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(path + ": cannot open file");
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": invalid JSON: " + e.what());
    }
    try {
        if (j.at("format_version").get<int>() != 1)
            throw FormatError(path + ": unsupported format version");
        std::vector<LayerSpec> arch;
        for (const auto& jl : j.at("architecture")) arch.push_back(layer_from_json(jl));
        Network net = init_network(std::move(arch), j.at("input_shape").get<std::vector<int>>(),
                                   j.value("seed", std::uint64_t{0}), j.value("tag", std::string{}));
        if (net.n_classes != j.at("n_classes").get<int>())
            throw FormatError(path + ": n_classes does not match the architecture");
        const auto& jparams = j.at("params");
        if (jparams.size() != net.params.size())
            throw FormatError(path + ": parameter group count mismatch");
        for (std::size_t i = 0; i < net.params.size(); ++i) {
            LayerParams& p = net.params[i];
            p.w.v = hex_decode(jparams[i].at("w").get<std::string>(), p.w.numel(), "weight");
            p.b.v = hex_decode(jparams[i].at("b").get<std::string>(), p.b.numel(), "bias");
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

Network clone_for_head(const Network& base, int new_out_dim) {
    return clone_for_head(base, new_out_dim, mix_seed(base.seed, 0x6865616400000000ull ^ static_cast<std::uint64_t>(new_out_dim)));
}

Network clone_for_head(const Network& base, int new_out_dim, std::uint64_t head_seed) {
    const DenseSpec& last = base.final_dense();
    if (new_out_dim < 2) throw ShapeError("clone_for_head: need at least 2 outputs");
    std::vector<LayerSpec> arch = base.layers;
    arch.back() = DenseSpec{last.in, new_out_dim};
    Network net = init_network(std::move(arch), base.input_shape, head_seed, base.tag);
    // copy every non-final parameter verbatim
    for (std::size_t i = 0; i + 1 < base.params.size(); ++i) net.params[i] = base.params[i];
    return net;
}

Network build_network(const ArchSpec& arch, const std::vector<int>& input_shape, int n_classes,
                      std::uint64_t seed, const Dataset* stats_source) {
    std::vector<LayerSpec> layers;
    std::string tag = arch.preset;

    if (arch.standardize) {
        if (stats_source == nullptr || stats_source->size() == 0)
            throw ConfigError("standardize requested but no dataset statistics available");
        int nchan = stats_source->sample_shape.size() == 3 ? stats_source->sample_shape[0] : 1;
        std::int64_t per_chan = shape_numel(stats_source->sample_shape) / nchan;
        Tensor mean({nchan}, 0.0), var({nchan}, 0.0);
        for (const Tensor& t : stats_source->inputs)
            for (std::int64_t i = 0; i < t.numel(); ++i)
                mean.v[static_cast<std::size_t>(i / per_chan)] += t.v[static_cast<std::size_t>(i)];
        double denom = static_cast<double>(stats_source->size()) * static_cast<double>(per_chan);
        for (double& m : mean.v) m /= denom;
        for (const Tensor& t : stats_source->inputs)
            for (std::int64_t i = 0; i < t.numel(); ++i) {
                double d = t.v[static_cast<std::size_t>(i)] - mean.v[static_cast<std::size_t>(i / per_chan)];
                var.v[static_cast<std::size_t>(i / per_chan)] += d * d;
            }
        FixedAffineSpec f;
        f.scale = Tensor({nchan}, 0.0);
        f.shift = Tensor({nchan}, 0.0);
        for (int c = 0; c < nchan; ++c) {
            double sd = std::sqrt(var.v[static_cast<std::size_t>(c)] / denom);
            if (sd < 1e-8) sd = 1e-8;
            f.scale.v[static_cast<std::size_t>(c)] = 1.0 / sd;
            f.shift.v[static_cast<std::size_t>(c)] = -mean.v[static_cast<std::size_t>(c)] / sd;
        }
        layers.push_back(std::move(f));
    }

    auto flat_dim = [&]() { return static_cast<int>(shape_numel(input_shape)); };

    if (arch.preset == "mlp-small") {
        layers.push_back(FlattenSpec{});
        layers.push_back(DenseSpec{flat_dim(), 256});
        layers.push_back(ReluSpec{});
        layers.push_back(DenseSpec{256, 256});
        layers.push_back(ReluSpec{});
        layers.push_back(DenseSpec{256, n_classes});
    } else if (arch.preset == "lenet-basic") {
        if (input_shape.size() != 3) throw ConfigError("lenet-basic needs [C,H,W] inputs");
        int c = input_shape[0], h = input_shape[1], w = input_shape[2];
        layers.push_back(Conv2DSpec{c, 16, 4, 4, 2, 0});
        int h1 = (h - 4) / 2 + 1, w1 = (w - 4) / 2 + 1;
        layers.push_back(ReluSpec{});
        layers.push_back(Conv2DSpec{16, 32, 4, 4, 1, 0});
        int h2 = h1 - 3, w2 = w1 - 3;
        layers.push_back(ReluSpec{});
        layers.push_back(FlattenSpec{});
        layers.push_back(DenseSpec{32 * h2 * w2, 100});
        layers.push_back(ReluSpec{});
        layers.push_back(DenseSpec{100, n_classes});
    } else if (arch.preset.empty()) {
        // custom stack: infer dense/conv in-dims, final dense out set to n_classes
        std::vector<int> shape = input_shape;
        std::vector<LayerSpec> resolved;
        for (std::size_t i = 0; i < arch.custom.size(); ++i) {
            LayerSpec spec = arch.custom[i];
            if (auto* d = std::get_if<DenseSpec>(&spec)) {
                if (shape.size() != 1) throw ConfigError("dense layer needs a flat input; add flatten");
                d->in = shape[0];
                bool is_last_dense = true;
                for (std::size_t k = i + 1; k < arch.custom.size(); ++k)
                    if (std::holds_alternative<DenseSpec>(arch.custom[k])) is_last_dense = false;
                if (is_last_dense) d->out = n_classes;
                if (d->out < 1) throw ConfigError("dense layer is missing its output dimension");
            } else if (auto* cv = std::get_if<Conv2DSpec>(&spec)) {
                if (shape.size() != 3) throw ConfigError("conv layer needs a [C,H,W] input");
                cv->in_ch = shape[0];
            }
            shape = layer_output_shape(spec, shape);
            resolved.push_back(std::move(spec));
        }
        layers.insert(layers.end(), resolved.begin(), resolved.end());
        tag = "custom";
    } else {
        throw ConfigError("unknown architecture preset '" + arch.preset + "'");
    }

    return init_network(std::move(layers), input_shape, seed, tag);
}

} // namespace avt
