#include "avt/graph.hpp"

#include "avt/errors.hpp"

#include <algorithm>
#include <cmath>

namespace avt {

ParamGrads ParamGrads::zeros_like(const Network& net) {
    ParamGrads g;
    g.layers.reserve(net.params.size());
    for (const LayerParams& p : net.params)
        g.layers.push_back({Tensor(p.w.shape, 0.0), Tensor(p.b.shape, 0.0)});
    return g;
}

void ParamGrads::accumulate(const ParamGrads& other) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (std::size_t k = 0; k < layers[i].w.v.size(); ++k)
            layers[i].w.v[k] += other.layers[i].w.v[k];
        for (std::size_t k = 0; k < layers[i].b.v.size(); ++k)
            layers[i].b.v[k] += other.layers[i].b.v[k];
    }
}

void ParamGrads::scale(double c) {
    for (LayerParams& l : layers) {
        for (double& x : l.w.v) x *= c;
        for (double& x : l.b.v) x *= c;
    }
}

namespace {

std::vector<int> out_shape_of(const LayerSpec& spec, const std::vector<int>& in) {
    if (const auto* d = std::get_if<DenseSpec>(&spec)) return {d->out};
    if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
        int oh = (in[1] + 2 * c->pad - c->kh) / c->stride + 1;
        int ow = (in[2] + 2 * c->pad - c->kw) / c->stride + 1;
        return {c->out_ch, oh, ow};
    }
    if (std::holds_alternative<FlattenSpec>(spec)) return {static_cast<int>(shape_numel(in))};
    return in;
}

std::vector<int> with_batch(int batch, const std::vector<int>& shape) {
    std::vector<int> s = {batch};
    s.insert(s.end(), shape.begin(), shape.end());
    return s;
}

// Broadcast block for fixed-affine constants over a [B, ...sample] tensor:
// per-channel constants on [B,C,H,W] share H*W-sized blocks, everything else
// cycles with block 1.
std::int64_t affine_block(const FixedAffineSpec& f, const std::vector<int>& sample_shape) {
    const std::int64_t n = f.scale.numel();
    if (sample_shape.size() == 3 && n == sample_shape[0])
        return static_cast<std::int64_t>(sample_shape[1]) * sample_shape[2];
    if (n != 1 && n != shape_numel(sample_shape))
        throw ShapeError("fixed affine constants do not match the input shape");
    return 1;
}

} // namespace

NetGraph::NetGraph(Tape& tape, const Network& net) : tape_(tape), net_(net) {
    net.final_dense();
    pvars_.reserve(net.params.size());
    for (const LayerParams& p : net.params) pvars_.push_back({tape_.param(p.w), tape_.param(p.b)});
}

VarId NetGraph::apply_layer(std::size_t li, VarId x, const std::vector<int>& shape,
                            const std::vector<int>& out_shape, int batch) {
    const LayerSpec& spec = net_.layers[li];
    if (std::holds_alternative<DenseSpec>(spec)) {
        const PVar& p = pvars_[static_cast<std::size_t>(net_.param_of_layer[li])];
        return tape_.linear(x, p.w, p.b);
    }
    if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
        const PVar& p = pvars_[static_cast<std::size_t>(net_.param_of_layer[li])];
        return tape_.conv2d(x, p.w, p.b, c->stride, c->pad);
    }
    if (std::holds_alternative<ReluSpec>(spec)) return tape_.relu(x);
    if (std::holds_alternative<FlattenSpec>(spec)) return tape_.reshape(x, with_batch(batch, out_shape));
    const auto& f = std::get<FixedAffineSpec>(spec);
    return tape_.elem_affine(x, f.scale, f.shift, affine_block(f, shape));
}

VarId NetGraph::forward(const Tensor& x_batch) {
    const int batch = x_batch.dim(0);
    if (std::vector<int>(x_batch.shape.begin() + 1, x_batch.shape.end()) != net_.input_shape)
        throw ShapeError("forward: input shape does not match the network");
    VarId cur = tape_.constant(x_batch);
    std::vector<int> shape = net_.input_shape;
    for (std::size_t li = 0; li < net_.layers.size(); ++li) {
        std::vector<int> os = out_shape_of(net_.layers[li], shape);
        cur = apply_layer(li, cur, shape, os, batch);
        shape = os;
    }
    return cur;
}

std::pair<VarId, VarId> NetGraph::body_interval(const Tensor& x_batch, double eps) {
    if (eps < 0.0) throw ConfigError("eps must be >= 0");
    const int batch = x_batch.dim(0);
    if (std::vector<int>(x_batch.shape.begin() + 1, x_batch.shape.end()) != net_.input_shape)
        throw ShapeError("body_interval: input shape does not match the network");

    if (eps == 0.0) {
        // degenerate interval: one plain pass through the body serves as both
        // bounds (the input clip to [0,1] is the identity on valid pixels)
        Tensor clipped = x_batch;
        for (double& v : clipped.v) v = std::clamp(v, 0.0, 1.0);
        VarId cur = tape_.constant(std::move(clipped));
        std::vector<int> shape = net_.input_shape;
        for (std::size_t li = 0; li + 1 < net_.layers.size(); ++li) {
            std::vector<int> os = out_shape_of(net_.layers[li], shape);
            cur = apply_layer(li, cur, shape, os, batch);
            shape = os;
        }
        if (shape.size() != 1 || shape[0] != net_.penultimate_dim())
            throw ShapeError("network body does not end in the final dense layer's input");
        return {cur, cur};
    }

    Tensor lo = x_batch, hi = x_batch;
    for (std::size_t i = 0; i < x_batch.v.size(); ++i) {
        lo.v[i] = std::max(x_batch.v[i] - eps, 0.0);
        hi.v[i] = std::min(x_batch.v[i] + eps, 1.0);
    }
    VarId l = tape_.constant(std::move(lo));
    VarId u = tape_.constant(std::move(hi));

    std::vector<int> shape = net_.input_shape;
    for (std::size_t li = 0; li + 1 < net_.layers.size(); ++li) {
        const LayerSpec& spec = net_.layers[li];
        std::vector<int> os = out_shape_of(spec, shape);
        if (std::holds_alternative<DenseSpec>(spec)) {
            const PVar& p = pvars_[static_cast<std::size_t>(net_.param_of_layer[li])];
            VarId mu = tape_.scale(tape_.add(l, u), 0.5);
            VarId rad = tape_.scale(tape_.sub(u, l), 0.5);
            VarId om = tape_.linear(mu, p.w, p.b);
            VarId orad = tape_.linear_abs(rad, p.w);
            l = tape_.sub(om, orad);
            u = tape_.add(om, orad);
        } else if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
            const PVar& p = pvars_[static_cast<std::size_t>(net_.param_of_layer[li])];
            VarId mu = tape_.scale(tape_.add(l, u), 0.5);
            VarId rad = tape_.scale(tape_.sub(u, l), 0.5);
            VarId om = tape_.conv2d(mu, p.w, p.b, c->stride, c->pad);
            VarId orad = tape_.conv2d_abs(rad, p.w, c->stride, c->pad);
            l = tape_.sub(om, orad);
            u = tape_.add(om, orad);
        } else if (std::holds_alternative<ReluSpec>(spec)) {
            l = tape_.relu(l);
            u = tape_.relu(u);
        } else if (std::holds_alternative<FlattenSpec>(spec)) {
            l = tape_.reshape(l, with_batch(batch, os));
            u = tape_.reshape(u, with_batch(batch, os));
        } else {
            // center/radius form handles fixed-affine scales of either sign
            const auto& f = std::get<FixedAffineSpec>(spec);
            const std::int64_t block = affine_block(f, shape);
            VarId mu = tape_.scale(tape_.add(l, u), 0.5);
            VarId rad = tape_.scale(tape_.sub(u, l), 0.5);
            VarId om = tape_.elem_affine(mu, f.scale, f.shift, block);
            VarId orad = tape_.elem_affine(rad, abs_tensor(f.scale), Tensor(f.shift.shape, 0.0), block);
            l = tape_.sub(om, orad);
            u = tape_.add(om, orad);
        }
        shape = os;
    }
    if (shape.size() != 1 || shape[0] != net_.penultimate_dim())
        throw ShapeError("network body does not end in the final dense layer's input");
    return {l, u};
}

NetGraph::Margins NetGraph::fold_margins(VarId body_lo, VarId body_hi, const SpecMatrix& spec,
                                         const std::vector<int>& rows) {
    if (spec.n != net_.n_classes)
        throw ShapeError("fold_margins: spec dimension does not match the network");
    const PVar& p = pvars_.back();
    VarId cmat = tape_.constant(spec.as_tensor());                     // [n,n]
    VarId what = tape_.matmul(cmat, p.w);                              // [n,d]
    VarId bhat = tape_.reshape(tape_.matmul(cmat, tape_.reshape(p.b, {spec.n, 1})), {spec.n});
    VarId lo_rows = tape_.gather_rows(body_lo, rows);
    VarId hi_rows = tape_.gather_rows(body_hi, rows);
    VarId mu = tape_.scale(tape_.add(lo_rows, hi_rows), 0.5);
    VarId rad = tape_.scale(tape_.sub(hi_rows, lo_rows), 0.5);
    VarId m_mu = tape_.linear(mu, what, bhat);
    VarId m_r = tape_.linear_abs(rad, what);
    Margins m;
    m.lower = tape_.sub(m_mu, m_r);
    m.upper = tape_.add(m_mu, m_r);
    return m;
}

void NetGraph::read_grads(ParamGrads& out) const {
    for (std::size_t i = 0; i < pvars_.size(); ++i) {
        const Tensor& gw = tape_.grad(pvars_[i].w);
        const Tensor& gb = tape_.grad(pvars_[i].b);
        for (std::size_t k = 0; k < gw.v.size(); ++k) out.layers[i].w.v[k] += gw.v[k];
        for (std::size_t k = 0; k < gb.v.size(); ++k) out.layers[i].b.v[k] += gb.v[k];
    }
}

} // namespace avt
