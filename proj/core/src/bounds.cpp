#include "avt/bounds.hpp"

#include "avt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace avt {

namespace {

struct Box {
    Tensor lo, hi; // batched: [B, ...]
};

Box input_box(const Tensor& x_batch, double eps) {
    if (eps < 0.0) throw ConfigError("eps must be >= 0");
    Box b{x_batch, x_batch};
    for (std::size_t i = 0; i < x_batch.v.size(); ++i) {
        b.lo.v[i] = std::max(x_batch.v[i] - eps, 0.0);
        b.hi.v[i] = std::min(x_batch.v[i] + eps, 1.0);
    }
    return b;
}

// One layer of interval arithmetic; affine layers go through the
// center/radius form (mu = (l+u)/2, r = (u-l)/2, out_r = |W| r).
Box propagate_layer(const Network& net, std::size_t li, const Box& in,
                    const std::vector<int>& shape, const std::vector<int>& out_shape, int batch) {
    const LayerSpec& spec = net.layers[li];
    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
        const LayerParams& p = net.params[static_cast<std::size_t>(net.param_of_layer[li])];
        Tensor mu({batch, d->in}, 0.0), rad({batch, d->in}, 0.0);
        for (std::size_t i = 0; i < mu.v.size(); ++i) {
            mu.v[i] = 0.5 * (in.lo.v[i] + in.hi.v[i]);
            rad.v[i] = 0.5 * (in.hi.v[i] - in.lo.v[i]);
        }
        Tensor out_mu = gemm_nt(mu, p.w);
        Tensor out_r = gemm_nt(rad, abs_tensor(p.w));
        Box out;
        out.lo = Tensor({batch, d->out}, 0.0);
        out.hi = Tensor({batch, d->out}, 0.0);
        for (int i = 0; i < batch; ++i)
            for (int j = 0; j < d->out; ++j) {
                double m = out_mu.at(i, j) + p.b.v[static_cast<std::size_t>(j)];
                double r = out_r.at(i, j);
                out.lo.at(i, j) = m - r;
                out.hi.at(i, j) = m + r;
            }
        return out;
    }
    if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
        const LayerParams& p = net.params[static_cast<std::size_t>(net.param_of_layer[li])];
        const int h = shape[1], w = shape[2];
        const int oh = out_shape[1], ow = out_shape[2];
        Tensor kmat({c->out_ch, c->in_ch * c->kh * c->kw}, p.w.v);
        Tensor kabs({c->out_ch, c->in_ch * c->kh * c->kw}, abs_tensor(p.w).v);
        Box out;
        std::vector<int> os = {batch, c->out_ch, oh, ow};
        out.lo = Tensor(os, 0.0);
        out.hi = Tensor(os, 0.0);
        const std::int64_t in_sz = static_cast<std::int64_t>(c->in_ch) * h * w;
        const std::int64_t out_sz = static_cast<std::int64_t>(c->out_ch) * oh * ow;
        Tensor mu({c->in_ch, h, w}, 0.0), rad({c->in_ch, h, w}, 0.0);
        for (int b = 0; b < batch; ++b) {
            for (std::int64_t i = 0; i < in_sz; ++i) {
                double l = in.lo.v[static_cast<std::size_t>(b * in_sz + i)];
                double u = in.hi.v[static_cast<std::size_t>(b * in_sz + i)];
                mu.v[static_cast<std::size_t>(i)] = 0.5 * (l + u);
                rad.v[static_cast<std::size_t>(i)] = 0.5 * (u - l);
            }
            Tensor mcols = im2col(mu.data(), c->in_ch, h, w, c->kh, c->kw, c->stride, c->pad, oh, ow);
            Tensor rcols = im2col(rad.data(), c->in_ch, h, w, c->kh, c->kw, c->stride, c->pad, oh, ow);
            Tensor ym = gemm_nt(mcols, kmat);
            Tensor yr = gemm_nt(rcols, kabs);
            double* lo = out.lo.data() + b * out_sz;
            double* hi = out.hi.data() + b * out_sz;
            for (int pidx = 0; pidx < oh * ow; ++pidx)
                for (int j = 0; j < c->out_ch; ++j) {
                    double m = ym.at(pidx, j) + p.b.v[static_cast<std::size_t>(j)];
                    double r = yr.at(pidx, j);
                    lo[static_cast<std::int64_t>(j) * oh * ow + pidx] = m - r;
                    hi[static_cast<std::int64_t>(j) * oh * ow + pidx] = m + r;
                }
        }
        return out;
    }
    if (std::holds_alternative<ReluSpec>(spec)) {
        Box out = in;
        for (double& v : out.lo.v)
            if (v < 0.0) v = 0.0;
        for (double& v : out.hi.v)
            if (v < 0.0) v = 0.0;
        return out;
    }
    if (std::holds_alternative<FlattenSpec>(spec)) {
        Box out;
        std::vector<int> os = {batch, static_cast<int>(shape_numel(shape))};
        out.lo = Tensor(os, in.lo.v);
        out.hi = Tensor(os, in.hi.v);
        return out;
    }
    const auto& f = std::get<FixedAffineSpec>(spec);
    const std::int64_t nchan = f.scale.numel();
    std::int64_t csize = 1;
    if (shape.size() == 3 && nchan == shape[0]) csize = static_cast<std::int64_t>(shape[1]) * shape[2];
    const std::int64_t per_sample = shape_numel(shape);
    Box out = in;
    for (std::int64_t i = 0; i < in.lo.numel(); ++i) {
        std::int64_t ch = ((i % per_sample) / csize) % nchan;
        double s = f.scale.v[static_cast<std::size_t>(ch)];
        double t = f.shift.v[static_cast<std::size_t>(ch)];
        double a = in.lo.v[static_cast<std::size_t>(i)] * s;
        double b = in.hi.v[static_cast<std::size_t>(i)] * s;
        out.lo.v[static_cast<std::size_t>(i)] = std::min(a, b) + t;
        out.hi.v[static_cast<std::size_t>(i)] = std::max(a, b) + t;
    }
    return out;
}

std::vector<int> layer_out_shape(const Network& net, std::size_t li, const std::vector<int>& in) {
    const LayerSpec& spec = net.layers[li];
    if (const auto* d = std::get_if<DenseSpec>(&spec)) return {d->out};
    if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
        int oh = (in[1] + 2 * c->pad - c->kh) / c->stride + 1;
        int ow = (in[2] + 2 * c->pad - c->kw) / c->stride + 1;
        return {c->out_ch, oh, ow};
    }
    if (std::holds_alternative<FlattenSpec>(spec)) return {static_cast<int>(shape_numel(in))};
    return in;
}

Tensor batch_of_one(const Tensor& x) {
    std::vector<int> shape = {1};
    shape.insert(shape.end(), x.shape.begin(), x.shape.end());
    return Tensor(shape, x.v);
}

// Folds the spec into the final dense layer: effective weights C*W and bias
// C*b, then one center/radius step over the body bounds.
void fold_spec_rows(const Network& net, const SpecMatrix& spec, const Tensor& body_lo,
                    const Tensor& body_hi, const std::vector<int>& rows, Tensor& out_lo,
                    Tensor& out_hi) {
    const LayerParams& p = net.final_params();
    const int n = spec.n;
    const int d = net.penultimate_dim();
    Tensor chat({n, d}, 0.0);
    Tensor bhat({n}, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double cij = spec.at(i, j);
            if (cij == 0.0) continue;
            for (int k = 0; k < d; ++k) chat.at(i, k) += cij * p.w.at(j, k);
            bhat.v[static_cast<std::size_t>(i)] += cij * p.b.v[static_cast<std::size_t>(j)];
        }
    }
    Tensor cabs = abs_tensor(chat);
    for (int r : rows) {
        for (int i = 0; i < n; ++i) {
            double m = bhat.v[static_cast<std::size_t>(i)];
            double rad = 0.0;
            for (int k = 0; k < d; ++k) {
                double lo = body_lo.at(r, k), hi = body_hi.at(r, k);
                m += chat.at(i, k) * 0.5 * (lo + hi);
                rad += cabs.at(i, k) * 0.5 * (hi - lo);
            }
            out_lo.at(r, i) = m - rad;
            out_hi.at(r, i) = m + rad;
        }
    }
}

} // namespace

IntervalActivations propagate_intervals(const Network& net, const Tensor& x, double eps) {
    Tensor xb = batch_of_one(x);
    Box box = input_box(xb, eps);
    IntervalActivations acts;
    auto strip = [](const Tensor& t) {
        std::vector<int> s(t.shape.begin() + 1, t.shape.end());
        return Tensor(s, t.v);
    };
    acts.lower.push_back(strip(box.lo));
    acts.upper.push_back(strip(box.hi));
    std::vector<int> shape = net.input_shape;
    if (std::vector<int>(xb.shape.begin() + 1, xb.shape.end()) != shape)
        throw ShapeError("propagate_intervals: input shape mismatch");
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        std::vector<int> out_shape = layer_out_shape(net, li, shape);
        box = propagate_layer(net, li, box, shape, out_shape, 1);
        acts.lower.push_back(strip(box.lo));
        acts.upper.push_back(strip(box.hi));
        shape = out_shape;
    }
    return acts;
}

std::pair<Tensor, Tensor> body_interval_batch(const Network& net, const Tensor& x_batch, double eps) {
    net.final_dense();
    const int batch = x_batch.dim(0);
    if (std::vector<int>(x_batch.shape.begin() + 1, x_batch.shape.end()) != net.input_shape)
        throw ShapeError("body_interval_batch: input shape mismatch");
    Box box = input_box(x_batch, eps);
    std::vector<int> shape = net.input_shape;
    for (std::size_t li = 0; li + 1 < net.layers.size(); ++li) {
        std::vector<int> out_shape = layer_out_shape(net, li, shape);
        box = propagate_layer(net, li, box, shape, out_shape, batch);
        shape = out_shape;
    }
    if (shape.size() != 1 || shape[0] != net.penultimate_dim())
        throw ShapeError("network body does not end in the final dense layer's input");
    return {std::move(box.lo), std::move(box.hi)};
}

SpecMatrix make_spec(SpecKind kind, int y, int n_classes, const GroupPartition* partition) {
    switch (kind) {
        case SpecKind::kStandard:
            return spec_standard(y, n_classes);
        case SpecKind::kOuter:
            if (!partition) throw ConfigError("outer spec needs a partition");
            return spec_outer(y, *partition, n_classes);
        case SpecKind::kInner:
            if (!partition) throw ConfigError("inner spec needs a partition");
            return spec_inner(y, *partition, n_classes);
    }
    throw ConfigError("unknown spec kind");
}

std::pair<Tensor, Tensor> margin_bounds_batch(const Network& net, const Tensor& x_batch,
                                              const std::vector<int>& labels, double eps,
                                              SpecKind kind, const GroupPartition* partition) {
    const int batch = x_batch.dim(0);
    if (static_cast<int>(labels.size()) != batch)
        throw ShapeError("margin_bounds_batch: one label per sample required");
    auto [body_lo, body_hi] = body_interval_batch(net, x_batch, eps);
    const int n = net.n_classes;
    Tensor lo({batch, n}, 0.0), hi({batch, n}, 0.0);
    std::map<int, std::vector<int>> by_label;
    for (int i = 0; i < batch; ++i) by_label[labels[static_cast<std::size_t>(i)]].push_back(i);
    for (const auto& [y, rows] : by_label) {
        SpecMatrix spec = make_spec(kind, y, n, partition);
        fold_spec_rows(net, spec, body_lo, body_hi, rows, lo, hi);
    }
    return {std::move(lo), std::move(hi)};
}

MarginBounds margin_bounds(const Network& net, const SpecMatrix& spec, const Tensor& x, double eps) {
    if (spec.n != net.n_classes)
        throw ShapeError("margin_bounds: spec dimension does not match the network");
    Tensor xb = batch_of_one(x);
    auto [body_lo, body_hi] = body_interval_batch(net, xb, eps);
    Tensor lo({1, spec.n}, 0.0), hi({1, spec.n}, 0.0);
    fold_spec_rows(net, spec, body_lo, body_hi, {0}, lo, hi);
    MarginBounds mb;
    mb.lower = Tensor({spec.n}, std::move(lo.v));
    mb.upper = Tensor({spec.n}, std::move(hi.v));
    mb.spec = spec;
    mb.eps = eps;
    return mb;
}

Verdict verify_sample(const Network& net, const Tensor& x, int y, double eps,
                      const SpecMatrix& spec) {
    if (spec.y != y) throw ConfigError("verify_sample: spec matrix was built for a different label");
    MarginBounds mb = margin_bounds(net, spec, x, eps);
    for (int i = 0; i < spec.n; ++i) {
        if (!spec.row_nonzero(i)) continue;
        if (!(mb.lower.v[static_cast<std::size_t>(i)] > 0.0)) return Verdict::kNotCertified;
    }
    return Verdict::kRobust;
}

} // namespace avt
