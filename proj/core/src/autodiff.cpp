#include "avt/autodiff.hpp"

#include "avt/errors.hpp"

#include <cmath>
#include <memory>
#include <utility>

namespace avt {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b)) throw ShapeError(std::string(who) + ": shape mismatch");
}

// Resolves [B,C,H,W] vs [C,H,W] convolution inputs; returns batch size and
// writes the per-sample geometry.
int conv_geometry(const Tensor& x, const Tensor& k, int stride, int pad, int& c, int& h, int& w,
                  int& f, int& kh, int& kw, int& oh, int& ow) {
    if (k.rank() != 4) throw ShapeError("conv2d: kernels must be [F,C,kh,kw]");
    int batch = 1;
    if (x.rank() == 4) {
        batch = x.dim(0);
        c = x.dim(1), h = x.dim(2), w = x.dim(3);
    } else if (x.rank() == 3) {
        c = x.dim(0), h = x.dim(1), w = x.dim(2);
    } else {
        throw ShapeError("conv2d: input must be [B,C,H,W] or [C,H,W]");
    }
    f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(1) != c) throw ShapeError("conv2d: kernel channel count does not match input");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (pad < 0) throw ShapeError("conv2d: negative padding");
    oh = (h + 2 * pad - kh) / stride + 1;
    ow = (w + 2 * pad - kw) / stride + 1;
    if (h + 2 * pad < kh || w + 2 * pad < kw || oh < 1 || ow < 1)
        throw ShapeError("conv2d: kernel does not fit input under the given stride/padding");
    return batch;
}

} // namespace

VarId Tape::push(Tensor val, bool needs_grad, std::function<void(Tape&, VarId)> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size()) - 1;
}

VarId Tape::constant(Tensor t) { return push(std::move(t), false, {}); }
VarId Tape::param(Tensor t) { return push(std::move(t), true, {}); }

VarId Tape::add(VarId a, VarId b) {
    require_same_shape(val(a), val(b), "add");
    Tensor out = val(a);
    const Tensor& vb = val(b);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += vb.v[i];
    bool ng = needs(a) || needs(b);
    return push(std::move(out), ng, [a, b](Tape& t, VarId self) {
        const Tensor& g = t.grad(self);
        if (t.needs(a)) {
            Tensor& ga = t.grad_mut(a);
            for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_mut(b);
            for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i];
        }
    });
}

VarId Tape::sub(VarId a, VarId b) {
    require_same_shape(val(a), val(b), "sub");
    Tensor out = val(a);
    const Tensor& vb = val(b);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= vb.v[i];
    bool ng = needs(a) || needs(b);
    return push(std::move(out), ng, [a, b](Tape& t, VarId self) {
        const Tensor& g = t.grad(self);
        if (t.needs(a)) {
            Tensor& ga = t.grad_mut(a);
            for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_mut(b);
            for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] -= g.v[i];
        }
    });
}

VarId Tape::scale(VarId a, double c) {
    Tensor out = val(a);
    for (double& x : out.v) x *= c;
    return push(std::move(out), needs(a), [a, c](Tape& t, VarId self) {
        if (!t.needs(a)) return;
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += c * g.v[i];
    });
}

VarId Tape::mul_const(VarId a, Tensor c) {
    require_same_shape(val(a), c, "mul_const");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= c.v[i];
    auto cs = std::make_shared<Tensor>(std::move(c));
    return push(std::move(out), needs(a), [a, cs](Tape& t, VarId self) {
        if (!t.needs(a)) return;
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += cs->v[i] * g.v[i];
    });
}

VarId Tape::relu(VarId a) {
    Tensor out = val(a);
    for (double& x : out.v)
        if (x < 0.0) x = 0.0;
    return push(std::move(out), needs(a), [a](Tape& t, VarId self) {
        if (!t.needs(a)) return;
        const Tensor& g = t.grad(self);
        const Tensor& x = t.val(a);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.v.size(); ++i)
            if (x.v[i] > 0.0) ga.v[i] += g.v[i];
    });
}

VarId Tape::abs(VarId a) {
    Tensor out = val(a);
    for (double& x : out.v) x = std::fabs(x);
    return push(std::move(out), needs(a), [a](Tape& t, VarId self) {
        if (!t.needs(a)) return;
        const Tensor& g = t.grad(self);
        const Tensor& x = t.val(a);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            if (x.v[i] > 0.0)
                ga.v[i] += g.v[i];
            else if (x.v[i] < 0.0)
                ga.v[i] -= g.v[i];
        }
    });
}

VarId Tape::elem_affine(VarId x, Tensor scl, Tensor shift, std::int64_t block) {
    const Tensor& vx = val(x);
    if (!scl.same_shape(shift)) throw ShapeError("elem_affine: scale/shift shape mismatch");
    if (block < 1) throw ShapeError("elem_affine: block must be >= 1");
    const std::int64_t nchan = scl.numel();
    if (vx.numel() % (block * nchan) != 0)
        throw ShapeError("elem_affine: constants do not tile the input");
    Tensor out = vx;
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        std::int64_t ch = (i / block) % nchan;
        out.v[static_cast<std::size_t>(i)] =
            out.v[static_cast<std::size_t>(i)] * scl.v[static_cast<std::size_t>(ch)] +
            shift.v[static_cast<std::size_t>(ch)];
    }
    auto s = std::make_shared<Tensor>(std::move(scl));
    return push(std::move(out), needs(x), [x, s, block, nchan](Tape& t, VarId self) {
        if (!t.needs(x)) return;
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_mut(x);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            std::int64_t ch = (i / block) % nchan;
            gx.v[static_cast<std::size_t>(i)] +=
                g.v[static_cast<std::size_t>(i)] * s->v[static_cast<std::size_t>(ch)];
        }
    });
}

VarId Tape::matmul(VarId a, VarId b) {
    Tensor out = gemm_nn(val(a), val(b));
    bool ng = needs(a) || needs(b);
    return push(std::move(out), ng, [a, b](Tape& t, VarId self) {
        const Tensor& g = t.grad(self);
        if (t.needs(a)) {
            Tensor da = gemm_nt(g, t.val(b)); // g[m,n] * b[k,n]^T
            Tensor& ga = t.grad_mut(a);
            for (std::size_t i = 0; i < da.v.size(); ++i) ga.v[i] += da.v[i];
        }
        if (t.needs(b)) {
            Tensor db = gemm_tn(t.val(a), g); // a[m,k]^T * g[m,n]
            Tensor& gb = t.grad_mut(b);
            for (std::size_t i = 0; i < db.v.size(); ++i) gb.v[i] += db.v[i];
        }
    });
}

VarId Tape::linear(VarId x, VarId w, VarId bias) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    if (vx.rank() != 2 || vw.rank() != 2 || vx.cols() != vw.cols())
        throw ShapeError("linear: expected x[N,in], w[out,in]");
    Tensor out = gemm_nt(vx, vw);
    if (bias >= 0) {
        const Tensor& vb = val(bias);
        if (vb.numel() != vw.rows()) throw ShapeError("linear: bias length mismatch");
        for (int i = 0; i < out.rows(); ++i)
            for (int j = 0; j < out.cols(); ++j) out.at(i, j) += vb.v[static_cast<std::size_t>(j)];
    }
    bool ng = needs(x) || needs(w) || (bias >= 0 && needs(bias));
    return push(std::move(out), ng, [x, w, bias](Tape& t, VarId self) {
        const Tensor& g = t.grad(self);
        if (t.needs(x)) {
            Tensor dx = gemm_nn(g, t.val(w)); // g[N,out] * w[out,in]
            Tensor& gx = t.grad_mut(x);
            for (std::size_t i = 0; i < dx.v.size(); ++i) gx.v[i] += dx.v[i];
        }
        if (t.needs(w)) {
            Tensor dw = gemm_tn(g, t.val(x)); // g^T[out,N] * x[N,in]
            Tensor& gw = t.grad_mut(w);
            for (std::size_t i = 0; i < dw.v.size(); ++i) gw.v[i] += dw.v[i];
        }
        if (bias >= 0 && t.needs(bias)) {
            Tensor& gb = t.grad_mut(bias);
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j)
                    gb.v[static_cast<std::size_t>(j)] += g.at(i, j);
        }
    });
}

VarId Tape::linear_abs(VarId x, VarId w) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    if (vx.rank() != 2 || vw.rank() != 2 || vx.cols() != vw.cols())
        throw ShapeError("linear_abs: expected x[N,in], w[out,in]");
    Tensor out = gemm_nt(vx, abs_tensor(vw));
    bool ng = needs(x) || needs(w);
    return push(std::move(out), ng, [x, w](Tape& t, VarId self) {
        const Tensor& g = t.grad(self);
        if (t.needs(x)) {
            Tensor dx = gemm_nn(g, abs_tensor(t.val(w)));
            Tensor& gx = t.grad_mut(x);
            for (std::size_t i = 0; i < dx.v.size(); ++i) gx.v[i] += dx.v[i];
        }
        if (t.needs(w)) {
            Tensor dw = gemm_tn(g, t.val(x));
            const Tensor& vw2 = t.val(w);
            Tensor& gw = t.grad_mut(w);
            for (std::size_t i = 0; i < dw.v.size(); ++i) {
                if (vw2.v[i] > 0.0)
                    gw.v[i] += dw.v[i];
                else if (vw2.v[i] < 0.0)
                    gw.v[i] -= dw.v[i];
            }
        }
    });
}

VarId Tape::conv2d(VarId x, VarId k, VarId bias, int stride, int pad) {
    const Tensor& vx = val(x);
    const Tensor& vk = val(k);
    int c, h, w, f, kh, kw, oh, ow;
    int batch = conv_geometry(vx, vk, stride, pad, c, h, w, f, kh, kw, oh, ow);
    const bool batched = vx.rank() == 4;
    if (bias >= 0 && val(bias).numel() != f) throw ShapeError("conv2d: bias length mismatch");

    Tensor kmat({f, c * kh * kw}, vk.v); // reshape view of kernels
    Tensor out(batched ? std::vector<int>{batch, f, oh, ow} : std::vector<int>{f, oh, ow}, 0.0);
    const std::int64_t in_sz = static_cast<std::int64_t>(c) * h * w;
    const std::int64_t out_sz = static_cast<std::int64_t>(f) * oh * ow;
    for (int b = 0; b < batch; ++b) {
        Tensor cols = im2col(vx.data() + b * in_sz, c, h, w, kh, kw, stride, pad, oh, ow);
        Tensor y = gemm_nt(cols, kmat); // [oh*ow, f]
        double* dst = out.data() + b * out_sz;
        for (int p = 0; p < oh * ow; ++p)
            for (int j = 0; j < f; ++j)
                dst[static_cast<std::int64_t>(j) * oh * ow + p] = y.at(p, j);
        if (bias >= 0) {
            const Tensor& vb = val(bias);
            for (int j = 0; j < f; ++j)
                for (int p = 0; p < oh * ow; ++p)
                    dst[static_cast<std::int64_t>(j) * oh * ow + p] += vb.v[static_cast<std::size_t>(j)];
        }
    }
    bool ng = needs(x) || needs(k) || (bias >= 0 && needs(bias));
    return push(std::move(out), ng,
                [x, k, bias, stride, pad, batch, c, h, w, f, kh, kw, oh, ow](Tape& t, VarId self) {
        const Tensor& g = t.grad(self);
        const Tensor& vx2 = t.val(x);
        const Tensor& vk2 = t.val(k);
        Tensor kmat2({f, c * kh * kw}, vk2.v);
        const std::int64_t in_sz = static_cast<std::int64_t>(c) * h * w;
        const std::int64_t out_sz = static_cast<std::int64_t>(f) * oh * ow;
        for (int b = 0; b < batch; ++b) {
            // per-sample gradient as [oh*ow, f]
            Tensor gy({oh * ow, f}, 0.0);
            const double* gsrc = g.data() + b * out_sz;
            for (int p = 0; p < oh * ow; ++p)
                for (int j = 0; j < f; ++j)
                    gy.at(p, j) = gsrc[static_cast<std::int64_t>(j) * oh * ow + p];
            Tensor cols = im2col(vx2.data() + b * in_sz, c, h, w, kh, kw, stride, pad, oh, ow);
            if (t.needs(k)) {
                Tensor dk = gemm_tn(gy, cols); // [f, c*kh*kw]
                Tensor& gk = t.grad_mut(k);
                for (std::size_t i = 0; i < dk.v.size(); ++i) gk.v[i] += dk.v[i];
            }
            if (bias >= 0 && t.needs(bias)) {
                Tensor& gb = t.grad_mut(bias);
                for (int p = 0; p < oh * ow; ++p)
                    for (int j = 0; j < f; ++j) gb.v[static_cast<std::size_t>(j)] += gy.at(p, j);
            }
            if (t.needs(x)) {
                Tensor dcols = gemm_nn(gy, kmat2); // [oh*ow, c*kh*kw]
                col2im_acc(dcols, t.grad_mut(x).data() + b * in_sz, c, h, w, kh, kw, stride, pad,
                           oh, ow);
            }
        }
    });
}

VarId Tape::conv2d_abs(VarId x, VarId k, int stride, int pad) {
    const Tensor& vx = val(x);
    const Tensor& vk = val(k);
    int c, h, w, f, kh, kw, oh, ow;
    int batch = conv_geometry(vx, vk, stride, pad, c, h, w, f, kh, kw, oh, ow);
    const bool batched = vx.rank() == 4;

    Tensor kmat({f, c * kh * kw}, abs_tensor(vk).v);
    Tensor out(batched ? std::vector<int>{batch, f, oh, ow} : std::vector<int>{f, oh, ow}, 0.0);
    const std::int64_t in_sz = static_cast<std::int64_t>(c) * h * w;
    const std::int64_t out_sz = static_cast<std::int64_t>(f) * oh * ow;
    for (int b = 0; b < batch; ++b) {
        Tensor cols = im2col(vx.data() + b * in_sz, c, h, w, kh, kw, stride, pad, oh, ow);
        Tensor y = gemm_nt(cols, kmat);
        double* dst = out.data() + b * out_sz;
        for (int p = 0; p < oh * ow; ++p)
            for (int j = 0; j < f; ++j)
                dst[static_cast<std::int64_t>(j) * oh * ow + p] = y.at(p, j);
    }
    bool ng = needs(x) || needs(k);
    return push(std::move(out), ng,
                [x, k, stride, pad, batch, c, h, w, f, kh, kw, oh, ow](Tape& t, VarId self) {
        const Tensor& g = t.grad(self);
        const Tensor& vx2 = t.val(x);
        const Tensor& vk2 = t.val(k);
        Tensor kmat2({f, c * kh * kw}, abs_tensor(vk2).v);
        const std::int64_t in_sz = static_cast<std::int64_t>(c) * h * w;
        const std::int64_t out_sz = static_cast<std::int64_t>(f) * oh * ow;
        for (int b = 0; b < batch; ++b) {
            Tensor gy({oh * ow, f}, 0.0);
            const double* gsrc = g.data() + b * out_sz;
            for (int p = 0; p < oh * ow; ++p)
                for (int j = 0; j < f; ++j)
                    gy.at(p, j) = gsrc[static_cast<std::int64_t>(j) * oh * ow + p];
            Tensor cols = im2col(vx2.data() + b * in_sz, c, h, w, kh, kw, stride, pad, oh, ow);
            if (t.needs(k)) {
                Tensor dk = gemm_tn(gy, cols);
                Tensor& gk = t.grad_mut(k);
                for (std::size_t i = 0; i < dk.v.size(); ++i) {
                    if (vk2.v[i] > 0.0)
                        gk.v[i] += dk.v[i];
                    else if (vk2.v[i] < 0.0)
                        gk.v[i] -= dk.v[i];
                }
            }
            if (t.needs(x)) {
                Tensor dcols = gemm_nn(gy, kmat2);
                col2im_acc(dcols, t.grad_mut(x).data() + b * in_sz, c, h, w, kh, kw, stride, pad,
                           oh, ow);
            }
        }
    });
}

VarId Tape::reshape(VarId a, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != val(a).numel()) throw ShapeError("reshape: element count changed");
    Tensor out(std::move(new_shape), val(a).v);
    return push(std::move(out), needs(a), [a](Tape& t, VarId self) {
        if (!t.needs(a)) return;
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
    });
}

VarId Tape::gather_rows(VarId a, std::vector<int> rows) {
    const Tensor& va = val(a);
    if (va.rank() != 2) throw ShapeError("gather_rows: expected rank-2 tensor");
    const int n = va.cols();
    Tensor out({static_cast<int>(rows.size()), n}, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= va.rows()) throw ShapeError("gather_rows: index out of range");
        for (int j = 0; j < n; ++j) out.at(static_cast<int>(i), j) = va.at(rows[i], j);
    }
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    return push(std::move(out), needs(a), [a, idx](Tape& t, VarId self) {
        if (!t.needs(a)) return;
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        const int n = g.cols();
        for (std::size_t i = 0; i < idx->size(); ++i)
            for (int j = 0; j < n; ++j) ga.at((*idx)[i], j) += g.at(static_cast<int>(i), j);
    });
}

VarId Tape::softmax_ce_rows(VarId logits, std::vector<int> targets) {
    const Tensor& z = val(logits);
    if (z.rank() != 2) throw ShapeError("softmax_ce_rows: expected [N,n] logits");
    const int n = z.cols();
    if (n < 2) throw ShapeError("softmax_ce_rows: need at least two classes");
    if (static_cast<int>(targets.size()) != z.rows())
        throw ShapeError("softmax_ce_rows: one target per row required");
    for (int y : targets)
        if (y < 0 || y >= n) throw ShapeError("softmax_ce_rows: target out of range");
    Tensor out({z.rows()}, 0.0);
    for (int i = 0; i < z.rows(); ++i) {
        double m = z.at(i, 0);
        for (int j = 1; j < n; ++j) m = std::max(m, z.at(i, j));
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += std::exp(z.at(i, j) - m);
        out.v[static_cast<std::size_t>(i)] = m + std::log(s) - z.at(i, targets[static_cast<std::size_t>(i)]);
    }
    auto tg = std::make_shared<std::vector<int>>(std::move(targets));
    return push(std::move(out), needs(logits), [logits, tg](Tape& t, VarId self) {
        if (!t.needs(logits)) return;
        const Tensor& g = t.grad(self);
        const Tensor& z = t.val(logits);
        Tensor& gz = t.grad_mut(logits);
        const int n = z.cols();
        for (int i = 0; i < z.rows(); ++i) {
            double m = z.at(i, 0);
            for (int j = 1; j < n; ++j) m = std::max(m, z.at(i, j));
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += std::exp(z.at(i, j) - m);
            const double gi = g.v[static_cast<std::size_t>(i)];
            for (int j = 0; j < n; ++j)
                gz.at(i, j) += gi * (std::exp(z.at(i, j) - m) / s);
            gz.at(i, (*tg)[static_cast<std::size_t>(i)]) -= gi;
        }
    });
}

VarId Tape::softmax_ce(VarId logits, int target) {
    const Tensor& z = val(logits);
    VarId row = logits;
    if (z.rank() == 1)
        row = reshape(logits, {1, z.dim(0)});
    else if (z.rank() != 2 || z.rows() != 1)
        throw ShapeError("softmax_ce: expected a single logit vector");
    VarId ce = softmax_ce_rows(row, {target});
    return reshape(ce, {1});
}

VarId Tape::sum_elements(VarId a) {
    double s = 0.0;
    for (double x : val(a).v) s += x;
    return push(Tensor::scalar(s), needs(a), [a](Tape& t, VarId self) {
        if (!t.needs(a)) return;
        const double g = t.grad(self).v[0];
        Tensor& ga = t.grad_mut(a);
        for (double& x : ga.v) x += g;
    });
}

void Tape::backward(VarId output) {
    if (val(output).numel() != 1) throw ShapeError("backward: output is not a scalar");
    for (Node& n : nodes_) {
        n.grad = Tensor(n.val.shape, 0.0);
    }
    grad_mut(output).v[0] = 1.0;
    for (VarId id = static_cast<VarId>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.back && n.needs_grad) n.back(*this, id);
    }
}

} // namespace avt
