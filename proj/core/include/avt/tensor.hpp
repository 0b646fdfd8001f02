#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace avt {

// Dense row-major tensor of 64-bit floats. Shapes are small lists of extents;
// a rank-0 tensor is not supported (scalars are shape {1}).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::vector<int> s, double fill);
    Tensor(std::vector<int> s, std::vector<double> values);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(std::vector<int> s, double x) { return Tensor(std::move(s), x); }
    static Tensor scalar(double x) { return Tensor({1}, {x}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    // 2-D accessors (asserts rank 2 in debug builds only)
    int rows() const { return shape[0]; }
    int cols() const { return shape[1]; }
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * shape[1] + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * shape[1] + c]; }

    bool all_finite() const;
};

std::int64_t shape_numel(const std::vector<int>& shape);

// Number of worker threads used by the kernels below (1 = fully serial).
// Parallel splits are over independent output rows, so results are
// bit-identical for every thread count.
void set_num_threads(int n);
int num_threads();

// out[m,n] = a[m,k] * b[k,n]
Tensor gemm_nn(const Tensor& a, const Tensor& b);
// out[m,n] = a[m,k] * b[n,k]^T
Tensor gemm_nt(const Tensor& a, const Tensor& b);
// out[m,n] = a[k,m]^T * b[k,n]
Tensor gemm_tn(const Tensor& a, const Tensor& b);

Tensor transpose2d(const Tensor& a);
Tensor abs_tensor(const Tensor& a);

// im2col for a single [C,H,W] image: output [out_h*out_w, C*kh*kw]
Tensor im2col(const double* x, int c, int h, int w, int kh, int kw, int stride, int pad,
              int out_h, int out_w);
// scatter-add transpose of im2col
void col2im_acc(const Tensor& cols, double* x_grad, int c, int h, int w, int kh, int kw,
                int stride, int pad, int out_h, int out_w);

} // namespace avt
