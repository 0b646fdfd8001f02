#include "avt/tensor.hpp"

#include "avt/errors.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

namespace avt {

namespace {

std::atomic<int> g_threads{1};

// Persistent fork-join pool. Workers park on a condition variable between
// kernels, so a gemm call costs a notify instead of a thread spawn. The pool
// is created on first use and intentionally never destroyed.
class WorkerPool {
public:
    static WorkerPool& instance() {
        static WorkerPool* pool = new WorkerPool();
        return *pool;
    }

    // fn(worker_index, n_workers); worker 0 runs on the calling thread
    void run(int n_workers, const std::function<void(int, int)>& fn) {
        ensure_workers(n_workers - 1);
        {
            std::unique_lock<std::mutex> lock(mu_);
            job_ = &fn;
            job_workers_ = n_workers;
            pending_ = n_workers - 1;
            ++generation_;
        }
        cv_.notify_all();
        fn(0, n_workers);
        std::unique_lock<std::mutex> lock(mu_);
        done_cv_.wait(lock, [&] { return pending_ == 0; });
        job_ = nullptr;
    }

private:
    WorkerPool() = default;

    void ensure_workers(int needed) {
        std::unique_lock<std::mutex> lock(mu_);
        while (static_cast<int>(threads_.size()) < needed) {
            int index = static_cast<int>(threads_.size()) + 1;
            threads_.emplace_back([this, index] { worker_loop(index); });
        }
    }

    void worker_loop(int index) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(int, int)>* job = nullptr;
            int workers = 0;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_.wait(lock, [&] { return generation_ != seen; });
                seen = generation_;
                if (index < job_workers_) {
                    job = job_;
                    workers = job_workers_;
                }
            }
            if (job) (*job)(index, workers);
            {
                std::unique_lock<std::mutex> lock(mu_);
                if (index < job_workers_ && --pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> threads_;
    const std::function<void(int, int)>* job_ = nullptr;
    int job_workers_ = 0;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
};

// Splits [0, n) into contiguous ranges, one per worker. Each range is owned by
// exactly one thread, so there are no concurrent writes and no reduction-order
// differences between thread counts.
template <typename Fn>
void parallel_rows(std::int64_t n, Fn&& fn) {
    int nt = g_threads.load(std::memory_order_relaxed);
    if (nt <= 1 || n < 64) {
        fn(0, n);
        return;
    }
    if (static_cast<std::int64_t>(nt) > n) nt = static_cast<int>(n);
    const std::int64_t chunk = (n + nt - 1) / nt;
    std::function<void(int, int)> job = [&fn, n, chunk](int worker, int) {
        std::int64_t lo = worker * chunk;
        std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        if (lo < hi) fn(lo, hi);
    };
    WorkerPool::instance().run(nt, job);
}

void require_rank2(const Tensor& t, const char* who) {
    if (t.rank() != 2) throw ShapeError(std::string(who) + ": expected rank-2 tensor");
}

} // namespace

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), v(static_cast<std::size_t>(shape_numel(shape)), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> values)
    : shape(std::move(s)), v(std::move(values)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(v.size()))
        throw ShapeError("value count does not match shape");
}

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void set_num_threads(int n) { g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed); }
int num_threads() { return g_threads.load(std::memory_order_relaxed); }

Tensor gemm_nn(const Tensor& a, const Tensor& b) {
    require_rank2(a, "gemm_nn");
    require_rank2(b, "gemm_nn");
    if (a.cols() != b.rows()) throw ShapeError("gemm_nn: inner dimensions disagree");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n}, 0.0);
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    parallel_rows(m, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
            const double* arow = A + i * k;
            double* crow = C + i * n;
            for (int p = 0; p < k; ++p) {
                const double aip = arow[p];
                const double* brow = B + static_cast<std::int64_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    });
    return out;
}

Tensor gemm_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "gemm_nt");
    require_rank2(b, "gemm_nt");
    if (a.cols() != b.cols()) throw ShapeError("gemm_nt: inner dimensions disagree");
    // the ikj kernel vectorizes where a dot-product reduction does not; the
    // accumulation order over k is unchanged, so results are bit-identical
    return gemm_nn(a, transpose2d(b));
}

Tensor gemm_tn(const Tensor& a, const Tensor& b) {
    require_rank2(a, "gemm_tn");
    require_rank2(b, "gemm_tn");
    if (a.rows() != b.rows()) throw ShapeError("gemm_tn: inner dimensions disagree");
    const int k = a.rows(), m = a.cols(), n = b.cols();
    Tensor out({m, n}, 0.0);
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    // serial over k, parallel over output rows
    parallel_rows(m, [&](std::int64_t lo, std::int64_t hi) {
        for (int p = 0; p < k; ++p) {
            const double* arow = A + static_cast<std::int64_t>(p) * m;
            const double* brow = B + static_cast<std::int64_t>(p) * n;
            for (std::int64_t i = lo; i < hi; ++i) {
                const double api = arow[i];
                double* crow = C + i * n;
                for (int j = 0; j < n; ++j) crow[j] += api * brow[j];
            }
        }
    });
    return out;
}

Tensor transpose2d(const Tensor& a) {
    require_rank2(a, "transpose2d");
    Tensor out({a.cols(), a.rows()}, 0.0);
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor abs_tensor(const Tensor& a) {
    Tensor out = a;
    for (double& x : out.v) x = std::fabs(x);
    return out;
}

Tensor im2col(const double* x, int c, int h, int w, int kh, int kw, int stride, int pad,
              int out_h, int out_w) {
    Tensor cols({out_h * out_w, c * kh * kw}, 0.0);
    double* dst = cols.data();
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            double* row = dst + (static_cast<std::int64_t>(oy) * out_w + ox) * (c * kh * kw);
            for (int ch = 0; ch < c; ++ch) {
                const double* plane = x + static_cast<std::int64_t>(ch) * h * w;
                for (int ky = 0; ky < kh; ++ky) {
                    int iy = oy * stride - pad + ky;
                    for (int kx = 0; kx < kw; ++kx) {
                        int ix = ox * stride - pad + kx;
                        double val = 0.0;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                            val = plane[static_cast<std::int64_t>(iy) * w + ix];
                        *row++ = val;
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_acc(const Tensor& cols, double* x_grad, int c, int h, int w, int kh, int kw,
                int stride, int pad, int out_h, int out_w) {
    const double* src = cols.data();
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const double* row = src + (static_cast<std::int64_t>(oy) * out_w + ox) * (c * kh * kw);
            for (int ch = 0; ch < c; ++ch) {
                double* plane = x_grad + static_cast<std::int64_t>(ch) * h * w;
                for (int ky = 0; ky < kh; ++ky) {
                    int iy = oy * stride - pad + ky;
                    for (int kx = 0; kx < kw; ++kx) {
                        int ix = ox * stride - pad + kx;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                            plane[static_cast<std::int64_t>(iy) * w + ix] += *row;
                        ++row;
                    }
                }
            }
        }
    }
}

} // namespace avt
