#include "surgidepth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <utility>

namespace surgidepth {

using detail::TensorData;

int shape_numel(const Shape& shape) {
    int n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

void check_shape_valid(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

std::shared_ptr<TensorData> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape_valid(shape);
    if (static_cast<int>(values.size()) != shape_numel(shape)) {
        throw ShapeError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto td = std::make_shared<TensorData>();
    td->shape = std::move(shape);
    td->data = std::move(values);
    td->requires_grad = requires_grad;
    td->flow = requires_grad;
    td->is_leaf = true;
    return td;
}

struct TapeNode {
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> output;
    std::function<void()> backward_fn;
};

thread_local std::vector<TapeNode> g_tape;
thread_local bool g_grad_enabled = true;

void ensure_grad(TensorData& td) {
    if (!td.has_grad) {
        td.grad.assign(td.data.size(), 0.0);
        td.has_grad = true;
    }
}

std::shared_ptr<TensorData> make_result(Shape shape, std::vector<double> values, bool flow) {
    auto td = make_leaf(std::move(shape), std::move(values), false);
    td->flow = flow;
    td->is_leaf = !flow;
    return td;
}

void record(std::vector<std::shared_ptr<TensorData>> inputs, std::shared_ptr<TensorData> output,
            std::function<void()> backward_fn) {
    g_tape.push_back(TapeNode{std::move(inputs), std::move(output), std::move(backward_fn)});
}

bool want_record(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs) {
        if (t->flows()) return true;
    }
    return false;
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(t.shape()));
    }
}

// c += (or =) a[m x k] * b[k x n]
void matmul_raw(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape) {
    int n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), false));
}

Tensor Tensor::full(Shape shape, double value) {
    int n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), false));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::param(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ContractError("shape() on undefined tensor");
    return impl_->shape;
}

int Tensor::dim(int i) const {
    const Shape& s = shape();
    if (i < 0 || i >= static_cast<int>(s.size())) throw ContractError("dim index out of range");
    return s[i];
}

int Tensor::numel() const { return shape_numel(shape()); }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() requires a one-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(int flat_index) const {
    if (flat_index < 0 || flat_index >= numel()) throw ContractError("flat index out of range");
    return impl_->data[static_cast<std::size_t>(flat_index)];
}

std::span<const double> Tensor::data() const {
    if (!impl_) throw ContractError("data() on undefined tensor");
    return impl_->data;
}

std::span<double> Tensor::raw() {
    if (!impl_) throw ContractError("raw() on undefined tensor");
    if (!impl_->is_leaf) throw ContractError("raw() is restricted to leaf tensors");
    return impl_->data;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::flows() const { return impl_ && impl_->flow; }
bool Tensor::is_leaf() const { return impl_ && impl_->is_leaf; }
bool Tensor::has_grad() const { return impl_ && impl_->has_grad; }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw ContractError("grad() on tensor without an accumulator");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_ && impl_->has_grad) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }
}

Tensor Tensor::clone_detached() const {
    if (!impl_) throw ContractError("clone_detached() on undefined tensor");
    return from_data(impl_->shape, impl_->data);
}

// ---------------------------------------------------------------------------
// Kernels

namespace ops {

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const int n = a.numel();
    std::vector<double> out(n);
    auto da = a.data();
    auto db = b.data();
    for (int i = 0; i < n; ++i) out[i] = da[i] + db[i];

    bool rec = want_record({&a, &b});
    auto res = make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto ai = a.impl(), bi = b.impl(), oi = res;
        record({ai, bi}, oi, [ai, bi, oi, n]() {
            const auto& go = oi->grad;
            if (ai->flow) {
                ensure_grad(*ai);
                for (int i = 0; i < n; ++i) ai->grad[i] += go[i];
            }
            if (bi->flow) {
                ensure_grad(*bi);
                for (int i = 0; i < n; ++i) bi->grad[i] += go[i];
            }
        });
    }
    return Tensor(res);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    if (a.shape() != b.shape()) {
        throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const int n = a.numel();
    std::vector<double> out(n);
    auto da = a.data();
    auto db = b.data();
    for (int i = 0; i < n; ++i) out[i] = da[i] - db[i];

    bool rec = want_record({&a, &b});
    auto res = make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto ai = a.impl(), bi = b.impl(), oi = res;
        record({ai, bi}, oi, [ai, bi, oi, n]() {
            const auto& go = oi->grad;
            if (ai->flow) {
                ensure_grad(*ai);
                for (int i = 0; i < n; ++i) ai->grad[i] += go[i];
            }
            if (bi->flow) {
                ensure_grad(*bi);
                for (int i = 0; i < n; ++i) bi->grad[i] -= go[i];
            }
        });
    }
    return Tensor(res);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const int n = a.numel();
    std::vector<double> out(n);
    auto da = a.data();
    auto db = b.data();
    for (int i = 0; i < n; ++i) out[i] = da[i] * db[i];

    bool rec = want_record({&a, &b});
    auto res = make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto ai = a.impl(), bi = b.impl(), oi = res;
        record({ai, bi}, oi, [ai, bi, oi, n]() {
            const auto& go = oi->grad;
            if (ai->flow) {
                ensure_grad(*ai);
                for (int i = 0; i < n; ++i) ai->grad[i] += go[i] * bi->data[i];
            }
            if (bi->flow) {
                ensure_grad(*bi);
                for (int i = 0; i < n; ++i) bi->grad[i] += go[i] * ai->data[i];
            }
        });
    }
    return Tensor(res);
}

Tensor scale(const Tensor& a, double factor) {
    require_defined(a, "scale");
    const int n = a.numel();
    std::vector<double> out(n);
    auto da = a.data();
    for (int i = 0; i < n; ++i) out[i] = da[i] * factor;

    bool rec = want_record({&a});
    auto res = make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto ai = a.impl(), oi = res;
        record({ai}, oi, [ai, oi, n, factor]() {
            ensure_grad(*ai);
            const auto& go = oi->grad;
            for (int i = 0; i < n; ++i) ai->grad[i] += go[i] * factor;
        });
    }
    return Tensor(res);
}

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
    require_defined(x, "add_rowvec");
    require_defined(bias, "add_rowvec");
    require_2d(x, "add_rowvec");
    if (bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
        throw ShapeError("add_rowvec: bias " + shape_str(bias.shape()) + " does not match row width of " +
                         shape_str(x.shape()));
    }
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(rows) * cols);
    auto dx = x.data();
    auto db = bias.data();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            out[static_cast<std::size_t>(r) * cols + c] = dx[static_cast<std::size_t>(r) * cols + c] + db[c];
        }
    }

    bool rec = want_record({&x, &bias});
    auto res = make_result(x.shape(), std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), bi = bias.impl(), oi = res;
        record({xi, bi}, oi, [xi, bi, oi, rows, cols]() {
            const auto& go = oi->grad;
            if (xi->flow) {
                ensure_grad(*xi);
                const std::size_t n = static_cast<std::size_t>(rows) * cols;
                for (std::size_t i = 0; i < n; ++i) xi->grad[i] += go[i];
            }
            if (bi->flow) {
                ensure_grad(*bi);
                for (int r = 0; r < rows; ++r) {
                    for (int c = 0; c < cols; ++c) bi->grad[c] += go[static_cast<std::size_t>(r) * cols + c];
                }
            }
        });
    }
    return Tensor(res);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    matmul_raw(a.data().data(), b.data().data(), out.data(), m, k, n, false);

    bool rec = want_record({&a, &b});
    auto res = make_result({m, n}, std::move(out), rec);
    if (rec) {
        auto ai = a.impl(), bi = b.impl(), oi = res;
        record({ai, bi}, oi, [ai, bi, oi, m, k, n]() {
            const double* go = oi->grad.data();
            if (ai->flow) {
                ensure_grad(*ai);
                // dA = GO * B^T
                for (int i = 0; i < m; ++i) {
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* gorow = go + static_cast<std::size_t>(i) * n;
                        const double* brow = bi->data.data() + static_cast<std::size_t>(p) * n;
                        for (int j = 0; j < n; ++j) acc += gorow[j] * brow[j];
                        ai->grad[static_cast<std::size_t>(i) * k + p] += acc;
                    }
                }
            }
            if (bi->flow) {
                ensure_grad(*bi);
                // dB = A^T * GO
                for (int i = 0; i < m; ++i) {
                    const double* arow = ai->data.data() + static_cast<std::size_t>(i) * k;
                    const double* gorow = go + static_cast<std::size_t>(i) * n;
                    for (int p = 0; p < k; ++p) {
                        const double av = arow[p];
                        if (av == 0.0) continue;
                        double* brow = bi->grad.data() + static_cast<std::size_t>(p) * n;
                        for (int j = 0; j < n; ++j) brow[j] += av * gorow[j];
                    }
                }
            }
        });
    }
    return Tensor(res);
}

Tensor transpose(const Tensor& a) {
    require_defined(a, "transpose");
    require_2d(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    auto da = a.data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = da[static_cast<std::size_t>(i) * n + j];
    }

    bool rec = want_record({&a});
    auto res = make_result({n, m}, std::move(out), rec);
    if (rec) {
        auto ai = a.impl(), oi = res;
        record({ai}, oi, [ai, oi, m, n]() {
            ensure_grad(*ai);
            const auto& go = oi->grad;
            for (int j = 0; j < n; ++j) {
                for (int i = 0; i < m; ++i) {
                    ai->grad[static_cast<std::size_t>(i) * n + j] += go[static_cast<std::size_t>(j) * m + i];
                }
            }
        });
    }
    return Tensor(res);
}

Tensor softmax_rows(const Tensor& x) {
    require_defined(x, "softmax_rows");
    require_2d(x, "softmax_rows");
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(rows) * cols);
    auto dx = x.data();
    for (int r = 0; r < rows; ++r) {
        const double* in = dx.data() + static_cast<std::size_t>(r) * cols;
        double* o = out.data() + static_cast<std::size_t>(r) * cols;
        double mx = in[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        double denom = 0.0;
        for (int c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            denom += o[c];
        }
        for (int c = 0; c < cols; ++c) o[c] /= denom;
    }

    bool rec = want_record({&x});
    auto res = make_result(x.shape(), std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), oi = res;
        record({xi}, oi, [xi, oi, rows, cols]() {
            ensure_grad(*xi);
            for (int r = 0; r < rows; ++r) {
                const double* y = oi->data.data() + static_cast<std::size_t>(r) * cols;
                const double* go = oi->grad.data() + static_cast<std::size_t>(r) * cols;
                double* gx = xi->grad.data() + static_cast<std::size_t>(r) * cols;
                double dot = 0.0;
                for (int c = 0; c < cols; ++c) dot += go[c] * y[c];
                for (int c = 0; c < cols; ++c) gx[c] += y[c] * (go[c] - dot);
            }
        });
    }
    return Tensor(res);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_defined(x, "layer_norm");
    require_defined(gain, "layer_norm");
    require_defined(bias, "layer_norm");
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    const Shape& s = x.shape();
    const int d = s.back();
    if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d) {
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
    }
    const int rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    auto dx = x.data();
    auto dg = gain.data();
    auto db = bias.data();
    for (int r = 0; r < rows; ++r) {
        const double* in = dx.data() + static_cast<std::size_t>(r) * d;
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += in[c];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            const double t = in[c] - mean;
            var += t * t;
        }
        var /= d;
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = istd;
        double* xh = xhat.data() + static_cast<std::size_t>(r) * d;
        double* o = out.data() + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c) {
            xh[c] = (in[c] - mean) * istd;
            o[c] = dg[c] * xh[c] + db[c];
        }
    }

    bool rec = want_record({&x, &gain, &bias});
    auto res = make_result(s, std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = res;
        record({xi, gi, bi}, oi,
               [xi, gi, bi, oi, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
                   const double* go = oi->grad.data();
                   if (xi->flow) ensure_grad(*xi);
                   if (gi->flow) ensure_grad(*gi);
                   if (bi->flow) ensure_grad(*bi);
                   for (int r = 0; r < rows; ++r) {
                       const double* g = go + static_cast<std::size_t>(r) * d;
                       const double* xh = xhat.data() + static_cast<std::size_t>(r) * d;
                       if (gi->flow || bi->flow) {
                           for (int c = 0; c < d; ++c) {
                               if (gi->flow) gi->grad[c] += g[c] * xh[c];
                               if (bi->flow) bi->grad[c] += g[c];
                           }
                       }
                       if (xi->flow) {
                           double mean_gh = 0.0, mean_ghx = 0.0;
                           for (int c = 0; c < d; ++c) {
                               const double gh = g[c] * gi->data[c];
                               mean_gh += gh;
                               mean_ghx += gh * xh[c];
                           }
                           mean_gh /= d;
                           mean_ghx /= d;
                           double* gx = xi->grad.data() + static_cast<std::size_t>(r) * d;
                           for (int c = 0; c < d; ++c) {
                               const double gh = g[c] * gi->data[c];
                               gx[c] += inv_std[r] * (gh - mean_gh - xh[c] * mean_ghx);
                           }
                       }
                   }
               });
    }
    return Tensor(res);
}

Tensor gelu(const Tensor& x) {
    require_defined(x, "gelu");
    static constexpr double kInvSqrt2 = 0.7071067811865475244008443621048490;
    static constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599343819;
    const int n = x.numel();
    std::vector<double> out(n);
    auto dx = x.data();
    for (int i = 0; i < n; ++i) {
        const double v = dx[i];
        out[i] = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    }

    bool rec = want_record({&x});
    auto res = make_result(x.shape(), std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), oi = res;
        record({xi}, oi, [xi, oi, n]() {
            ensure_grad(*xi);
            const auto& go = oi->grad;
            for (int i = 0; i < n; ++i) {
                const double v = xi->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                xi->grad[i] += go[i] * (cdf + v * pdf);
            }
        });
    }
    return Tensor(res);
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    const int n = x.numel();
    double acc = 0.0;
    auto dx = x.data();
    for (int i = 0; i < n; ++i) acc += dx[i];

    bool rec = want_record({&x});
    auto res = make_result({1}, {acc}, rec);
    if (rec) {
        auto xi = x.impl(), oi = res;
        record({xi}, oi, [xi, oi, n]() {
            ensure_grad(*xi);
            const double go = oi->grad[0];
            for (int i = 0; i < n; ++i) xi->grad[i] += go;
        });
    }
    return Tensor(res);
}

Tensor sqrt_clamped(const Tensor& x) {
    require_defined(x, "sqrt_clamped");
    const int n = x.numel();
    std::vector<double> out(n);
    auto dx = x.data();
    for (int i = 0; i < n; ++i) out[i] = dx[i] > 0.0 ? std::sqrt(dx[i]) : 0.0;

    bool rec = want_record({&x});
    auto res = make_result(x.shape(), std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), oi = res;
        record({xi}, oi, [xi, oi, n]() {
            ensure_grad(*xi);
            const auto& go = oi->grad;
            for (int i = 0; i < n; ++i) {
                if (xi->data[i] > 0.0) xi->grad[i] += go[i] * 0.5 / oi->data[i];
            }
        });
    }
    return Tensor(res);
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    require_defined(x, "reshape");
    check_shape_valid(new_shape);
    if (shape_numel(new_shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());

    bool rec = want_record({&x});
    auto res = make_result(std::move(new_shape), std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), oi = res;
        record({xi}, oi, [xi, oi]() {
            ensure_grad(*xi);
            const auto& go = oi->grad;
            for (std::size_t i = 0; i < go.size(); ++i) xi->grad[i] += go[i];
        });
    }
    return Tensor(res);
}

Tensor slice_rows(const Tensor& x, int row0, int nrows) {
    require_defined(x, "slice_rows");
    require_2d(x, "slice_rows");
    const int rows = x.dim(0), cols = x.dim(1);
    if (row0 < 0 || nrows < 1 || row0 + nrows > rows) {
        throw ShapeError("slice_rows: range [" + std::to_string(row0) + ", " + std::to_string(row0 + nrows) +
                         ") out of " + std::to_string(rows) + " rows");
    }
    std::vector<double> out(static_cast<std::size_t>(nrows) * cols);
    auto dx = x.data();
    std::copy(dx.begin() + static_cast<std::size_t>(row0) * cols,
              dx.begin() + static_cast<std::size_t>(row0 + nrows) * cols, out.begin());

    bool rec = want_record({&x});
    auto res = make_result({nrows, cols}, std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), oi = res;
        record({xi}, oi, [xi, oi, row0, nrows, cols]() {
            ensure_grad(*xi);
            const auto& go = oi->grad;
            double* gx = xi->grad.data() + static_cast<std::size_t>(row0) * cols;
            for (std::size_t i = 0; i < static_cast<std::size_t>(nrows) * cols; ++i) gx[i] += go[i];
        });
    }
    return Tensor(res);
}

Tensor slice_cols(const Tensor& x, int col0, int ncols) {
    require_defined(x, "slice_cols");
    require_2d(x, "slice_cols");
    const int rows = x.dim(0), cols = x.dim(1);
    if (col0 < 0 || ncols < 1 || col0 + ncols > cols) {
        throw ShapeError("slice_cols: range [" + std::to_string(col0) + ", " + std::to_string(col0 + ncols) +
                         ") out of " + std::to_string(cols) + " columns");
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * ncols);
    auto dx = x.data();
    for (int r = 0; r < rows; ++r) {
        std::copy(dx.begin() + static_cast<std::size_t>(r) * cols + col0,
                  dx.begin() + static_cast<std::size_t>(r) * cols + col0 + ncols,
                  out.begin() + static_cast<std::size_t>(r) * ncols);
    }

    bool rec = want_record({&x});
    auto res = make_result({rows, ncols}, std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), oi = res;
        record({xi}, oi, [xi, oi, col0, rows, ncols, cols]() {
            ensure_grad(*xi);
            const auto& go = oi->grad;
            for (int r = 0; r < rows; ++r) {
                double* gx = xi->grad.data() + static_cast<std::size_t>(r) * cols + col0;
                const double* g = go.data() + static_cast<std::size_t>(r) * ncols;
                for (int c = 0; c < ncols; ++c) gx[c] += g[c];
            }
        });
    }
    return Tensor(res);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    int cols = -1, total = 0;
    for (const Tensor& t : parts) {
        require_defined(t, "concat_rows");
        require_2d(t, "concat_rows");
        if (cols < 0) cols = t.dim(1);
        if (t.dim(1) != cols) throw ShapeError("concat_rows: column counts differ");
        total += t.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total) * cols);
    bool rec = false;
    if (g_grad_enabled) {
        for (const Tensor& t : parts) rec = rec || t.flows();
    }
    for (const Tensor& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());
    auto res = make_result({total, cols}, std::move(out), rec);
    if (rec) {
        std::vector<std::shared_ptr<TensorData>> ins;
        for (const Tensor& t : parts) ins.push_back(t.impl());
        auto oi = res;
        record(ins, oi, [ins, oi, cols]() {
            std::size_t off = 0;
            for (const auto& in : ins) {
                const std::size_t n = in->data.size();
                if (in->flow) {
                    ensure_grad(*in);
                    for (std::size_t i = 0; i < n; ++i) in->grad[i] += oi->grad[off + i];
                }
                off += n;
            }
        });
    }
    return Tensor(res);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    int rows = -1, total = 0;
    for (const Tensor& t : parts) {
        require_defined(t, "concat_cols");
        require_2d(t, "concat_cols");
        if (rows < 0) rows = t.dim(0);
        if (t.dim(0) != rows) throw ShapeError("concat_cols: row counts differ");
        total += t.dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * total);
    int base = 0;
    bool rec = false;
    if (g_grad_enabled) {
        for (const Tensor& t : parts) rec = rec || t.flows();
    }
    for (const Tensor& t : parts) {
        const int c = t.dim(1);
        auto d = t.data();
        for (int r = 0; r < rows; ++r) {
            std::copy(d.begin() + static_cast<std::size_t>(r) * c, d.begin() + static_cast<std::size_t>(r + 1) * c,
                      out.begin() + static_cast<std::size_t>(r) * total + base);
        }
        base += c;
    }
    auto res = make_result({rows, total}, std::move(out), rec);
    if (rec) {
        std::vector<std::shared_ptr<TensorData>> ins;
        for (const Tensor& t : parts) ins.push_back(t.impl());
        auto oi = res;
        record(ins, oi, [ins, oi, rows, total]() {
            int base2 = 0;
            for (const auto& in : ins) {
                const int c = static_cast<int>(in->data.size()) / rows;
                if (in->flow) {
                    ensure_grad(*in);
                    for (int r = 0; r < rows; ++r) {
                        const double* g = oi->grad.data() + static_cast<std::size_t>(r) * total + base2;
                        double* gi = in->grad.data() + static_cast<std::size_t>(r) * c;
                        for (int j = 0; j < c; ++j) gi[j] += g[j];
                    }
                }
                base2 += c;
            }
        });
    }
    return Tensor(res);
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_channels: no inputs");
    int h = -1, w = -1, total = 0;
    for (const Tensor& t : parts) {
        require_defined(t, "concat_channels");
        if (t.ndim() != 3) throw ShapeError("concat_channels: expected [H x W x C] inputs");
        if (h < 0) {
            h = t.dim(0);
            w = t.dim(1);
        }
        if (t.dim(0) != h || t.dim(1) != w) throw ShapeError("concat_channels: spatial sizes differ");
        total += t.dim(2);
    }
    // Same memory layout as a column concat over [H*W x C] views.
    std::vector<Tensor> flat;
    flat.reserve(parts.size());
    for (const Tensor& t : parts) flat.push_back(reshape(t, {h * w, t.dim(2)}));
    return reshape(concat_cols(flat), {h, w, total});
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    require_defined(x, "bilinear_resize");
    if (x.ndim() != 3) throw ShapeError("bilinear_resize: expected [H x W x C], got " + shape_str(x.shape()));
    if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize: target size must be positive");
    const int h = x.dim(0), w = x.dim(1), ch = x.dim(2);
    if (out_h == h && out_w == w) {
        // Identity contract: equal size must reproduce values exactly.
        return reshape(x, x.shape());
    }
    struct Tap {
        int i0, i1;
        double f;
    };
    auto make_taps = [](int in_n, int out_n) {
        std::vector<Tap> taps(out_n);
        for (int o = 0; o < out_n; ++o) {
            double src = (o + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
            int lo = static_cast<int>(std::floor(src));
            double f = src - lo;
            int i0 = std::clamp(lo, 0, in_n - 1);
            int i1 = std::clamp(lo + 1, 0, in_n - 1);
            taps[o] = Tap{i0, i1, f};
        }
        return taps;
    };
    auto ytaps = make_taps(h, out_h);
    auto xtaps = make_taps(w, out_w);
    std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * ch);
    auto dx = x.data();
    for (int oy = 0; oy < out_h; ++oy) {
        const Tap ty = ytaps[oy];
        for (int ox = 0; ox < out_w; ++ox) {
            const Tap tx = xtaps[ox];
            const double w00 = (1.0 - ty.f) * (1.0 - tx.f);
            const double w01 = (1.0 - ty.f) * tx.f;
            const double w10 = ty.f * (1.0 - tx.f);
            const double w11 = ty.f * tx.f;
            const double* r0 = dx.data() + (static_cast<std::size_t>(ty.i0) * w + tx.i0) * ch;
            const double* r1 = dx.data() + (static_cast<std::size_t>(ty.i0) * w + tx.i1) * ch;
            const double* r2 = dx.data() + (static_cast<std::size_t>(ty.i1) * w + tx.i0) * ch;
            const double* r3 = dx.data() + (static_cast<std::size_t>(ty.i1) * w + tx.i1) * ch;
            double* o = out.data() + (static_cast<std::size_t>(oy) * out_w + ox) * ch;
            for (int c = 0; c < ch; ++c) o[c] = w00 * r0[c] + w01 * r1[c] + w10 * r2[c] + w11 * r3[c];
        }
    }

    bool rec = want_record({&x});
    auto res = make_result({out_h, out_w, ch}, std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), oi = res;
        record({xi}, oi, [xi, oi, ytaps = std::move(ytaps), xtaps = std::move(xtaps), out_h, out_w, w, ch]() {
            ensure_grad(*xi);
            const double* go = oi->grad.data();
            for (int oy = 0; oy < out_h; ++oy) {
                const Tap ty = ytaps[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const Tap tx = xtaps[ox];
                    const double w00 = (1.0 - ty.f) * (1.0 - tx.f);
                    const double w01 = (1.0 - ty.f) * tx.f;
                    const double w10 = ty.f * (1.0 - tx.f);
                    const double w11 = ty.f * tx.f;
                    const double* g = go + (static_cast<std::size_t>(oy) * out_w + ox) * ch;
                    double* g0 = xi->grad.data() + (static_cast<std::size_t>(ty.i0) * w + tx.i0) * ch;
                    double* g1 = xi->grad.data() + (static_cast<std::size_t>(ty.i0) * w + tx.i1) * ch;
                    double* g2 = xi->grad.data() + (static_cast<std::size_t>(ty.i1) * w + tx.i0) * ch;
                    double* g3 = xi->grad.data() + (static_cast<std::size_t>(ty.i1) * w + tx.i1) * ch;
                    for (int c = 0; c < ch; ++c) {
                        g0[c] += w00 * g[c];
                        g1[c] += w01 * g[c];
                        g2[c] += w10 * g[c];
                        g3[c] += w11 * g[c];
                    }
                }
            }
        });
    }
    return Tensor(res);
}

Tensor avgpool2x2(const Tensor& x) {
    require_defined(x, "avgpool2x2");
    require_2d(x, "avgpool2x2");
    const int h = x.dim(0), w = x.dim(1);
    const int oh = h / 2, ow = w / 2;
    if (oh < 1 || ow < 1) throw ShapeError("avgpool2x2: input " + shape_str(x.shape()) + " too small to pool");
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    auto dx = x.data();
    for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
            const std::size_t base = static_cast<std::size_t>(2 * r) * w + 2 * c;
            out[static_cast<std::size_t>(r) * ow + c] =
                0.25 * (dx[base] + dx[base + 1] + dx[base + w] + dx[base + w + 1]);
        }
    }

    bool rec = want_record({&x});
    auto res = make_result({oh, ow}, std::move(out), rec);
    if (rec) {
        auto xi = x.impl(), oi = res;
        record({xi}, oi, [xi, oi, oh, ow, w]() {
            ensure_grad(*xi);
            const auto& go = oi->grad;
            for (int r = 0; r < oh; ++r) {
                for (int c = 0; c < ow; ++c) {
                    const double g = 0.25 * go[static_cast<std::size_t>(r) * ow + c];
                    const std::size_t base = static_cast<std::size_t>(2 * r) * w + 2 * c;
                    xi->grad[base] += g;
                    xi->grad[base + 1] += g;
                    xi->grad[base + w] += g;
                    xi->grad[base + w + 1] += g;
                }
            }
        });
    }
    return Tensor(res);
}

Tensor extract_patches(const Tensor& image, int patch) {
    require_defined(image, "extract_patches");
    if (image.ndim() != 3) throw ShapeError("extract_patches: expected [H x W x C], got " + shape_str(image.shape()));
    if (patch < 1) throw ConfigError("extract_patches: patch size must be positive");
    const int h = image.dim(0), w = image.dim(1), ch = image.dim(2);
    if (h % patch != 0 || w % patch != 0) {
        throw ShapeError("extract_patches: image " + shape_str(image.shape()) + " not divisible by patch " +
                         std::to_string(patch));
    }
    const int gh = h / patch, gw = w / patch;
    const int n = gh * gw;
    const int plen = patch * patch * ch;
    std::vector<double> out(static_cast<std::size_t>(n) * plen);
    auto dx = image.data();
    for (int pi = 0; pi < gh; ++pi) {
        for (int pj = 0; pj < gw; ++pj) {
            double* dst = out.data() + static_cast<std::size_t>(pi * gw + pj) * plen;
            for (int dy = 0; dy < patch; ++dy) {
                const double* src = dx.data() + ((static_cast<std::size_t>(pi * patch + dy) * w) + pj * patch) * ch;
                std::copy(src, src + static_cast<std::size_t>(patch) * ch,
                          dst + static_cast<std::size_t>(dy) * patch * ch);
            }
        }
    }

    bool rec = want_record({&image});
    auto res = make_result({n, plen}, std::move(out), rec);
    if (rec) {
        auto xi = image.impl(), oi = res;
        record({xi}, oi, [xi, oi, gh, gw, patch, w, ch, plen]() {
            ensure_grad(*xi);
            const double* go = oi->grad.data();
            for (int pi = 0; pi < gh; ++pi) {
                for (int pj = 0; pj < gw; ++pj) {
                    const double* src = go + static_cast<std::size_t>(pi * gw + pj) * plen;
                    for (int dy = 0; dy < patch; ++dy) {
                        double* dst =
                            xi->grad.data() + ((static_cast<std::size_t>(pi * patch + dy) * w) + pj * patch) * ch;
                        const double* s = src + static_cast<std::size_t>(dy) * patch * ch;
                        for (int i = 0; i < patch * ch; ++i) dst[i] += s[i];
                    }
                }
            }
        });
    }
    return Tensor(res);
}

Tensor masked_log_ratio(const Tensor& pred, const Tensor& gt, const std::vector<std::uint8_t>& mask) {
    require_defined(pred, "masked_log_ratio");
    require_defined(gt, "masked_log_ratio");
    if (pred.shape() != gt.shape()) {
        throw ShapeError("masked_log_ratio: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(gt.shape()));
    }
    const int n = pred.numel();
    if (static_cast<int>(mask.size()) != n) throw ShapeError("masked_log_ratio: mask size mismatch");
    std::vector<double> out(n, 0.0);
    auto dp = pred.data();
    auto dg = gt.data();
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        if (!(dp[i] > 0.0)) {
            throw DomainError("masked_log_ratio: nonpositive prediction " + std::to_string(dp[i]) +
                              " on valid pixel " + std::to_string(i));
        }
        if (!(dg[i] > 0.0)) {
            throw DomainError("masked_log_ratio: nonpositive reference " + std::to_string(dg[i]) +
                              " on valid pixel " + std::to_string(i));
        }
        out[i] = std::log(dp[i]) - std::log(dg[i]);
    }

    bool rec = want_record({&pred, &gt});
    auto res = make_result(pred.shape(), std::move(out), rec);
    if (rec) {
        auto pi = pred.impl(), gi = gt.impl(), oi = res;
        record({pi, gi}, oi, [pi, gi, oi, mask, n]() {
            const auto& go = oi->grad;
            if (pi->flow) {
                ensure_grad(*pi);
                for (int i = 0; i < n; ++i) {
                    if (mask[i]) pi->grad[i] += go[i] / pi->data[i];
                }
            }
            if (gi->flow) {
                ensure_grad(*gi);
                for (int i = 0; i < n; ++i) {
                    if (mask[i]) gi->grad[i] -= go[i] / gi->data[i];
                }
            }
        });
    }
    return Tensor(res);
}

Tensor masked_tv(const Tensor& g, const std::vector<std::uint8_t>& mask) {
    require_defined(g, "masked_tv");
    require_2d(g, "masked_tv");
    const int h = g.dim(0), w = g.dim(1);
    if (static_cast<int>(mask.size()) != h * w) throw ShapeError("masked_tv: mask size mismatch");
    double acc = 0.0;
    auto dg = g.data();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * w + c;
            if (!mask[i]) continue;
            if (c + 1 < w && mask[i + 1]) acc += std::abs(dg[i + 1] - dg[i]);
            if (r + 1 < h && mask[i + w]) acc += std::abs(dg[i + w] - dg[i]);
        }
    }

    bool rec = want_record({&g});
    auto res = make_result({1}, {acc}, rec);
    if (rec) {
        auto gi = g.impl(), oi = res;
        record({gi}, oi, [gi, oi, mask, h, w]() {
            ensure_grad(*gi);
            const double go = oi->grad[0];
            auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
            for (int r = 0; r < h; ++r) {
                for (int c = 0; c < w; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * w + c;
                    if (!mask[i]) continue;
                    if (c + 1 < w && mask[i + 1]) {
                        const double s = sgn(gi->data[i + 1] - gi->data[i]);
                        gi->grad[i + 1] += go * s;
                        gi->grad[i] -= go * s;
                    }
                    if (r + 1 < h && mask[i + w]) {
                        const double s = sgn(gi->data[i + w] - gi->data[i]);
                        gi->grad[i + w] += go * s;
                        gi->grad[i] -= go * s;
                    }
                }
            }
        });
    }
    return Tensor(res);
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Reverse pass

void backward(const Tensor& loss) {
    require_defined(loss, "backward");
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    auto li = loss.impl();
    if (!li->flow) {
        // Constant loss: every trainable gradient is zero; nothing to propagate.
        clear_graph();
        return;
    }
    ensure_grad(*li);
    li->grad[0] += 1.0;
    for (auto it = g_tape.rbegin(); it != g_tape.rend(); ++it) {
        if (it->output->has_grad) it->backward_fn();
    }
    // Release transient accumulators; trainable leaves keep theirs.
    for (auto& node : g_tape) {
        if (!node.output->is_leaf || !node.output->requires_grad) {
            node.output->grad.clear();
            node.output->grad.shrink_to_fit();
            node.output->has_grad = false;
        }
    }
    clear_graph();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }
std::size_t graph_size() { return g_tape.size(); }
void clear_graph() { g_tape.clear(); }

}  // namespace surgidepth
