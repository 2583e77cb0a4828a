#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "surgidepth/errors.hpp"

namespace surgidepth {

using Shape = std::vector<int>;

namespace detail {

struct TensorData {
    Shape shape;
    std::vector<double> data;
    // Trainable leaf: receives a persistent gradient accumulator.
    bool requires_grad = false;
    // True when a trainable tensor lies somewhere beneath this value, i.e.
    // backward must propagate through it.
    bool flow = false;
    bool is_leaf = true;
    std::vector<double> grad;
    bool has_grad = false;
};

}  // namespace detail

// Dense row-major double tensor. Copies are shallow: they share storage and
// gradient state. Values without gradient state are treated as immutable after
// creation; only leaf tensors may be mutated in place (optimizer updates).
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_data(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    // Trainable leaf; participates in backward and accumulates gradients.
    static Tensor param(Shape shape, std::vector<double> values);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    int dim(int i) const;
    int numel() const;
    double item() const;
    double at(int flat_index) const;

    std::span<const double> data() const;
    // Direct mutable access for leaf tensors (parameter updates, loaders).
    std::span<double> raw();

    bool requires_grad() const;
    bool flows() const;
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Detached deep copy: fresh constant leaf with the same values.
    Tensor clone_detached() const;

    std::shared_ptr<detail::TensorData> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorData> impl) : impl_(std::move(impl)) {}

  private:
    std::shared_ptr<detail::TensorData> impl_;
};

int shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Differentiable kernels. Each records a node on the thread-local graph when
// gradients are enabled and an input is on a gradient path.
namespace ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x: [T x D], bias: [D]; adds bias to every row.
Tensor add_rowvec(const Tensor& x, const Tensor& bias);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
// sqrt(max(x, 0)) elementwise; gradient is zero on the clamped branch.
Tensor sqrt_clamped(const Tensor& x);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor slice_rows(const Tensor& x, int row0, int nrows);
Tensor slice_cols(const Tensor& x, int col0, int ncols);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// [H x W x C_i] parts with equal H, W.
Tensor concat_channels(const std::vector<Tensor>& parts);
// [H x W x C] -> [out_h x out_w x C], half-pixel centers, edge clamped.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
// [H x W] -> [floor(H/2) x floor(W/2)], plain 2x2 mean, trailing odd row/col dropped.
Tensor avgpool2x2(const Tensor& x);
// [H x W x C] -> [N x p*p*C]; patches in raster order, pixels raster within
// the patch, channels fastest.
Tensor extract_patches(const Tensor& image, int patch);
// log(pred) - log(gt) where mask is set, 0 elsewhere. mask/gt are constants.
Tensor masked_log_ratio(const Tensor& pred, const Tensor& gt, const std::vector<std::uint8_t>& mask);
// Sum of |forward differences| over pairs whose both pixels are valid.
Tensor masked_tv(const Tensor& g, const std::vector<std::uint8_t>& mask);

}  // namespace ops

// Reverse pass from a scalar loss. Consumes the recorded graph: every
// trainable leaf reachable from the loss accumulates its gradient, frozen
// tensors receive none, intermediate buffers are released.
void backward(const Tensor& loss);

// Disables graph recording for its lifetime (inference / evaluation paths).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();
std::size_t graph_size();
void clear_graph();

}  // namespace surgidepth
