#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "f2v/tensor.hpp"

namespace f2v::nn {

using Rng = std::mt19937_64;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Param {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string n, std::size_t count) : name(std::move(n)), value(count, 0.0), grad(count, 0.0) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using ParamRefs = std::vector<Param*>;

/// Per-call activation record. Forward fills it; backward consumes it. Keeping
/// the record outside the layer lets one network be evaluated several times
/// (e.g. on real and generated images) before any backward pass runs.
struct Cache {
  std::vector<Tensor> tensors;
  std::vector<RowMatrix> matrices;
  std::vector<Cache> children;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Cache& cache) const = 0;
  /// Returns dL/dx. Parameter gradients are accumulated only when
  /// accumulate is true.
  virtual Tensor backward(const Cache& cache, const Tensor& grad_out, bool accumulate) = 0;
  virtual void collect_params(ParamRefs&) {}
  virtual void set_prefix(const std::string&) {}
};

class Conv2d final : public Layer {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad);

  Tensor forward(const Tensor& x, Cache& cache) const override;
  Tensor backward(const Cache& cache, const Tensor& grad_out, bool accumulate) override;
  void collect_params(ParamRefs& out) override;
  void set_prefix(const std::string& prefix) override;

  void init_normal(Rng& rng, double stddev);
  void zero_init();
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_, out_, kernel_, stride_, pad_;
  Param weight_;  // out x (in * k * k), row-major
  Param bias_;
};

/// Per-channel normalization over the spatial plane, no affine parameters.
class InstanceNorm final : public Layer {
 public:
  explicit InstanceNorm(double eps = 1e-5) : eps_(eps) {}
  Tensor forward(const Tensor& x, Cache& cache) const override;
  Tensor backward(const Cache& cache, const Tensor& grad_out, bool accumulate) override;

 private:
  double eps_;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x, Cache& cache) const override;
  Tensor backward(const Cache& cache, const Tensor& grad_out, bool accumulate) override;
};

class LeakyReLU final : public Layer {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
  Tensor forward(const Tensor& x, Cache& cache) const override;
  Tensor backward(const Cache& cache, const Tensor& grad_out, bool accumulate) override;

 private:
  double slope_;
};

class Tanh final : public Layer {
 public:
  Tensor forward(const Tensor& x, Cache& cache) const override;
  Tensor backward(const Cache& cache, const Tensor& grad_out, bool accumulate) override;
};

/// Nearest-neighbour 2x upsampling.
class Upsample2 final : public Layer {
 public:
  Tensor forward(const Tensor& x, Cache& cache) const override;
  Tensor backward(const Cache& cache, const Tensor& grad_out, bool accumulate) override;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& x, Cache& cache) const override;
  Tensor backward(const Cache& cache, const Tensor& grad_out, bool accumulate) override;
  void collect_params(ParamRefs& out) override;
  void set_prefix(const std::string& prefix) override;

  /// Runs layers [0, stop) and records the outputs of the layers listed in
  /// taps (each index < stop) into tap_out, in the order given.
  Tensor forward_tapped(const Tensor& x, Cache& cache, int stop, const std::vector<int>& taps,
                        std::vector<Tensor>& tap_out) const;
  /// Backward over the layers recorded in cache. grad_out is the gradient of
  /// the final recorded layer output (may be empty = zero); tap_grads add
  /// gradient at the matching tap outputs (empty tensors are skipped).
  Tensor backward_tapped(const Cache& cache, const Tensor& grad_out, const std::vector<int>& taps,
                         const std::vector<Tensor>& tap_grads, bool accumulate);

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_[i]; }
  const Layer& at(std::size_t i) const { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// x + body(x)
class ResBlock final : public Layer {
 public:
  ResBlock(int channels, int kernel = 3);
  Tensor forward(const Tensor& x, Cache& cache) const override;
  Tensor backward(const Cache& cache, const Tensor& grad_out, bool accumulate) override;
  void collect_params(ParamRefs& out) override;
  void set_prefix(const std::string& prefix) override;
  Sequential& body() { return body_; }

 private:
  Sequential body_;
};

/// Dense layer over row vectors: Y = X W^T + b, X is (N x in).
class Linear {
 public:
  Linear(int in, int out);
  RowMatrix forward(const RowMatrix& x) const;
  RowMatrix backward(const RowMatrix& x, const RowMatrix& grad_out, bool accumulate);
  void init_normal(Rng& rng, double stddev);
  void fill_bias(double value);
  void collect_params(ParamRefs& out);
  void set_prefix(const std::string& prefix);
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_, out_;
  Param weight_;  // out x in, row-major
  Param bias_;
};

void zero_grads(const ParamRefs& params);
double global_grad_norm(const ParamRefs& params);
/// Scales gradients so that their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(const ParamRefs& params, double max_norm);
/// Order-sensitive FNV-1a digest of parameter values (diagnostics and tests).
std::uint64_t param_checksum(const ParamRefs& params);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long t = 0;
};

class Adam {
 public:
  Adam(ParamRefs params, double beta1, double beta2, double eps = 1e-8);
  void step(double lr);
  const ParamRefs& params() const { return params_; }
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }

 private:
  ParamRefs params_;
  double beta1_, beta2_, eps_;
  AdamState state_;
};

}  // namespace f2v::nn
