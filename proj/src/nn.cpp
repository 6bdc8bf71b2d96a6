#include "f2v/nn.hpp"

#include <cmath>
#include <cstring>

namespace f2v::nn {

namespace {

Tensor shape_only(const Tensor& x) {
  Tensor s;
  s.c = x.c;
  s.h = x.h;
  s.w = x.w;
  return s;
}

void normal_fill(std::vector<double>& v, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v) x = dist(rng);
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad)
    : in_(in_ch), out_(out_ch), kernel_(kernel), stride_(stride), pad_(pad),
      weight_("weight", static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel),
      bias_("bias", static_cast<std::size_t>(out_ch)) {
  require(in_ch > 0 && out_ch > 0 && kernel > 0 && stride > 0 && pad >= 0,
          "Conv2d: invalid geometry");
}

void Conv2d::init_normal(Rng& rng, double stddev) {
  normal_fill(weight_.value, rng, stddev);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

void Conv2d::zero_init() {
  std::fill(weight_.value.begin(), weight_.value.end(), 0.0);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x, Cache& cache) const {
  require(x.c == in_, "Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                          x.shape_str());
  const int oh = out_size(x.h);
  const int ow = out_size(x.w);
  require(oh > 0 && ow > 0, "Conv2d: input " + x.shape_str() + " too small for kernel " +
                                std::to_string(kernel_));
  const int kk = kernel_ * kernel_;
  const Eigen::Index rows = static_cast<Eigen::Index>(in_) * kk;
  const Eigen::Index cols_n = static_cast<Eigen::Index>(oh) * ow;

  RowMatrix cols = RowMatrix::Zero(rows, cols_n);
  for (int ci = 0; ci < in_; ++ci)
    for (int ky = 0; ky < kernel_; ++ky)
      for (int kx = 0; kx < kernel_; ++kx) {
        double* row = cols.row((ci * kernel_ + ky) * kernel_ + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= x.w) continue;
            row[oy * ow + ox] = x.at(ci, iy, ix);
          }
        }
      }

  Eigen::Map<const RowMatrix> W(weight_.value.data(), out_, rows);
  Tensor y(out_, oh, ow);
  Eigen::Map<RowMatrix> Y(y.data.data(), out_, cols_n);
  Y.noalias() = W * cols;
  for (int o = 0; o < out_; ++o) Y.row(o).array() += bias_.value[static_cast<std::size_t>(o)];

  cache.tensors = {shape_only(x)};
  cache.matrices.clear();
  cache.matrices.push_back(std::move(cols));
  return y;
}

Tensor Conv2d::backward(const Cache& cache, const Tensor& grad_out, bool accumulate) {
  const Tensor& xs = cache.tensors.at(0);
  const RowMatrix& cols = cache.matrices.at(0);
  const int oh = grad_out.h;
  const int ow = grad_out.w;
  const Eigen::Index cols_n = static_cast<Eigen::Index>(oh) * ow;
  const Eigen::Index rows = cols.rows();

  Eigen::Map<const RowMatrix> G(grad_out.data.data(), out_, cols_n);
  if (accumulate) {
    Eigen::Map<RowMatrix> dW(weight_.grad.data(), out_, rows);
    dW.noalias() += G * cols.transpose();
    for (int o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += G.row(o).sum();
  }
  Eigen::Map<const RowMatrix> W(weight_.value.data(), out_, rows);
  RowMatrix dcols = W.transpose() * G;

  Tensor gx(xs.c, xs.h, xs.w);
  for (int ci = 0; ci < in_; ++ci)
    for (int ky = 0; ky < kernel_; ++ky)
      for (int kx = 0; kx < kernel_; ++kx) {
        const double* row = dcols.row((ci * kernel_ + ky) * kernel_ + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= xs.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= xs.w) continue;
            gx.at(ci, iy, ix) += row[oy * ow + ox];
          }
        }
      }
  return gx;
}

void Conv2d::collect_params(ParamRefs& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Conv2d::set_prefix(const std::string& prefix) {
  weight_.name = prefix + "weight";
  bias_.name = prefix + "bias";
}

// ---------------------------------------------------------- InstanceNorm

Tensor InstanceNorm::forward(const Tensor& x, Cache& cache) const {
  Tensor y(x.c, x.h, x.w);
  Tensor inv_std(x.c, 1, 1);
  const double n = static_cast<double>(x.plane());
  for (int ch = 0; ch < x.c; ++ch) {
    auto in = x.channel(ch);
    double mu = 0.0;
    for (double v : in) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : in) var += (v - mu) * (v - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps_);
    auto out = y.channel(ch);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = (in[i] - mu) * is;
    inv_std.data[static_cast<std::size_t>(ch)] = is;
  }
  cache.tensors = {y, std::move(inv_std)};
  return y;
}

Tensor InstanceNorm::backward(const Cache& cache, const Tensor& grad_out, bool) {
  const Tensor& xhat = cache.tensors.at(0);
  const Tensor& inv_std = cache.tensors.at(1);
  Tensor gx(xhat.c, xhat.h, xhat.w);
  const double n = static_cast<double>(xhat.plane());
  for (int ch = 0; ch < xhat.c; ++ch) {
    auto g = grad_out.channel(ch);
    auto xh = xhat.channel(ch);
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      sum_g += g[i];
      sum_gx += g[i] * xh[i];
    }
    const double is = inv_std.data[static_cast<std::size_t>(ch)];
    auto out = gx.channel(ch);
    for (std::size_t i = 0; i < g.size(); ++i)
      out[i] = is / n * (n * g[i] - sum_g - xh[i] * sum_gx);
  }
  return gx;
}

// ----------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& x, Cache& cache) const {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
  cache.tensors = {x};
  return y;
}

Tensor ReLU::backward(const Cache& cache, const Tensor& grad_out, bool) {
  const Tensor& x = cache.tensors.at(0);
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(x.data[i] > 0.0)) g.data[i] = 0.0;
  return g;
}

Tensor LeakyReLU::forward(const Tensor& x, Cache& cache) const {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0 ? v : slope_ * v;
  cache.tensors = {x};
  return y;
}

Tensor LeakyReLU::backward(const Cache& cache, const Tensor& grad_out, bool) {
  const Tensor& x = cache.tensors.at(0);
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(x.data[i] > 0.0)) g.data[i] *= slope_;
  return g;
}

Tensor Tanh::forward(const Tensor& x, Cache& cache) const {
  Tensor y = x;
  for (auto& v : y.data) v = std::tanh(v);
  cache.tensors = {y};
  return y;
}

Tensor Tanh::backward(const Cache& cache, const Tensor& grad_out, bool) {
  const Tensor& y = cache.tensors.at(0);
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= 1.0 - y.data[i] * y.data[i];
  return g;
}

Tensor Upsample2::forward(const Tensor& x, Cache& cache) const {
  Tensor y(x.c, x.h * 2, x.w * 2);
  for (int ch = 0; ch < x.c; ++ch)
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx) y.at(ch, yy, xx) = x.at(ch, yy / 2, xx / 2);
  cache.tensors = {shape_only(x)};
  return y;
}

Tensor Upsample2::backward(const Cache& cache, const Tensor& grad_out, bool) {
  const Tensor& xs = cache.tensors.at(0);
  Tensor g(xs.c, xs.h, xs.w);
  for (int ch = 0; ch < grad_out.c; ++ch)
    for (int yy = 0; yy < grad_out.h; ++yy)
      for (int xx = 0; xx < grad_out.w; ++xx) g.at(ch, yy / 2, xx / 2) += grad_out.at(ch, yy, xx);
  return g;
}

// ------------------------------------------------------------ Sequential

Tensor Sequential::forward(const Tensor& x, Cache& cache) const {
  std::vector<Tensor> unused;
  return forward_tapped(x, cache, static_cast<int>(layers_.size()), {}, unused);
}

Tensor Sequential::forward_tapped(const Tensor& x, Cache& cache, int stop,
                                  const std::vector<int>& taps,
                                  std::vector<Tensor>& tap_out) const {
  require(stop >= 0 && stop <= static_cast<int>(layers_.size()), "Sequential: bad stop index");
  cache.children.assign(static_cast<std::size_t>(stop), Cache{});
  tap_out.assign(taps.size(), Tensor{});
  Tensor cur = x;
  for (int i = 0; i < stop; ++i) {
    cur = layers_[static_cast<std::size_t>(i)]->forward(cur, cache.children[static_cast<std::size_t>(i)]);
    for (std::size_t t = 0; t < taps.size(); ++t)
      if (taps[t] == i) tap_out[t] = cur;
  }
  return cur;
}

Tensor Sequential::backward(const Cache& cache, const Tensor& grad_out, bool accumulate) {
  return backward_tapped(cache, grad_out, {}, {}, accumulate);
}

Tensor Sequential::backward_tapped(const Cache& cache, const Tensor& grad_out,
                                   const std::vector<int>& taps,
                                   const std::vector<Tensor>& tap_grads, bool accumulate) {
  const int n = static_cast<int>(cache.children.size());
  Tensor g = grad_out;
  for (int i = n - 1; i >= 0; --i) {
    for (std::size_t t = 0; t < taps.size(); ++t) {
      if (taps[t] != i || tap_grads[t].empty()) continue;
      if (g.empty()) {
        g = tap_grads[t];
      } else {
        require(g.same_shape(tap_grads[t]), "Sequential: tap gradient shape mismatch");
        for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += tap_grads[t].data[k];
      }
    }
    if (g.empty()) continue;  // nothing flows into this layer yet
    g = layers_[static_cast<std::size_t>(i)]->backward(cache.children[static_cast<std::size_t>(i)], g,
                                                       accumulate);
  }
  return g;
}

void Sequential::collect_params(ParamRefs& out) {
  for (auto& l : layers_) l->collect_params(out);
}

void Sequential::set_prefix(const std::string& prefix) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->set_prefix(prefix + std::to_string(i) + ".");
}

// -------------------------------------------------------------- ResBlock

ResBlock::ResBlock(int channels, int kernel) {
  const int pad = kernel / 2;
  body_.add<Conv2d>(channels, channels, kernel, 1, pad);
  body_.add<InstanceNorm>();
  body_.add<ReLU>();
  body_.add<Conv2d>(channels, channels, kernel, 1, pad);
  body_.add<InstanceNorm>();
}

Tensor ResBlock::forward(const Tensor& x, Cache& cache) const {
  cache.children.assign(1, Cache{});
  Tensor y = body_.forward(x, cache.children[0]);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += x.data[i];
  return y;
}

Tensor ResBlock::backward(const Cache& cache, const Tensor& grad_out, bool accumulate) {
  Tensor g = body_.backward(cache.children.at(0), grad_out, accumulate);
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += grad_out.data[i];
  return g;
}

void ResBlock::collect_params(ParamRefs& out) { body_.collect_params(out); }
void ResBlock::set_prefix(const std::string& prefix) { body_.set_prefix(prefix + "body."); }

// ---------------------------------------------------------------- Linear

Linear::Linear(int in, int out)
    : in_(in), out_(out), weight_("weight", static_cast<std::size_t>(in) * out),
      bias_("bias", static_cast<std::size_t>(out)) {}

RowMatrix Linear::forward(const RowMatrix& x) const {
  require(x.cols() == in_, "Linear: expected " + std::to_string(in_) + " input features");
  Eigen::Map<const RowMatrix> W(weight_.value.data(), out_, in_);
  Eigen::Map<const Eigen::RowVectorXd> b(bias_.value.data(), out_);
  RowMatrix y = x * W.transpose();
  y.rowwise() += b;
  return y;
}

RowMatrix Linear::backward(const RowMatrix& x, const RowMatrix& grad_out, bool accumulate) {
  Eigen::Map<const RowMatrix> W(weight_.value.data(), out_, in_);
  if (accumulate) {
    Eigen::Map<RowMatrix> dW(weight_.grad.data(), out_, in_);
    dW.noalias() += grad_out.transpose() * x;
    Eigen::Map<Eigen::RowVectorXd> db(bias_.grad.data(), out_);
    db += grad_out.colwise().sum();
  }
  return grad_out * W;
}

void Linear::init_normal(Rng& rng, double stddev) {
  normal_fill(weight_.value, rng, stddev);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
}

void Linear::fill_bias(double value) { std::fill(bias_.value.begin(), bias_.value.end(), value); }

void Linear::collect_params(ParamRefs& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Linear::set_prefix(const std::string& prefix) {
  weight_.name = prefix + "weight";
  bias_.name = prefix + "bias";
}

// ------------------------------------------------------------- utilities

void zero_grads(const ParamRefs& params) {
  for (auto* p : params) p->zero_grad();
}

double global_grad_norm(const ParamRefs& params) {
  double sq = 0.0;
  for (const auto* p : params)
    for (double g : p->grad) sq += g * g;
  return std::sqrt(sq);
}

double clip_grad_norm(const ParamRefs& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto* p : params)
      for (double& g : p->grad) g *= scale;
  }
  return norm;
}

std::uint64_t param_checksum(const ParamRefs& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto* p : params)
    for (double v : p->value) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  return h;
}

Adam::Adam(ParamRefs params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* p : params_) {
    state_.m.emplace_back(p->value.size(), 0.0);
    state_.v.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++state_.t;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.t));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.t));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k];
    auto& m = state_.m[k];
    auto& v = state_.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

}  // namespace f2v::nn
