#include <doctest.h>

#include "f2v/nn.hpp"
#include "support.hpp"

using namespace f2v;
using f2v::testing::central_diff;
using f2v::testing::random_tensor;
using f2v::testing::rel_error;

namespace {

// Direct 4-loop convolution used as the oracle for the im2col path.
Tensor naive_conv(const Tensor& x, const std::vector<double>& w, const std::vector<double>& b, int out_ch, int k,
                  int s, int p) {
  const int oh = (x.h + 2 * p - k) / s + 1, ow = (x.w + 2 * p - k) / s + 1;
  Tensor y(out_ch, oh, ow);
  for (int o = 0; o < out_ch; ++o)
    for (int yy = 0; yy < oh; ++yy)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int c = 0; c < x.c; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = yy * s - p + ky, ix = xx * s - p + kx;
              if (iy < 0 || ix < 0 || iy >= x.h || ix >= x.w) continue;
              acc += w[((static_cast<std::size_t>(o) * x.c + c) * k + ky) * k + kx] * x.at(c, iy, ix);
            }
        y.at(o, yy, xx) = acc;
      }
  return y;
}

// Scalar objective sum(r * layer(x)) for a fixed random r.
double probe(const nn::Layer& layer, const Tensor& x, const Tensor& r) {
  nn::Cache c;
  const Tensor y = layer.forward(x, c);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * r.data[i];
  return s;
}

double check_layer(nn::Layer& layer, Tensor x, std::mt19937_64& rng) {
  nn::Cache c;
  const Tensor y = layer.forward(x, c);
  const Tensor r = random_tensor(y.c, y.h, y.w, rng, -1, 1);
  nn::ParamRefs params;
  layer.collect_params(params);
  nn::zero_grads(params);
  const Tensor gx = layer.backward(c, r, true);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double num = central_diff([&] { return probe(layer, x, r); }, x.data[i], 1e-5);
    worst = std::max(worst, rel_error(gx.data[i], num));
  }
  for (auto* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double num = central_diff([&] { return probe(layer, x, r); }, p->value[i], 1e-5);
      worst = std::max(worst, rel_error(p->grad[i], num));
    }
  return worst;
}

}  // namespace

TEST_CASE("conv2d matches a direct convolution") {
  std::mt19937_64 rng(1);
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, {4, 2, 2}, {7, 1, 3}, {4, 1, 1}}) {
    nn::Conv2d conv(3, 5, k, s, p);
    nn::Rng init(2);
    conv.init_normal(init, 0.3);
    for (auto& v : conv.bias().value) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const Tensor x = random_tensor(3, 9, 9, rng, -1, 1);
    nn::Cache c;
    const Tensor y = conv.forward(x, c);
    const Tensor ref = naive_conv(x, conv.weight().value, conv.bias().value, 5, k, s, p);
    REQUIRE(y.same_shape(ref));
    CHECK(max_abs_diff(y, ref) < 1e-12);
    CHECK(conv.out_size(9) == ref.h);
  }
}

TEST_CASE("layer gradients agree with finite differences") {
  std::mt19937_64 rng(3);
  nn::Rng init(4);

  SUBCASE("conv") {
    for (auto [k, s, p, n] : {std::tuple{3, 2, 1, 6}, {4, 2, 2, 8}, {4, 2, 2, 2}, {4, 1, 1, 2}, {7, 1, 3, 5}}) {
      nn::Conv2d conv(2, 3, k, s, p);
      conv.init_normal(init, 0.5);
      CHECK(check_layer(conv, random_tensor(2, n, n, rng, -1, 1), rng) < 1e-6);
    }
  }
  SUBCASE("instance norm") {
    nn::InstanceNorm norm;
    CHECK(check_layer(norm, random_tensor(3, 5, 5, rng, -1, 1), rng) < 1e-6);
  }
  SUBCASE("leaky relu and tanh") {
    nn::LeakyReLU lrelu(0.2);
    nn::Tanh tanh_layer;
    CHECK(check_layer(lrelu, random_tensor(2, 4, 4, rng, -1, 1), rng) < 1e-6);
    CHECK(check_layer(tanh_layer, random_tensor(2, 4, 4, rng, -2, 2), rng) < 1e-6);
  }
  SUBCASE("upsample") {
    nn::Upsample2 up;
    CHECK(check_layer(up, random_tensor(2, 3, 3, rng, -1, 1), rng) < 1e-6);
  }
  SUBCASE("residual block") {
    nn::ResBlock block(2);
    nn::ParamRefs ps;
    block.collect_params(ps);
    for (auto* p : ps)
      for (auto& v : p->value) v = std::normal_distribution<double>(0, 0.4)(init);
    CHECK(check_layer(block, random_tensor(2, 5, 5, rng, -1, 1), rng) < 1e-5);
  }
}

TEST_CASE("sequential taps inject gradient at intermediate outputs") {
  std::mt19937_64 rng(5);
  nn::Rng init(6);
  nn::Sequential seq;
  seq.add<nn::Conv2d>(1, 2, 3, 1, 1).init_normal(init, 0.5);
  seq.add<nn::Tanh>();
  seq.add<nn::Conv2d>(2, 1, 3, 1, 1).init_normal(init, 0.5);
  const Tensor x = random_tensor(1, 4, 4, rng, -1, 1);
  nn::Cache c;
  std::vector<Tensor> taps;
  const Tensor y = seq.forward_tapped(x, c, 3, {1}, taps);
  REQUIRE(taps.size() == 1);
  const Tensor ry = random_tensor(y.c, y.h, y.w, rng, -1, 1);
  const Tensor rt = random_tensor(taps[0].c, taps[0].h, taps[0].w, rng, -1, 1);
  const Tensor gx = seq.backward_tapped(c, ry, {1}, {rt}, false);
  auto objective = [&](const Tensor& in) {
    nn::Cache cc;
    std::vector<Tensor> tt;
    const Tensor out = seq.forward_tapped(in, cc, 3, {1}, tt);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * ry.data[i];
    for (std::size_t i = 0; i < tt[0].size(); ++i) s += tt[0].data[i] * rt.data[i];
    return s;
  };
  Tensor xv = x;
  for (std::size_t i = 0; i < xv.size(); ++i)
    CHECK(rel_error(gx.data[i], central_diff([&] { return objective(xv); }, xv.data[i])) < 1e-6);
}

TEST_CASE("linear layer gradients") {
  std::mt19937_64 rng(7);
  nn::Rng init(8);
  nn::Linear lin(3, 2);
  lin.init_normal(init, 0.5);
  nn::RowMatrix x(4, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
  nn::RowMatrix r(4, 2);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
  nn::ParamRefs ps;
  lin.collect_params(ps);
  nn::zero_grads(ps);
  const nn::RowMatrix gx = lin.backward(x, r, true);
  auto objective = [&] { return (lin.forward(x).array() * r.array()).sum(); };
  for (Eigen::Index i = 0; i < x.size(); ++i)
    CHECK(rel_error(gx.data()[i], central_diff(objective, x.data()[i])) < 1e-7);
  for (auto* p : ps)
    for (std::size_t i = 0; i < p->value.size(); ++i)
      CHECK(rel_error(p->grad[i], central_diff(objective, p->value[i])) < 1e-7);
}

TEST_CASE("adam first step moves each parameter by lr against its gradient sign") {
  nn::Param p("w", 3);
  p.value = {1.0, -2.0, 0.5};
  p.grad = {0.3, -4.0, 1e-3};
  nn::Adam opt({&p}, 0.5, 0.999);
  opt.step(0.01);
  // Bias-corrected moments give m_hat / sqrt(v_hat) = sign(g) on the first step.
  CHECK(p.value[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(-1.99).epsilon(1e-6));
  CHECK(p.value[2] == doctest::Approx(0.49).epsilon(1e-4));
  CHECK(opt.state().t == 1);
}

TEST_CASE("gradient clipping bounds the global norm") {
  nn::Param a("a", 2), b("b", 1);
  a.grad = {3.0, 0.0};
  b.grad = {4.0};
  CHECK(nn::clip_grad_norm({&a, &b}, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == 3.0);
  CHECK(nn::clip_grad_norm({&a, &b}, 1.0) == doctest::Approx(5.0));
  CHECK(nn::global_grad_norm({&a, &b}) == doctest::Approx(1.0));
}

TEST_CASE("pooling backward is the adjoint of pooling") {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor(2, 6, 6, rng);
  const Tensor y = avg_pool2(x);
  const Tensor r = random_tensor(y.c, y.h, y.w, rng);
  const Tensor gx = avg_pool2_backward(r, 6, 6);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y.data[i] * r.data[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * gx.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("tensor helpers") {
  Tensor rgb(3, 1, 1);
  rgb.data = {1.0, 0.0, 0.0};
  CHECK(luminance(rgb).data[0] == doctest::Approx(0.299));
  Tensor t(1, 1, 2);
  t.data = {-0.5, 1.5};
  clip01(t);
  CHECK(t.data == std::vector<double>{0.0, 1.0});
  CHECK_THROWS_AS(concat_channels(Tensor(1, 2, 2), Tensor(1, 3, 3)), ContractError);
  const Tensor c = Tensor(1, 4, 4, 0.25);
  CHECK(max_abs_diff(resize_bilinear(c, 7, 5), Tensor(1, 7, 5, 0.25)) < 1e-15);
}
