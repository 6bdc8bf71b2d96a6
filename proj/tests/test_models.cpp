#include <doctest.h>

#include "f2v/models.hpp"
#include "support.hpp"

using namespace f2v;
using namespace f2v::models;
using f2v::testing::central_diff;
using f2v::testing::random_tensor;
using f2v::testing::rel_error;

namespace {

ModelConfig small(int size) {
  ModelConfig c;
  c.image_size = size;
  c.ngf = 4;
  c.ndf = 4;
  c.n_resblocks = 1;
  c.head_width = 8;
  c.init_std = 0.3;
  return c;
}

GenerationState random_state(int size, std::mt19937_64& g) {
  return make_generation_state(random_tensor(3, size, size, g),
                               {random_tensor(1, size, size, g), random_tensor(1, size, size, g),
                                random_tensor(1, size, size, g)},
                               0);
}

// Independent layer arithmetic: floor((n + 2p - k) / s) + 1 per layer.
int disc_out(int n) {
  for (int i = 0; i < 4; ++i) n = (n + 4 - 4) / 2 + 1;
  return n + 2 - 4 + 1;
}

// Input interval seen by output index o, walking the layers backwards.
std::pair<int, int> field(int o) {
  const std::vector<std::array<int, 3>> layers{{4, 2, 2}, {4, 2, 2}, {4, 2, 2}, {4, 2, 2}, {4, 1, 1}};
  int lo = o, hi = o;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    const auto [k, s, p] = *it;
    lo = lo * s - p;
    hi = hi * s - p + k - 1;
  }
  return {lo, hi};
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// Samples a handful of entries from every parameter tensor.
std::vector<std::pair<nn::Param*, std::size_t>> param_probes(const nn::ParamRefs& ps, std::mt19937_64& g,
                                                             int per_param) {
  std::vector<std::pair<nn::Param*, std::size_t>> out;
  for (auto* p : ps)
    for (int i = 0; i < per_param; ++i) out.emplace_back(p, g() % p->value.size());
  return out;
}

}  // namespace

TEST_CASE("generator shapes at 32 and 64") {
  for (int size : {32, 64}) {
    nn::Rng rng(1);
    std::mt19937_64 g(2);
    const auto cfg = small(size);
    Generator gen(cfg, rng);
    const auto out = gen.forward(random_state(size, g));
    CHECK((out.frame.c == 1 && out.frame.h == size && out.frame.w == size));
    CHECK((out.last_activation.c == cfg.ngf && out.last_activation.h == size));
    CHECK(std::all_of(out.frame.data.begin(), out.frame.data.end(),
                      [](double v) { return v >= -1.0 && v <= 1.0; }));
  }
}

TEST_CASE("generator is fully convolutional and deterministic") {
  nn::Rng rng(3);
  std::mt19937_64 g(4);
  Generator gen(small(32), rng);
  const auto s32 = random_state(32, g);
  const auto s64 = random_state(64, g);
  CHECK(gen.forward(s64).frame.h == 2 * gen.forward(s32).frame.h);
  CHECK(gen.forward(s32).frame.data == gen.forward(s32).frame.data);
}

TEST_CASE("generator rejects bad shapes") {
  std::mt19937_64 g(5);
  CHECK_THROWS_AS(make_generation_state(random_tensor(3, 30, 30, g),
                                        {Tensor(1, 30, 30), Tensor(1, 30, 30), Tensor(1, 30, 30)}, 0),
                  ContractError);
  CHECK_THROWS_AS(make_generation_state(random_tensor(3, 32, 32, g),
                                        {Tensor(1, 32, 32), Tensor(1, 16, 16), Tensor(1, 32, 32)}, 0),
                  ContractError);
  CHECK_THROWS_AS(make_generation_state(random_tensor(1, 32, 32, g),
                                        {Tensor(1, 32, 32), Tensor(1, 32, 32), Tensor(1, 32, 32)}, 0),
                  ContractError);
}

TEST_CASE("zeroed output layer gives tanh(bias) everywhere") {
  nn::Rng rng(6);
  Generator gen(small(16), rng);
  gen.zero_output_layer();
  auto ps = gen.params();
  nn::Param* bias = ps.back();
  REQUIRE(bias->value.size() == 1);
  bias->value[0] = 0.3;
  const auto out = gen.forward(make_generation_state(Tensor(3, 16, 16), {Tensor(1, 16, 16), Tensor(1, 16, 16), Tensor(1, 16, 16)}, 0));
  for (double v : out.frame.data) CHECK(v == std::tanh(0.3));
}

TEST_CASE("discriminator shapes follow the layer arithmetic") {
  CHECK(disc_out(256) == 16);
  for (int size : {32, 64}) {
    nn::Rng rng(7);
    std::mt19937_64 g(8);
    MultiScaleDiscriminator disc(small(size), rng);
    for (int k = 1; k <= 3; ++k) {
      const int s = size >> (k - 1);
      CHECK(disc.scale_size(k) == s);
      nn::Cache c;
      const Tensor logits = disc.forward(k, random_tensor(4, s, s, g), c);
      CHECK((logits.c == 1 && logits.h == disc_out(s) && logits.w == disc_out(s)));
      CHECK(PatchDiscriminator::output_size(s) == disc_out(s));
      nn::Cache c2;
      CHECK_THROWS_AS(disc.forward(k, random_tensor(4, s / 2, s / 2, g), c2), ContractError);
    }
  }
  for (int o = 0; o < 4; ++o) CHECK(PatchDiscriminator::receptive_interval(o) == field(o));
}

TEST_CASE("discriminator logits depend only on their receptive field") {
  nn::Rng rng(9);
  std::mt19937_64 g(10);
  MultiScaleDiscriminator disc(small(128), rng);
  const Tensor pair = random_tensor(4, 128, 128, g);
  nn::Cache c0;
  const Tensor base = disc.forward(1, pair, c0);
  const int oy = 1, ox = 2;
  const auto [ylo, yhi] = field(oy);
  const auto [xlo, xhi] = field(ox);
  Tensor outside = pair;
  outside.at(2, std::min(127, yhi + 1), std::min(127, xhi + 3)) += 5.0;
  outside.at(0, 127, 0) -= 3.0;
  nn::Cache c1;
  CHECK(disc.forward(1, outside, c1).at(0, oy, ox) == base.at(0, oy, ox));
  Tensor inside = pair;
  inside.at(1, (std::max(0, ylo) + yhi) / 2, (std::max(0, xlo) + xhi) / 2) += 5.0;
  nn::Cache c2;
  CHECK(disc.forward(1, inside, c2).at(0, oy, ox) != base.at(0, oy, ox));
}

TEST_CASE("patch embeddings") {
  nn::Rng rng(11);
  std::mt19937_64 g(12);
  const auto cfg = small(32);
  Generator gen(cfg, rng);
  PatchProjector head(gen.level_channels(), 16, rng, 0.3);
  nn::Cache c;
  const auto feats = gen.encode(Generator::nce_input(random_tensor(3, 32, 32, g)), c);
  REQUIRE(feats.size() == 3);
  CHECK(feats[1].h == 16);
  CHECK(feats[2].h == 8);

  SUBCASE("unit norm and determinism") {
    nn::Rng a(5), b(5);
    const auto e1 = embed_patches(head, feats, 32, nullptr, a);
    const auto e2 = embed_patches(head, feats, 32, nullptr, b);
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(e1.embeddings[l].rows() == 32);
      CHECK(e1.locations[l] == e2.locations[l]);
      CHECK(e1.embeddings[l] == e2.embeddings[l]);
      for (Eigen::Index i = 0; i < 32; ++i) CHECK(std::abs(e1.embeddings[l].row(i).norm() - 1.0) < 1e-5);
      CHECK(std::all_of(e1.weights[l].begin(), e1.weights[l].end(), [](double w) { return w == 1.0; }));
    }
  }
  SUBCASE("mask restricts locations when enough cells qualify") {
    KnowledgeMask m{Tensor(1, 32, 32)};
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 10; ++x) m.values.at(0, y, x) = 1.0;  // about 31% of the image
    nn::Rng r(6);
    const auto e = embed_patches(head, feats, 16, &m, r);
    for (std::size_t l = 0; l < 2; ++l) {
      const auto down = downsample_mask_to(m, feats[l].h, feats[l].w);
      for (std::size_t i = 0; i < e.locations[l].size(); ++i) {
        CHECK(down.values.data[static_cast<std::size_t>(e.locations[l][i])] > 0.5);
        CHECK(e.weights[l][i] == down.values.data[static_cast<std::size_t>(e.locations[l][i])]);
      }
    }
  }
  SUBCASE("empty mask falls back to unrestricted sampling with zero weights") {
    KnowledgeMask m{Tensor(1, 32, 32)};
    nn::Rng r(7);
    const auto e = embed_patches(head, feats, 16, &m, r);
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(e.locations[l].size() == 16);
      CHECK(std::all_of(e.weights[l].begin(), e.weights[l].end(), [](double w) { return w == 0.0; }));
    }
  }
  SUBCASE("n larger than the grid takes every cell once") {
    nn::Rng r(8);
    const auto e = embed_patches(head, feats, 100, nullptr, r);
    CHECK(e.locations[2].size() == 64);
    CHECK(e.locations[0].size() == 100);
  }
}

TEST_CASE("generator backward matches finite differences on 8x8 inputs") {
  nn::Rng rng(13);
  std::mt19937_64 g(14);
  auto cfg = small(8);
  Generator gen(cfg, rng);
  const auto state = random_state(8, g);
  Generator::Tape tape;
  const auto out = gen.forward(state, &tape);
  const Tensor rf = random_tensor(1, 8, 8, g, -1, 1);
  const Tensor ra = random_tensor(out.last_activation.c, 8, 8, g, -1, 1);
  auto objective = [&](const GenerationState& s) {
    const auto o = gen.forward(s);
    return dot(o.frame, rf) + dot(o.last_activation, ra);
  };
  auto ps = gen.params();
  nn::zero_grads(ps);
  const Tensor gin = gen.backward(tape, rf, ra, true);

  GenerationState s = state;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int ch = static_cast<int>(g() % 6), y = static_cast<int>(g() % 8), x = static_cast<int>(g() % 8);
    double& v = ch < 3 ? s.cf_image.at(ch, y, x) : s.prev_frames[static_cast<std::size_t>(ch - 3)].at(0, y, x);
    worst = std::max(worst, rel_error(gin.at(ch, y, x), central_diff([&] { return objective(s); }, v, 1e-5)));
  }
  for (auto [p, i] : param_probes(ps, g, 3))
    worst = std::max(worst, rel_error(p->grad[i], central_diff([&] { return objective(state); }, p->value[i], 1e-5)));
  CHECK(worst < 1e-4);
}

TEST_CASE("discriminator backward matches finite differences on 8x8 inputs") {
  nn::Rng rng(15);
  std::mt19937_64 g(16);
  MultiScaleDiscriminator disc(small(8), rng);
  Tensor pair = random_tensor(4, 8, 8, g, -1, 1);
  nn::Cache c;
  const Tensor logits = disc.forward(1, pair, c);
  const Tensor r = random_tensor(logits.c, logits.h, logits.w, g, -1, 1);
  auto ps = disc.params();
  nn::zero_grads(ps);
  const Tensor gin = disc.backward(1, c, r, true);
  auto objective = [&] {
    nn::Cache cc;
    return dot(disc.forward(1, pair, cc), r);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < pair.size(); ++i)
    worst = std::max(worst, rel_error(gin.data[i], central_diff(objective, pair.data[i], 1e-5)));
  for (auto [p, i] : param_probes(disc.at(1).params(), g, 4))
    worst = std::max(worst, rel_error(p->grad[i], central_diff(objective, p->value[i], 1e-5)));
  CHECK(worst < 1e-4);
}

TEST_CASE("projector backward matches finite differences") {
  nn::Rng rng(17);
  std::mt19937_64 g(18);
  const std::vector<int> chans{3, 2};
  PatchProjector head(chans, 8, rng, 0.5);
  std::vector<Tensor> feats{random_tensor(3, 4, 4, g, -1, 1), random_tensor(2, 2, 2, g, -1, 1)};
  std::vector<std::vector<int>> loc{{0, 5, 9, 15}, {0, 3}};
  std::vector<std::vector<double>> w{{1, 1, 1, 1}, {1, 1}};
  std::vector<RowMatrix> r;
  for (int n : {4, 2}) {
    RowMatrix m(n, 8);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::uniform_real_distribution<double>(-1, 1)(g);
    r.push_back(m);
  }
  auto objective = [&] {
    const auto e = head.embed_at(feats, loc, w);
    double s = 0.0;
    for (std::size_t l = 0; l < 2; ++l) s += (e.embeddings[l].array() * r[l].array()).sum();
    return s;
  };
  PatchProjector::Tape tape;
  head.embed_at(feats, loc, w, &tape);
  auto ps = head.params();
  nn::zero_grads(ps);
  const auto gfeat = head.backward(tape, r, true);
  double worst = 0.0;
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t i = 0; i < feats[l].size(); ++i)
      worst = std::max(worst, rel_error(gfeat[l].data[i], central_diff(objective, feats[l].data[i])));
  for (auto* p : ps)
    for (std::size_t i = 0; i < p->value.size(); ++i)
      worst = std::max(worst, rel_error(p->grad[i], central_diff(objective, p->value[i])));
  CHECK(worst < 1e-6);
}

TEST_CASE("encoder backward matches finite differences") {
  nn::Rng rng(19);
  std::mt19937_64 g(20);
  Generator gen(small(8), rng);
  Tensor in = random_tensor(6, 8, 8, g);
  nn::Cache c;
  const auto levels = gen.encode(in, c);
  std::vector<Tensor> r;
  for (const auto& f : levels) r.push_back(random_tensor(f.c, f.h, f.w, g, -1, 1));
  const Tensor gin = gen.encode_backward(c, r, false);
  auto objective = [&] {
    nn::Cache cc;
    const auto lv = gen.encode(in, cc);
    double s = 0.0;
    for (std::size_t l = 0; l < lv.size(); ++l) s += dot(lv[l], r[l]);
    return s;
  };
  double worst = 0.0;
  for (int i = 0; i < 30; ++i) {
    const std::size_t k = g() % in.size();
    worst = std::max(worst, rel_error(gin.data[k], central_diff(objective, in.data[k], 1e-5)));
  }
  CHECK(worst < 1e-4);
}
