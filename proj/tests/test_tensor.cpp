#include <catch_amalgamated.hpp>

#include <cstdio>
#include <functional>

#include "bridgekit/nn.hpp"
#include "bridgekit/tensor.hpp"

using namespace bridgekit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Tensor rand_tensor(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (size_t i = 0; i < t.size(); ++i) (*t.data)[i] = lo + rng.uniform() * (hi - lo);
  return t;
}

// Keeps every coordinate at least `gap` away from zero so kinked ops (relu)
// stay on one side of the kink under finite-difference probing.
Tensor rand_tensor_off_zero(Rng& rng, int rows, int cols, double gap = 0.1) {
  Tensor t(rows, cols);
  for (size_t i = 0; i < t.size(); ++i) {
    double m = gap + rng.uniform() * 0.9;
    (*t.data)[i] = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

using LossFn = std::function<Tensor(Tape*, std::vector<Tensor>&)>;

// Checks analytic gradients of a scalar-valued graph against central finite
// differences on every coordinate of every input.
void check_grads(const LossFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  Tape tape;
  for (auto& in : inputs) in.node = tape.leaf(in);
  Tensor loss = f(&tape, inputs);
  REQUIRE(loss.rows == 1);
  REQUIRE(loss.cols == 1);
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs)
    analytic.push_back(tape.has_grad(in.node) ? tape.grad(in.node) : std::vector<double>(in.size(), 0.0));

  for (size_t k = 0; k < inputs.size(); ++k) {
    for (size_t i = 0; i < inputs[k].size(); ++i) {
      double saved = (*inputs[k].data)[i];
      (*inputs[k].data)[i] = saved + h;
      double up = f(nullptr, inputs).item();
      (*inputs[k].data)[i] = saved - h;
      double dn = f(nullptr, inputs).item();
      (*inputs[k].data)[i] = saved;
      double fd = (up - dn) / (2 * h);
      INFO("input " << k << " coord " << i << " analytic=" << analytic[k][i] << " fd=" << fd);
      REQUIRE_THAT(analytic[k][i], WithinRel(fd, 1e-4) || WithinAbs(fd, 1e-7));
    }
  }
}

// Projects an arbitrary tensor to a scalar through fixed constant weights so
// the cotangent reaching the op under test is dense and non-uniform.
Tensor project(Tape* tape, const Tensor& x, uint64_t seed) {
  Rng rng(seed);
  Tensor w(x.rows, x.cols);
  for (size_t i = 0; i < w.size(); ++i) (*w.data)[i] = -1.0 + 2.0 * rng.uniform();
  return t_reduce_all(tape, t_mul(tape, x, w), false);
}

}  // namespace

TEST_CASE("matmul forward matches a hand-multiplied example") {
  Tensor a = tensor_of({1, 2, 3, 4}, 2, 2);
  Tensor b = tensor_of({5, 6, 7, 8}, 2, 2);
  Tensor c = t_matmul(nullptr, a, b);
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(0, 1) == 22);
  CHECK(c.at(1, 0) == 43);
  CHECK(c.at(1, 1) == 50);
}

TEST_CASE("softmax of equal logits is uniform") {
  Tensor x = tensor_of({3.25, 3.25, 3.25, 3.25, 3.25}, 1, 5);
  Tensor s = t_softmax_rows(nullptr, x);
  for (int j = 0; j < 5; ++j) CHECK_THAT(s.at(0, j), WithinAbs(0.2, 1e-15));
}

TEST_CASE("sum gradient is all ones and quadratic gradient is 2p") {
  Rng rng(7);
  Tensor p = rand_tensor(rng, 3, 4);
  {
    Tape tape;
    p.node = tape.leaf(p);
    Tensor loss = t_reduce_all(&tape, p, false);
    tape.backward(loss);
    for (double g : tape.grad(p.node)) CHECK(g == 1.0);
  }
  {
    Tape tape;
    p.node = tape.leaf(p);
    Tensor loss = t_reduce_all(&tape, t_mul(&tape, p, p), false);
    tape.backward(loss);
    const auto& g = tape.grad(p.node);
    for (size_t i = 0; i < p.size(); ++i) CHECK_THAT(g[i], WithinAbs(2.0 * (*p.data)[i], 1e-12));
  }
}

TEST_CASE("relu backward is zero at negative inputs") {
  Tensor x = tensor_of({-1.0, -0.5, 2.0, -3.0}, 1, 4);
  Tape tape;
  x.node = tape.leaf(x);
  Tensor loss = t_reduce_all(&tape, t_relu(&tape, x), false);
  tape.backward(loss);
  const auto& g = tape.grad(x.node);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 1.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("finite differences confirm every op gradient") {
  Rng rng(1234);

  SECTION("add, sub, mul") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) {
          Tensor s = t_add(t, in[0], in[1]);
          s = t_sub(t, s, in[2]);
          s = t_mul(t, s, in[1]);
          return project(t, s, 11);
        },
        {rand_tensor(rng, 3, 5), rand_tensor(rng, 3, 5), rand_tensor(rng, 3, 5)});
  }

  SECTION("add_bias") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_add_bias(t, in[0], in[1]), 12); },
        {rand_tensor(rng, 4, 3), rand_tensor(rng, 1, 3)});
  }

  SECTION("mul_scalar_t") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_mul_scalar_t(t, in[0], in[1]), 13); },
        {rand_tensor(rng, 3, 4), rand_tensor(rng, 1, 1)});
  }

  SECTION("affine") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_affine(t, in[0], -1.7, 0.3), 14); },
        {rand_tensor(rng, 2, 6)});
  }

  SECTION("matmul") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_matmul(t, in[0], in[1]), 15); },
        {rand_tensor(rng, 3, 4), rand_tensor(rng, 4, 5)});
  }

  SECTION("transpose") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_transpose(t, in[0]), 16); },
        {rand_tensor(rng, 3, 5)});
  }

  SECTION("relu") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_relu(t, in[0]), 17); },
        {rand_tensor_off_zero(rng, 4, 4)});
  }

  SECTION("softmax_rows") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_softmax_rows(t, in[0]), 18); },
        {rand_tensor(rng, 3, 6, -2, 2)});
  }

  SECTION("layer_norm including gain and bias") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) {
          return project(t, t_layer_norm(t, in[0], in[1], in[2]), 19);
        },
        {rand_tensor(rng, 4, 6, -2, 2), rand_tensor(rng, 1, 6, 0.5, 1.5), rand_tensor(rng, 1, 6)});
  }

  SECTION("concat_cols and slice_cols") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) {
          Tensor c = t_concat_cols(t, in[0], in[1]);
          return project(t, t_slice_cols(t, c, 1, 4), 20);
        },
        {rand_tensor(rng, 3, 3), rand_tensor(rng, 3, 4)});
  }

  SECTION("expand_rows") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_expand_rows(t, in[0], 5), 21); },
        {rand_tensor(rng, 1, 4)});
  }

  SECTION("pair_concat") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_pair_concat(t, in[0]), 22); },
        {rand_tensor(rng, 4, 3)});
  }

  SECTION("tile_nodes and sum_segments") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) {
          Tensor tiled = t_tile_nodes(t, in[0]);
          return project(t, t_sum_segments(t, tiled, in[0].rows), 23);
        },
        {rand_tensor(rng, 4, 3)});
  }

  SECTION("row_scale") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) {
          return project(t, t_row_scale(t, in[0], {0.0, 1.0, 0.5, 2.0}), 24);
        },
        {rand_tensor(rng, 4, 3)});
  }

  SECTION("row_permute with a repeated source row") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) {
          return project(t, t_row_permute(t, in[0], {2, 0, 1, 0}), 28);
        },
        {rand_tensor(rng, 4, 3)});
  }

  SECTION("reshape") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_reshape(t, in[0], 2, 6), 25); },
        {rand_tensor(rng, 3, 4)});
  }

  SECTION("row_cosine in both arguments") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return project(t, t_row_cosine(t, in[0], in[1]), 26); },
        {rand_tensor_off_zero(rng, 3, 5), rand_tensor_off_zero(rng, 3, 5)});
  }

  SECTION("cross_entropy_rows with weighted and skipped rows") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) {
          return t_cross_entropy_rows(t, in[0], {2, 0, 3, 1}, {1.0, 0.0, 2.0, 0.5});
        },
        {rand_tensor(rng, 4, 5, -2, 2)});
  }

  SECTION("mse in both arguments") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return t_mse(t, in[0], in[1]); },
        {rand_tensor(rng, 3, 4), rand_tensor(rng, 3, 4)});
  }

  SECTION("reduce_rows weighted mean") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) {
          return project(t, t_reduce_rows(t, in[0], {0.5, 0.0, 1.5, 1.0}, true), 27);
        },
        {rand_tensor(rng, 4, 3)});
  }

  SECTION("reduce_all mean") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return t_reduce_all(t, in[0], true); },
        {rand_tensor(rng, 3, 5)});
  }

  SECTION("flat cosine similarity") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) { return cosine_similarity(t, in[0], in[1]); },
        {rand_tensor_off_zero(rng, 3, 4), rand_tensor_off_zero(rng, 3, 4)});
  }

  SECTION("composite block: affine transform, normalization, attention-style mix") {
    check_grads(
        [](Tape* t, std::vector<Tensor>& in) {
          Tensor h = t_add_bias(t, t_matmul(t, in[0], in[1]), in[2]);
          h = t_layer_norm(t, h, in[3], in[4]);
          Tensor scores = t_matmul(t, h, t_transpose(t, h));
          Tensor attn = t_softmax_rows(t, t_affine(t, scores, 0.5, 0.0));
          Tensor mixed = t_matmul(t, attn, h);
          Tensor out = t_relu(t, t_add(t, mixed, h));
          return t_cross_entropy_rows(t, out, {0, 2, 1}, {1.0, 1.0, 1.0});
        },
        {rand_tensor(rng, 3, 4), rand_tensor(rng, 4, 3), rand_tensor(rng, 1, 3),
         rand_tensor(rng, 1, 3, 0.5, 1.5), rand_tensor(rng, 1, 3)});
  }
}

TEST_CASE("rows with zero weight are invisible to the cross entropy") {
  Rng rng(55);
  Tensor logits = rand_tensor(rng, 3, 4);
  Tensor base = t_cross_entropy_rows(nullptr, logits, {1, 2, 0}, {1.0, 0.0, 1.0});
  Tensor changed = logits;
  Tensor copy(3, 4);
  *copy.data = *logits.data;
  copy.at(1, 0) += 100.0;
  copy.at(1, 3) -= 50.0;
  Tensor after = t_cross_entropy_rows(nullptr, copy, {1, 2, 0}, {1.0, 0.0, 1.0});
  CHECK(base.item() == after.item());

  Tape tape;
  logits.node = tape.leaf(logits);
  Tensor loss = t_cross_entropy_rows(&tape, logits, {1, 2, 0}, {1.0, 0.0, 1.0});
  tape.backward(loss);
  const auto& g = tape.grad(logits.node);
  for (int j = 0; j < 4; ++j) CHECK(g[4 + j] == 0.0);
}

TEST_CASE("a parameter used twice accumulates gradient from both uses") {
  ParamStore store;
  Parameter& w = store.add("w", 2, 2);
  w.value = {1.0, 2.0, -1.0, 0.5};
  Tensor a = tensor_of({1, 0, 0, 1}, 2, 2);
  Tensor b = tensor_of({0.5, 0.5, 0.5, 0.5}, 2, 2);

  Tape tape;
  ParamCtx ctx(&tape);
  Tensor w1 = ctx.use(w);
  Tensor w2 = ctx.use(w);
  CHECK(w1.node == w2.node);
  Tensor loss = t_reduce_all(&tape, t_add(&tape, t_matmul(&tape, w1, a), t_matmul(&tape, w2, b)), false);
  tape.backward(loss);

  GradMap grads;
  accumulate_grads(tape, ctx, grads);
  REQUIRE(grads.count("w"));
  // d/dW sum(W A) = rowsum-broadcast of A columns: each w_ij gets sum_k A_jk.
  std::vector<double> expect = {1.0 + 1.0, 1.0 + 1.0, 1.0 + 1.0, 1.0 + 1.0};
  for (int i = 0; i < 4; ++i) CHECK_THAT(grads["w"][i], WithinAbs(expect[i], 1e-12));
}

TEST_CASE("optimizer leaves parameters unchanged for zero gradients and zero decay") {
  ParamStore store;
  Parameter& p = store.add("p", 2, 3);
  Rng rng(9);
  for (double& v : p.value) v = rng.uniform();
  std::vector<double> before = p.value;

  AdamW::Config cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  GradMap grads;
  grads["p"] = std::vector<double>(6, 0.0);
  opt.step(store, grads);
  CHECK(p.value == before);
}

TEST_CASE("optimizer matches a hand-stepped scalar reference") {
  ParamStore store;
  Parameter& p = store.add("theta", 1, 1);
  p.value = {0.5};

  AdamW::Config cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 0.1;
  AdamW opt(cfg);

  std::vector<double> gseq = {0.3, -0.2, 0.1, 0.4, -0.5, 0.05, 0.0, -0.3};

  double theta = 0.5, m = 0.0, v = 0.0, vmax = 0.0;
  for (size_t k = 0; k < gseq.size(); ++k) {
    GradMap grads;
    grads["theta"] = {gseq[k]};
    opt.step(store, grads);

    double g = gseq[k];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    vmax = std::max(vmax, v);
    double mhat = m / (1.0 - std::pow(0.9, double(k + 1)));
    double vhat = vmax / (1.0 - std::pow(0.999, double(k + 1)));
    theta -= 1e-2 * mhat / (std::sqrt(vhat) + 1e-8);
    theta -= 1e-2 * 0.1 * theta;

    INFO("step " << k + 1);
    CHECK_THAT(p.value[0], WithinAbs(theta, 1e-14));
  }
}

TEST_CASE("per-step update magnitude stays within the learning rate bound") {
  ParamStore store;
  Parameter& p = store.add("p", 1, 4);
  p.value = {1.0, -2.0, 0.25, 10.0};

  AdamW::Config cfg;
  cfg.lr = 5e-3;
  AdamW opt(cfg);
  for (int step = 0; step < 200; ++step) {
    std::vector<double> before = p.value;
    GradMap grads;
    grads["p"] = {0.7, 0.7, 0.7, 0.7};
    opt.step(store, grads);
    for (int i = 0; i < 4; ++i) {
      double delta = std::abs(p.value[i] - before[i]);
      CHECK(delta <= cfg.lr * 1.000001 + cfg.lr * cfg.weight_decay * std::abs(before[i]));
    }
  }
}

TEST_CASE("checkpoints round-trip and serialize deterministically") {
  auto build = [] {
    ParamStore s;
    s.add("enc.w", 4, 3);
    s.add("enc.b", 1, 3);
    s.add("head.scale", 1, 1);
    return s;
  };
  ParamStore a = build();
  Rng rng(31);
  for (auto& p : a.all())
    for (double& v : p->value) v = -3.0 + 6.0 * rng.uniform();

  std::string path = "ckpt_test.bin";
  save_checkpoint(path, a);

  ParamStore b = build();
  load_checkpoint(path, b);
  for (auto& p : a.all()) {
    const Parameter& q = b.get(p->name);
    for (size_t i = 0; i < p->size(); ++i)
      CHECK(q.value[i] == static_cast<double>(static_cast<float>(p->value[i])));
  }

  std::string path2 = "ckpt_test2.bin";
  save_checkpoint(path2, a);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string bytes1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string bytes2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(bytes1 == bytes2);
  CHECK(bytes1.substr(0, 5) == "BKPT1");

  SECTION("loading into a store with an extra parameter fails") {
    ParamStore c = build();
    c.add("extra", 2, 2);
    CHECK_THROWS_AS(load_checkpoint(path, c), IoError);
  }
  SECTION("loading a file with an unknown parameter fails") {
    ParamStore c;
    c.add("enc.w", 4, 3);
    c.add("enc.b", 1, 3);
    CHECK_THROWS_AS(load_checkpoint(path, c), IoError);
  }
  SECTION("shape mismatch fails") {
    ParamStore c;
    c.add("enc.w", 3, 4);
    c.add("enc.b", 1, 3);
    c.add("head.scale", 1, 1);
    CHECK_THROWS_AS(load_checkpoint(path, c), IoError);
  }
  SECTION("bad magic fails") {
    std::ofstream bad("ckpt_bad.bin", std::ios::binary);
    bad << "NOPE!junk";
    bad.close();
    ParamStore c = build();
    CHECK_THROWS_AS(load_checkpoint("ckpt_bad.bin", c), IoError);
    std::remove("ckpt_bad.bin");
  }

  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("xavier initialization stays inside its fan limit and is seed-stable") {
  ParamStore s;
  Parameter& w = s.add("w", 8, 8);
  Rng r1(42);
  init_xavier_uniform(w, r1);
  double limit = std::sqrt(6.0 / 16.0);
  for (double v : w.value) CHECK(std::abs(v) <= limit);
  std::vector<double> first = w.value;
  Rng r2(42);
  init_xavier_uniform(w, r2);
  CHECK(w.value == first);
}
