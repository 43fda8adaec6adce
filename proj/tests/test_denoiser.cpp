#include <catch_amalgamated.hpp>

#include "bridgekit/denoiser.hpp"
#include "bridgekit/smiles.hpp"

using namespace bridgekit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.d_x = 8;
  cfg.d_e = 6;
  cfg.d_y = 8;
  cfg.heads = 2;
  cfg.align_layer = 1;
  return cfg;
}

struct TestPair {
  AtomVocab vocab;
  MolecularGraph reactants, product;
};

TestPair make_pair(int N = 6) {
  TestPair tp;
  MolecularGraph r = parse_smiles("CC.O", tp.vocab);
  MolecularGraph p = parse_smiles("CCO", tp.vocab);
  tp.reactants = pad_and_permute(r, N, 1).graph;
  tp.product = pad_and_permute(p, N, 2).graph;
  return tp;
}

std::vector<int> random_perm(int n, Rng& rng) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
  return perm;
}

}  // namespace

TEST_CASE("input embedding mirrors both graphs and the time feature") {
  TestPair tp = make_pair();
  ParamStore store;
  Rng rng(5);
  Denoiser model(tiny_config(), tp.vocab.size(), store, rng);

  SECTION("identical endpoint graphs produce equal one-hot halves") {
    EmbeddedInputs in = model.embed(tp.product, tp.product, 0.5);
    int K_a = tp.vocab.size();
    for (int i = 0; i < in.N; ++i)
      for (int k = 0; k < K_a; ++k) CHECK(in.node_in.at(i, k) == in.node_in.at(i, K_a + k));
    for (int r = 0; r < in.N * in.N; ++r)
      for (int k = 0; k < kNumBondTypes; ++k)
        CHECK(in.edge_in.at(r, k) == in.edge_in.at(r, kNumBondTypes + k));
  }

  SECTION("time feature is 0 at t=0 and 1 at t=T") {
    EmbeddedInputs at0 = model.embed(tp.reactants, tp.product, 0.0);
    EmbeddedInputs at1 = model.embed(tp.reactants, tp.product, 1.0);
    int time_col = 2 * tp.vocab.size();
    for (int i = 0; i < at0.N; ++i) {
      CHECK(at0.node_in.at(i, time_col) == 0.0);
      CHECK(at1.node_in.at(i, time_col) == 1.0);
    }
  }

  SECTION("dummy slots carry the dummy one-hot") {
    EmbeddedInputs in = model.embed(tp.reactants, tp.product, 0.3);
    for (int i = 0; i < in.N; ++i)
      if (!tp.reactants.node_mask[i]) CHECK(in.node_in.at(i, 0) == 1.0);
  }

  SECTION("mismatched widths are rejected") {
    MolecularGraph small(3);
    CHECK_THROWS_AS(model.embed(small, tp.product, 0.0), std::invalid_argument);
    std::vector<double> tok(10, 0.0);
    CHECK_THROWS_AS(model.embed(tp.reactants, tp.product, 0.0, &tok), std::invalid_argument);
  }
}

TEST_CASE("zero-initialized heads predict exactly uniform categories") {
  TestPair tp = make_pair();
  ParamStore store;
  Rng rng(11);
  Denoiser model(tiny_config(), tp.vocab.size(), store, rng);
  int K_a = tp.vocab.size();

  ParamCtx ctx(nullptr);
  DenoiserTrace tr = model.forward(ctx, model.embed(tp.product, tp.product, 0.5));
  for (int i = 0; i < tp.product.n; ++i)
    for (int k = 0; k < K_a; ++k) CHECK_THAT(tr.atom_probs.at(i, k), WithinAbs(1.0 / K_a, 1e-12));
  for (int r = 0; r < tp.product.n * tp.product.n; ++r)
    for (int k = 0; k < kNumBondTypes; ++k)
      CHECK_THAT(tr.bond_probs.at(r, k), WithinAbs(1.0 / kNumBondTypes, 1e-12));

  Tensor loss = model.base_loss(nullptr, tr, tp.reactants);
  double expect = std::log(double(K_a)) + 5.0 * std::log(double(kNumBondTypes));
  CHECK_THAT(loss.item(), WithinAbs(expect, 1e-9));

  CHECK(std::ssize(tr.X) == model.config().layers);
  CHECK(std::ssize(tr.E) == model.config().layers);
  CHECK(std::ssize(tr.y) == model.config().layers);
}

TEST_CASE("the whole trace is permutation equivariant") {
  TestPair tp = make_pair(7);
  ParamStore store;
  Rng rng(23);
  Denoiser model(tiny_config(), tp.vocab.size(), store, rng);
  // Heads start at zero; randomize them so the equivariance check also
  // covers the output maps.
  init_xavier_uniform(store.get("dn.head.atom.w"), rng);
  init_xavier_uniform(store.get("dn.head.bond.w"), rng);

  int N = tp.product.n;
  ParamCtx ctx(nullptr);
  DenoiserTrace base = model.forward(ctx, model.embed(tp.reactants, tp.product, 0.4));

  Rng prng(99);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> perm = random_perm(N, prng);
    MolecularGraph pr = apply_slot_permutation(tp.reactants, perm);
    MolecularGraph pp = apply_slot_permutation(tp.product, perm);
    ParamCtx ctx2(nullptr);
    DenoiserTrace got = model.forward(ctx2, model.embed(pr, pp, 0.4));

    double max_err = 0;
    for (int l = 0; l < model.config().layers; ++l) {
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < model.config().d_x; ++c)
          max_err = std::max(max_err, std::abs(got.X[l].at(perm[i], c) - base.X[l].at(i, c)));
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
          for (int c = 0; c < model.config().d_e; ++c)
            max_err = std::max(max_err, std::abs(got.E[l].at(perm[i] * N + perm[j], c) -
                                                 base.E[l].at(i * N + j, c)));
      for (int c = 0; c < model.config().d_y; ++c)
        max_err = std::max(max_err, std::abs(got.y[l].at(0, c) - base.y[l].at(0, c)));
    }
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < tp.vocab.size(); ++k)
        max_err = std::max(max_err, std::abs(got.atom_logits.at(perm[i], k) - base.atom_logits.at(i, k)));
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        for (int k = 0; k < kNumBondTypes; ++k)
          max_err = std::max(max_err, std::abs(got.bond_logits.at(perm[i] * N + perm[j], k) -
                                               base.bond_logits.at(i * N + j, k)));
    INFO("trial " << trial);
    CHECK(max_err <= 1e-7);
  }
}

TEST_CASE("bond logits are symmetric across slot pairs") {
  TestPair tp = make_pair();
  ParamStore store;
  Rng rng(31);
  Denoiser model(tiny_config(), tp.vocab.size(), store, rng);
  init_xavier_uniform(store.get("dn.head.bond.w"), rng);
  ParamCtx ctx(nullptr);
  DenoiserTrace tr = model.forward(ctx, model.embed(tp.reactants, tp.product, 0.2));
  int N = tp.product.n;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < kNumBondTypes; ++k)
        CHECK(tr.bond_logits.at(i * N + j, k) == tr.bond_logits.at(j * N + i, k));
}

TEST_CASE("base-loss gradients match finite differences through the full network") {
  TestPair tp = make_pair(5);
  ParamStore store;
  Rng rng(47);
  Denoiser model(tiny_config(), tp.vocab.size(), store, rng);

  auto loss_value = [&](Tape* tape, GradMap* grads) {
    ParamCtx ctx(tape);
    DenoiserTrace tr = model.forward(ctx, model.embed(tp.product, tp.product, 0.37));
    Tensor loss = model.base_loss(tape, tr, tp.reactants);
    if (tape) {
      tape->backward(loss);
      accumulate_grads(*tape, ctx, *grads);
    }
    return loss.item();
  };

  Tape tape;
  GradMap grads;
  loss_value(&tape, &grads);

  // The last layer's global-token update only feeds the next layer's
  // injection, so it has no path into the base loss; probe layer 1's block.
  std::vector<std::string> probe = {"dn.in.node.w",    "dn.l1.attn.qkv.w", "dn.l1.film.gamma.w",
                                    "dn.l2.ffn.w1",    "dn.l1.glob.v.w",   "dn.head.atom.w",
                                    "dn.head.bond.w",  "dn.l1.ln1.g",      "dn.l2.attn.bias.w"};
  Rng pick(7);
  double h = 1e-5;
  for (const auto& name : probe) {
    Parameter& p = store.get(name);
    REQUIRE(grads.count(name));
    for (int probe_i = 0; probe_i < 4; ++probe_i) {
      size_t idx = static_cast<size_t>(pick.uniform_int(static_cast<int>(p.size())));
      double saved = p.value[idx];
      p.value[idx] = saved + h;
      double up = loss_value(nullptr, nullptr);
      p.value[idx] = saved - h;
      double dn = loss_value(nullptr, nullptr);
      p.value[idx] = saved;
      double fd = (up - dn) / (2 * h);
      INFO(name << "[" << idx << "] analytic=" << grads[name][idx] << " fd=" << fd);
      REQUIRE_THAT(grads[name][idx], WithinRel(fd, 1e-4) || WithinAbs(fd, 1e-8));
    }
  }
}

TEST_CASE("fifty optimizer steps strictly shrink the loss on one memorized example") {
  TestPair tp = make_pair(5);
  ParamStore store;
  Rng rng(3);
  Denoiser model(tiny_config(), tp.vocab.size(), store, rng);

  AdamW::Config ocfg;
  ocfg.lr = 2e-3;
  AdamW opt(ocfg);

  double prev = 1e300;
  for (int step = 0; step < 50; ++step) {
    Tape tape;
    ParamCtx ctx(&tape);
    DenoiserTrace tr = model.forward(ctx, model.embed(tp.product, tp.product, 0.5));
    Tensor loss = model.base_loss(&tape, tr, tp.reactants);
    tape.backward(loss);
    GradMap grads;
    accumulate_grads(tape, ctx, grads);
    opt.step(store, grads);
    INFO("step " << step << " loss " << loss.item());
    CHECK(loss.item() < prev + 1e-12);
    prev = loss.item();
  }
  ParamCtx ctx(nullptr);
  DenoiserTrace tr = model.forward(ctx, model.embed(tp.product, tp.product, 0.5));
  double final_loss = model.base_loss(nullptr, tr, tp.reactants).item();
  double init_loss = std::log(double(tp.vocab.size())) + 5.0 * std::log(double(kNumBondTypes));
  CHECK(final_loss < 0.5 * init_loss);
}

TEST_CASE("token pathway is wired into the network when configured") {
  TestPair tp = make_pair();
  DenoiserConfig cfg = tiny_config();
  cfg.token_dim = 10;
  cfg.token_discrete = true;
  ParamStore store;
  Rng rng(19);
  Denoiser model(cfg, tp.vocab.size(), store, rng);

  std::vector<double> tok(10, 0.0);
  tok[3] = 1.0;
  ParamCtx ctx(nullptr);
  DenoiserTrace tr = model.forward(ctx, model.embed(tp.reactants, tp.product, 0.5, &tok));
  REQUIRE(tr.token_out.cols == 10);
  Tensor probs = t_softmax_rows(nullptr, tr.token_out);
  for (int k = 0; k < 10; ++k) CHECK_THAT(probs.at(0, k), WithinAbs(0.1, 1e-12));

  std::vector<double> tok2(10, 0.0);
  tok2[7] = 1.0;
  ParamCtx ctx2(nullptr);
  DenoiserTrace tr2 = model.forward(ctx2, model.embed(tp.reactants, tp.product, 0.5, &tok2));
  double diff = 0;
  for (int i = 0; i < tp.reactants.n; ++i)
    for (int c = 0; c < cfg.d_x; ++c) diff = std::max(diff, std::abs(tr2.X.back().at(i, c) - tr.X.back().at(i, c)));
  CHECK(diff > 1e-8);

  CHECK_THROWS_AS(model.embed(tp.reactants, tp.product, 0.5), std::invalid_argument);
}

TEST_CASE("invalid configurations and non-finite activations are rejected") {
  DenoiserConfig bad = tiny_config();
  bad.align_layer = 3;
  ParamStore s1;
  Rng rng(1);
  CHECK_THROWS_AS(Denoiser(bad, 4, s1, rng), std::invalid_argument);

  DenoiserConfig odd = tiny_config();
  odd.heads = 3;
  ParamStore s2;
  CHECK_THROWS_AS(Denoiser(odd, 4, s2, rng), std::invalid_argument);

  TestPair tp = make_pair();
  ParamStore s3;
  Denoiser model(tiny_config(), tp.vocab.size(), s3, rng);
  s3.get("dn.l1.ffn.w1").value[0] = std::numeric_limits<double>::infinity();
  ParamCtx ctx(nullptr);
  CHECK_THROWS_AS(model.forward(ctx, model.embed(tp.reactants, tp.product, 0.5)), std::runtime_error);
}
