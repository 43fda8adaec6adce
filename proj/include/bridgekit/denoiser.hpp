#pragma once

#include <string>
#include <vector>

#include "bridgekit/graph.hpp"
#include "bridgekit/nn.hpp"
#include "bridgekit/tensor.hpp"

namespace bridgekit {

struct DenoiserConfig {
  int layers = 6;
  int d_x = 64;
  int d_e = 32;
  int d_y = 64;
  int heads = 4;
  int align_layer = 4;
  int token_dim = 0;           // 0 disables the token pathway
  bool token_discrete = false;  // 10-way class logits vs d_z regression head

  void validate() const {
    if (layers < 1) throw std::invalid_argument("denoiser: layers must be positive");
    if (align_layer < 1 || align_layer > layers)
      throw std::invalid_argument("denoiser: align_layer must be in [1, layers]");
    if (d_x % heads != 0) throw std::invalid_argument("denoiser: d_x must be divisible by heads");
    if (token_dim < 0) throw std::invalid_argument("denoiser: token_dim must be nonnegative");
    if (token_discrete && token_dim != 10)
      throw std::invalid_argument("denoiser: discrete token pathway uses 10 classes");
  }
};

// Constant input encodings for one (G_t, G_P, t) triple. Node rows carry the
// one-hot of both graphs' atom categories plus the normalized time; edge rows
// carry both bond one-hots. The optional token row is the corrupted z_t.
struct EmbeddedInputs {
  int N = 0;
  Tensor node_in;   // N x (2 K_a + 1)
  Tensor edge_in;   // N^2 x (2 K_b)
  Tensor token_in;  // 1 x token_dim when the pathway is enabled
};

struct DenoiserTrace {
  std::vector<Tensor> X;  // per layer, N x d_x
  std::vector<Tensor> E;  // per layer, N^2 x d_e
  std::vector<Tensor> y;  // per layer, 1 x d_y
  Tensor z;               // final token state, 1 x d_y
  Tensor atom_logits;     // N x K_a
  Tensor bond_logits;     // N^2 x K_b, symmetrized across (i,j)
  Tensor atom_probs;
  Tensor bond_probs;
  Tensor token_out;       // 1 x 10 logits or 1 x d_z
};

// Graph-transformer denoiser over padded slot graphs. No positional
// identifiers enter the computation, so the network is permutation
// equivariant by construction. Output heads start at zero so the initial
// predictive distributions are exactly uniform.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, int atom_categories, ParamStore& store, Rng& rng)
      : cfg_(cfg), K_a_(atom_categories) {
    cfg_.validate();
    if (K_a_ < 1) throw std::invalid_argument("denoiser: need at least one atom category");
    int in_node = 2 * K_a_ + 1;
    int in_edge = 2 * kNumBondTypes;

    in_node_w_ = &xavier(store, rng, "dn.in.node.w", in_node, cfg_.d_x);
    in_node_b_ = &zeros(store, "dn.in.node.b", 1, cfg_.d_x);
    in_edge_w_ = &xavier(store, rng, "dn.in.edge.w", in_edge, cfg_.d_e);
    in_edge_b_ = &zeros(store, "dn.in.edge.b", 1, cfg_.d_e);
    in_glob_w_ = &xavier(store, rng, "dn.in.glob.w", in_node, cfg_.d_y);
    in_glob_b_ = &zeros(store, "dn.in.glob.b", 1, cfg_.d_y);
    if (cfg_.token_dim > 0) {
      in_tok_w_ = &xavier(store, rng, "dn.in.tok.w", cfg_.token_dim, cfg_.d_y);
      in_tok_b_ = &zeros(store, "dn.in.tok.b", 1, cfg_.d_y);
    }

    layers_.resize(cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l) {
      std::string pre = "dn.l" + std::to_string(l + 1) + ".";
      Layer& L = layers_[l];
      L.qkv_w = &xavier(store, rng, pre + "attn.qkv.w", cfg_.d_x, 3 * cfg_.d_x);
      L.qkv_b = &zeros(store, pre + "attn.qkv.b", 1, 3 * cfg_.d_x);
      L.bias_w = &xavier(store, rng, pre + "attn.bias.w", cfg_.d_e, cfg_.heads);
      L.bias_b = &zeros(store, pre + "attn.bias.b", 1, cfg_.heads);
      L.out_w = &xavier(store, rng, pre + "attn.out.w", cfg_.d_x, cfg_.d_x);
      L.out_b = &zeros(store, pre + "attn.out.b", 1, cfg_.d_x);
      L.ln1_g = &ones(store, pre + "ln1.g", 1, cfg_.d_x);
      L.ln1_b = &zeros(store, pre + "ln1.b", 1, cfg_.d_x);
      L.inj_w = &xavier(store, rng, pre + "inj.w", cfg_.d_y, cfg_.d_x);
      L.inj_b = &zeros(store, pre + "inj.b", 1, cfg_.d_x);
      if (cfg_.token_dim > 0) L.injz_w = &xavier(store, rng, pre + "injz.w", cfg_.d_y, cfg_.d_x);
      L.ffn_w1 = &xavier(store, rng, pre + "ffn.w1", cfg_.d_x, 2 * cfg_.d_x);
      L.ffn_b1 = &zeros(store, pre + "ffn.b1", 1, 2 * cfg_.d_x);
      L.ffn_w2 = &xavier(store, rng, pre + "ffn.w2", 2 * cfg_.d_x, cfg_.d_x);
      L.ffn_b2 = &zeros(store, pre + "ffn.b2", 1, cfg_.d_x);
      L.ln2_g = &ones(store, pre + "ln2.g", 1, cfg_.d_x);
      L.ln2_b = &zeros(store, pre + "ln2.b", 1, cfg_.d_x);
      L.film_u_w = &xavier(store, rng, pre + "film.u.w", 2 * cfg_.d_x, cfg_.d_e);
      L.film_u_b = &zeros(store, pre + "film.u.b", 1, cfg_.d_e);
      L.film_g_w = &xavier(store, rng, pre + "film.gamma.w", cfg_.d_e, cfg_.d_e);
      L.film_g_b = &zeros(store, pre + "film.gamma.b", 1, cfg_.d_e);
      L.film_b_w = &xavier(store, rng, pre + "film.beta.w", cfg_.d_e, cfg_.d_e);
      L.film_b_b = &zeros(store, pre + "film.beta.b", 1, cfg_.d_e);
      L.lne_g = &ones(store, pre + "lne.g", 1, cfg_.d_e);
      L.lne_b = &zeros(store, pre + "lne.b", 1, cfg_.d_e);
      init_global(store, rng, pre + "glob.", L.glob);
      if (cfg_.token_dim > 0) init_global(store, rng, pre + "tok.", L.tok);
    }

    head_atom_w_ = &zeros(store, "dn.head.atom.w", cfg_.d_x, K_a_);
    head_atom_b_ = &zeros(store, "dn.head.atom.b", 1, K_a_);
    head_bond_w_ = &zeros(store, "dn.head.bond.w", cfg_.d_e, kNumBondTypes);
    head_bond_b_ = &zeros(store, "dn.head.bond.b", 1, kNumBondTypes);
    if (cfg_.token_dim > 0) {
      head_tok_w_ = &zeros(store, "dn.head.tok.w", cfg_.d_y, cfg_.token_dim);
      head_tok_b_ = &zeros(store, "dn.head.tok.b", 1, cfg_.token_dim);
    }
  }

  const DenoiserConfig& config() const { return cfg_; }
  int atom_categories() const { return K_a_; }

  // token_features: one-hot class row (discrete) or corrupted z_t vector
  // (continuous); null when the pathway is disabled.
  EmbeddedInputs embed(const MolecularGraph& G_t, const MolecularGraph& G_P, double t_frac,
                       const std::vector<double>* token_features = nullptr) const {
    if (G_t.n != G_P.n) throw std::invalid_argument("denoiser embed: graphs must share N");
    int N = G_t.n;
    EmbeddedInputs in;
    in.N = N;
    in.node_in = Tensor(N, 2 * K_a_ + 1);
    for (int i = 0; i < N; ++i) {
      in.node_in.at(i, G_t.atom_types[i]) = 1.0;
      in.node_in.at(i, K_a_ + G_P.atom_types[i]) = 1.0;
      in.node_in.at(i, 2 * K_a_) = t_frac;
    }
    in.edge_in = Tensor(N * N, 2 * kNumBondTypes);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        int r = i * N + j;
        in.edge_in.at(r, G_t.bond(i, j)) = 1.0;
        in.edge_in.at(r, kNumBondTypes + G_P.bond(i, j)) = 1.0;
      }
    if (cfg_.token_dim > 0) {
      if (!token_features || static_cast<int>(token_features->size()) != cfg_.token_dim)
        throw std::invalid_argument("denoiser embed: token features missing or wrong width");
      in.token_in = tensor_of(*token_features, 1, cfg_.token_dim);
    } else if (token_features) {
      throw std::invalid_argument("denoiser embed: token features supplied but pathway disabled");
    }
    return in;
  }

  DenoiserTrace forward(ParamCtx& ctx, const EmbeddedInputs& in) const {
    Tape* tp = ctx.tape();
    int N = in.N;
    int d_h = cfg_.d_x / cfg_.heads;
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d_h));
    double inv_sqrt_dx = 1.0 / std::sqrt(static_cast<double>(cfg_.d_x));

    DenoiserTrace tr;
    Tensor X = t_add_bias(tp, t_matmul(tp, in.node_in, ctx.use(*in_node_w_)), ctx.use(*in_node_b_));
    Tensor E = t_add_bias(tp, t_matmul(tp, in.edge_in, ctx.use(*in_edge_w_)), ctx.use(*in_edge_b_));
    Tensor pooled = t_reduce_rows(tp, in.node_in, {}, true);
    Tensor y = t_add_bias(tp, t_matmul(tp, pooled, ctx.use(*in_glob_w_)), ctx.use(*in_glob_b_));
    Tensor z;
    if (cfg_.token_dim > 0)
      z = t_add_bias(tp, t_matmul(tp, in.token_in, ctx.use(*in_tok_w_)), ctx.use(*in_tok_b_));

    for (int l = 0; l < cfg_.layers; ++l) {
      const Layer& L = layers_[l];

      Tensor qkv = t_add_bias(tp, t_matmul(tp, X, ctx.use(*L.qkv_w)), ctx.use(*L.qkv_b));
      Tensor bias_all = t_add_bias(tp, t_matmul(tp, E, ctx.use(*L.bias_w)), ctx.use(*L.bias_b));
      Tensor heads_out;
      for (int h = 0; h < cfg_.heads; ++h) {
        Tensor Q = t_slice_cols(tp, qkv, h * d_h, d_h);
        Tensor K = t_slice_cols(tp, qkv, cfg_.d_x + h * d_h, d_h);
        Tensor V = t_slice_cols(tp, qkv, 2 * cfg_.d_x + h * d_h, d_h);
        Tensor bias_h = t_reshape(tp, t_slice_cols(tp, bias_all, h, 1), N, N);
        Tensor scores = t_add(tp, t_affine(tp, t_matmul(tp, Q, t_transpose(tp, K)), inv_sqrt_dh, 0.0), bias_h);
        Tensor mixed = t_matmul(tp, t_softmax_rows(tp, scores), V);
        heads_out = h == 0 ? mixed : t_concat_cols(tp, heads_out, mixed);
      }
      Tensor attn = t_add_bias(tp, t_matmul(tp, heads_out, ctx.use(*L.out_w)), ctx.use(*L.out_b));
      X = t_layer_norm(tp, t_add(tp, X, attn), ctx.use(*L.ln1_g), ctx.use(*L.ln1_b));

      Tensor inj = t_add_bias(tp, t_matmul(tp, y, ctx.use(*L.inj_w)), ctx.use(*L.inj_b));
      if (cfg_.token_dim > 0) inj = t_add(tp, inj, t_matmul(tp, z, ctx.use(*L.injz_w)));
      Tensor H = t_add(tp, X, t_expand_rows(tp, inj, N));
      Tensor F = t_relu(tp, t_add_bias(tp, t_matmul(tp, H, ctx.use(*L.ffn_w1)), ctx.use(*L.ffn_b1)));
      F = t_add_bias(tp, t_matmul(tp, F, ctx.use(*L.ffn_w2)), ctx.use(*L.ffn_b2));
      X = t_layer_norm(tp, t_add(tp, X, F), ctx.use(*L.ln2_g), ctx.use(*L.ln2_b));

      Tensor P = t_pair_concat(tp, X);
      Tensor U = t_relu(tp, t_add_bias(tp, t_matmul(tp, P, ctx.use(*L.film_u_w)), ctx.use(*L.film_u_b)));
      Tensor gamma = t_add_bias(tp, t_matmul(tp, U, ctx.use(*L.film_g_w)), ctx.use(*L.film_g_b));
      Tensor beta = t_add_bias(tp, t_matmul(tp, U, ctx.use(*L.film_b_w)), ctx.use(*L.film_b_b));
      E = t_layer_norm(tp, t_add(tp, t_add(tp, E, t_mul(tp, E, gamma)), beta), ctx.use(*L.lne_g),
                       ctx.use(*L.lne_b));

      y = global_update(ctx, L.glob, y, X, inv_sqrt_dx);
      if (cfg_.token_dim > 0) z = global_update(ctx, L.tok, z, X, inv_sqrt_dx);

      check_finite(X, l + 1, "node");
      check_finite(E, l + 1, "edge");
      check_finite(y, l + 1, "global");
      if (cfg_.token_dim > 0) check_finite(z, l + 1, "token");
      tr.X.push_back(X);
      tr.E.push_back(E);
      tr.y.push_back(y);
    }

    tr.atom_logits = t_add_bias(tp, t_matmul(tp, X, ctx.use(*head_atom_w_)), ctx.use(*head_atom_b_));
    Tensor raw_bond = t_add_bias(tp, t_matmul(tp, E, ctx.use(*head_bond_w_)), ctx.use(*head_bond_b_));
    std::vector<int> swap(static_cast<size_t>(N) * N);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) swap[static_cast<size_t>(i) * N + j] = j * N + i;
    tr.bond_logits =
        t_affine(tp, t_add(tp, raw_bond, t_row_permute(tp, raw_bond, std::move(swap))), 0.5, 0.0);
    tr.atom_probs = t_softmax_rows(tp, tr.atom_logits);
    tr.bond_probs = t_softmax_rows(tp, tr.bond_logits);
    if (cfg_.token_dim > 0) {
      tr.z = z;
      tr.token_out = t_add_bias(tp, t_matmul(tp, z, ctx.use(*head_tok_w_)), ctx.use(*head_tok_b_));
    }
    return tr;
  }

  // Cross entropy of the clean-graph heads against the reactant answer:
  // mean over all node slots plus 5x the mean over upper-triangle edge slots.
  Tensor base_loss(Tape* tape, const DenoiserTrace& tr, const MolecularGraph& reactants) const {
    int N = reactants.n;
    std::vector<int> atom_targets = reactants.atom_types;
    std::vector<double> atom_weights(N, 1.0);
    Tensor node_ce = t_cross_entropy_rows(tape, tr.atom_logits, std::move(atom_targets), std::move(atom_weights));
    std::vector<int> bond_targets(static_cast<size_t>(N) * N, 0);
    std::vector<double> bond_weights(static_cast<size_t>(N) * N, 0.0);
    for (int i = 0; i < N; ++i)
      for (int j = i + 1; j < N; ++j) {
        bond_targets[static_cast<size_t>(i) * N + j] = reactants.bond(i, j);
        bond_weights[static_cast<size_t>(i) * N + j] = 1.0;
      }
    Tensor edge_ce = t_cross_entropy_rows(tape, tr.bond_logits, std::move(bond_targets), std::move(bond_weights));
    return t_add(tape, node_ce, t_affine(tape, edge_ce, 5.0, 0.0));
  }

 private:
  struct GlobalBlock {
    Parameter *q_w, *k_w, *v_w, *o_w, *o_b, *ln_g, *ln_b, *f1_w, *f1_b, *f2_w, *f2_b, *ln2_g, *ln2_b;
  };

  struct Layer {
    Parameter *qkv_w, *qkv_b, *bias_w, *bias_b, *out_w, *out_b, *ln1_g, *ln1_b;
    Parameter *inj_w, *inj_b, *injz_w = nullptr;
    Parameter *ffn_w1, *ffn_b1, *ffn_w2, *ffn_b2, *ln2_g, *ln2_b;
    Parameter *film_u_w, *film_u_b, *film_g_w, *film_g_b, *film_b_w, *film_b_b, *lne_g, *lne_b;
    GlobalBlock glob, tok;
  };

  static Parameter& xavier(ParamStore& store, Rng& rng, const std::string& name, int r, int c) {
    Parameter& p = store.add(name, r, c);
    init_xavier_uniform(p, rng);
    return p;
  }
  static Parameter& zeros(ParamStore& store, const std::string& name, int r, int c) {
    return store.add(name, r, c);
  }
  static Parameter& ones(ParamStore& store, const std::string& name, int r, int c) {
    Parameter& p = store.add(name, r, c);
    init_constant(p, 1.0);
    return p;
  }

  void init_global(ParamStore& store, Rng& rng, const std::string& pre, GlobalBlock& g) {
    g.q_w = &xavier(store, rng, pre + "q.w", cfg_.d_y, cfg_.d_x);
    g.k_w = &xavier(store, rng, pre + "k.w", cfg_.d_x, cfg_.d_x);
    g.v_w = &xavier(store, rng, pre + "v.w", cfg_.d_x, cfg_.d_y);
    g.o_w = &xavier(store, rng, pre + "o.w", cfg_.d_y, cfg_.d_y);
    g.o_b = &zeros(store, pre + "o.b", 1, cfg_.d_y);
    g.ln_g = &ones(store, pre + "ln.g", 1, cfg_.d_y);
    g.ln_b = &zeros(store, pre + "ln.b", 1, cfg_.d_y);
    g.f1_w = &xavier(store, rng, pre + "f1.w", cfg_.d_y, 2 * cfg_.d_y);
    g.f1_b = &zeros(store, pre + "f1.b", 1, 2 * cfg_.d_y);
    g.f2_w = &xavier(store, rng, pre + "f2.w", 2 * cfg_.d_y, cfg_.d_y);
    g.f2_b = &zeros(store, pre + "f2.b", 1, cfg_.d_y);
    g.ln2_g = &ones(store, pre + "ln2.g", 1, cfg_.d_y);
    g.ln2_b = &zeros(store, pre + "ln2.b", 1, cfg_.d_y);
  }

  // One global-token update: single-head attention over node states, then a
  // small FFN, each with residual + layer norm.
  Tensor global_update(ParamCtx& ctx, const GlobalBlock& g, Tensor tok, const Tensor& X,
                       double inv_sqrt) const {
    Tape* tp = ctx.tape();
    Tensor q = t_matmul(tp, tok, ctx.use(*g.q_w));
    Tensor keys = t_matmul(tp, X, ctx.use(*g.k_w));
    Tensor vals = t_matmul(tp, X, ctx.use(*g.v_w));
    Tensor scores = t_affine(tp, t_matmul(tp, q, t_transpose(tp, keys)), inv_sqrt, 0.0);
    Tensor mixed = t_matmul(tp, t_softmax_rows(tp, scores), vals);
    Tensor out = t_add_bias(tp, t_matmul(tp, mixed, ctx.use(*g.o_w)), ctx.use(*g.o_b));
    tok = t_layer_norm(tp, t_add(tp, tok, out), ctx.use(*g.ln_g), ctx.use(*g.ln_b));
    Tensor f = t_relu(tp, t_add_bias(tp, t_matmul(tp, tok, ctx.use(*g.f1_w)), ctx.use(*g.f1_b)));
    f = t_add_bias(tp, t_matmul(tp, f, ctx.use(*g.f2_w)), ctx.use(*g.f2_b));
    return t_layer_norm(tp, t_add(tp, tok, f), ctx.use(*g.ln2_g), ctx.use(*g.ln2_b));
  }

  static void check_finite(const Tensor& t, int layer, const char* what) {
    for (size_t i = 0; i < t.size(); ++i)
      if (!std::isfinite((*t.data)[i]))
        throw std::runtime_error("denoiser layer " + std::to_string(layer) + ": non-finite " + what +
                                 " activations");
  }

  DenoiserConfig cfg_;
  int K_a_;
  Parameter *in_node_w_, *in_node_b_, *in_edge_w_, *in_edge_b_, *in_glob_w_, *in_glob_b_;
  Parameter *in_tok_w_ = nullptr, *in_tok_b_ = nullptr;
  std::vector<Layer> layers_;
  Parameter *head_atom_w_, *head_atom_b_, *head_bond_w_, *head_bond_b_;
  Parameter *head_tok_w_ = nullptr, *head_tok_b_ = nullptr;
};

}  // namespace bridgekit
