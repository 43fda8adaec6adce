#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bridgekit/denoiser.hpp"
#include "bridgekit/teachers.hpp"
#include "bridgekit/whitening.hpp"

namespace bridgekit {

enum class TeacherKind { kMorgan, kWl };

struct TeacherConfig {
  TeacherKind kind = TeacherKind::kMorgan;
  int radius = 2;      // morgan shells
  int n_bits = 128;    // morgan fold width
  int iterations = 3;  // wl refinement rounds
  int dim = 128;       // wl bucket width
  int out_dim = 64;    // whitened target width d_T

  int raw_dim() const { return kind == TeacherKind::kMorgan ? n_bits : dim; }

  std::string id() const {
    if (kind == TeacherKind::kMorgan)
      return "morgan r" + std::to_string(radius) + " b" + std::to_string(n_bits) + " d" +
             std::to_string(out_dim);
    return "wl i" + std::to_string(iterations) + " b" + std::to_string(dim) + " d" +
           std::to_string(out_dim);
  }
};

// Raw (pre-whitening) per-slot teacher rows; dummy slots are zero.
inline std::vector<std::vector<double>> teacher_atom_matrix(const TeacherConfig& cfg,
                                                            const MolecularGraph& g) {
  return cfg.kind == TeacherKind::kMorgan ? morgan_atom_vectors(g, cfg.radius, cfg.n_bits)
                                          : wl_atom_vectors(g, cfg.iterations, cfg.dim);
}

// Raw molecule-level teacher vector: the column sum of the atom rows. Both
// encoders are neighborhood-local, so this is additive over components.
inline std::vector<double> teacher_graph_vec(const TeacherConfig& cfg, const MolecularGraph& g) {
  auto rows = teacher_atom_matrix(cfg, g);
  std::vector<double> out(cfg.raw_dim(), 0.0);
  for (int v = 0; v < g.n; ++v)
    if (g.node_mask[v])
      for (int j = 0; j < cfg.raw_dim(); ++j) out[j] += rows[v][j];
  return out;
}

// Sum of per-component raw vectors (the set embedding before whitening).
inline std::vector<double> raw_set_vec(const TeacherConfig& cfg,
                                       const std::vector<MolecularGraph>& components) {
  if (components.empty()) throw std::invalid_argument("set embedding: empty component list");
  std::vector<double> sum(cfg.raw_dim(), 0.0);
  for (const auto& m : components) {
    auto v = teacher_graph_vec(cfg, m);
    for (int j = 0; j < cfg.raw_dim(); ++j) sum[j] += v[j];
  }
  return sum;
}

inline std::vector<double> set_embedding(const TeacherConfig& cfg,
                                         const std::vector<MolecularGraph>& components,
                                         const Whitening& w) {
  std::vector<double> v = w.apply(raw_set_vec(cfg, components));
  l2_normalize(v);
  return v;
}

// Whitened, L2-normalized atom targets in slot order; dummy rows exactly zero.
inline Tensor whitened_atom_targets(const TeacherConfig& cfg, const MolecularGraph& g,
                                    const Whitening& w) {
  auto rows = teacher_atom_matrix(cfg, g);
  Tensor out(g.n, w.out_dim);
  for (int v = 0; v < g.n; ++v) {
    if (!g.node_mask[v]) continue;
    std::vector<double> r = w.apply(rows[v].data());
    l2_normalize(r);
    for (int j = 0; j < w.out_dim; ++j) out.at(v, j) = r[j];
  }
  return out;
}

// Per-component feature standardization over real atoms:
// h' = (h - mean(component)) / (sigma(component) + 1e-5). Single-atom
// components collapse to zero rows; dummy rows stay zero.
inline Tensor instance_normalize(const Tensor& atom_vecs, const std::vector<int>& component_ids,
                                 const std::vector<uint8_t>& mask) {
  int N = atom_vecs.rows, d = atom_vecs.cols;
  if (static_cast<int>(component_ids.size()) != N || static_cast<int>(mask.size()) != N)
    throw std::invalid_argument("instance_normalize: shape mismatch");
  Tensor out(N, d);
  int n_comp = 0;
  for (int i = 0; i < N; ++i)
    if (mask[i]) n_comp = std::max(n_comp, component_ids[i] + 1);
  for (int c = 0; c < n_comp; ++c) {
    std::vector<int> members;
    for (int i = 0; i < N; ++i)
      if (mask[i] && component_ids[i] == c) members.push_back(i);
    if (members.empty()) continue;
    for (int j = 0; j < d; ++j) {
      double mu = 0;
      for (int i : members) mu += atom_vecs.at(i, j);
      mu /= members.size();
      double var = 0;
      for (int i : members) {
        double dlt = atom_vecs.at(i, j) - mu;
        var += dlt * dlt;
      }
      double sigma = std::sqrt(var / members.size());
      for (int i : members) out.at(i, j) = (atom_vecs.at(i, j) - mu) / (sigma + 1e-5);
    }
  }
  return out;
}

enum class GuidanceScheme { kNone, kAlignGraph, kAlignNode, kGrg, kRegDiscrete, kRegContinuous };

inline const char* scheme_name(GuidanceScheme s) {
  switch (s) {
    case GuidanceScheme::kNone: return "none";
    case GuidanceScheme::kAlignGraph: return "align_graph";
    case GuidanceScheme::kAlignNode: return "align_node";
    case GuidanceScheme::kGrg: return "grg";
    case GuidanceScheme::kRegDiscrete: return "reg_discrete";
    case GuidanceScheme::kRegContinuous: return "reg_continuous";
  }
  return "?";
}

inline GuidanceScheme scheme_from_name(const std::string& s) {
  for (GuidanceScheme g : {GuidanceScheme::kNone, GuidanceScheme::kAlignGraph, GuidanceScheme::kAlignNode,
                           GuidanceScheme::kGrg, GuidanceScheme::kRegDiscrete, GuidanceScheme::kRegContinuous})
    if (s == scheme_name(g)) return g;
  throw std::invalid_argument("unknown guidance scheme: " + s);
}

struct GuidanceConfig {
  GuidanceScheme scheme = GuidanceScheme::kNone;
  bool endpoint_reactant = true;  // S contains R
  bool endpoint_product = false;  // S contains P
  int align_layer = 4;
  double lambda_align = 0.5;
  double lambda_z = 1.0;
  int gin_rounds = 2;
  TeacherConfig teacher;

  bool uses_alignment() const {
    return scheme == GuidanceScheme::kAlignGraph || scheme == GuidanceScheme::kAlignNode ||
           scheme == GuidanceScheme::kGrg;
  }
  bool uses_token() const {
    return scheme == GuidanceScheme::kRegDiscrete || scheme == GuidanceScheme::kRegContinuous;
  }
  bool node_level() const {
    return scheme == GuidanceScheme::kAlignNode || scheme == GuidanceScheme::kGrg;
  }

  void validate(const DenoiserConfig& dn) const {
    if (lambda_align < 0 || lambda_z < 0) throw std::invalid_argument("guidance: negative loss weight");
    if (gin_rounds < 0) throw std::invalid_argument("guidance: gin_rounds must be nonnegative");
    if (uses_alignment() && (align_layer < 1 || align_layer > dn.layers))
      throw std::invalid_argument("guidance: align_layer out of range");
    if (uses_alignment() && !endpoint_reactant && !endpoint_product)
      throw std::invalid_argument("guidance: endpoint set must not be empty");
    if (uses_token() && dn.token_dim == 0)
      throw std::invalid_argument("guidance: REG schemes need the denoiser token pathway");
    if (scheme == GuidanceScheme::kRegDiscrete && !dn.token_discrete)
      throw std::invalid_argument("guidance: reg_discrete needs a discrete token head");
    if (scheme == GuidanceScheme::kRegContinuous && dn.token_discrete)
      throw std::invalid_argument("guidance: reg_continuous needs a regression token head");
  }
};

// Per-record alignment targets (already whitened and normalized).
struct TeacherTargets {
  std::vector<double> graph_vec_r;  // d_T, reactant set embedding
  std::vector<double> graph_vec_p;  // d_T, product embedding (endpoint P only)
  Tensor atom_vecs;                 // N x d_T in slot order, zero rows on dummies
};

// Learnable guidance parameters: projection heads for each active target and
// the EdgeGIN stack for GRG. Heads are Xavier-initialized (never zero: a
// zero projection makes the cosine direction degenerate).
class GuidanceHeads {
 public:
  GuidanceHeads(const GuidanceConfig& cfg, const DenoiserConfig& dn, ParamStore& store, Rng& rng)
      : cfg_(cfg) {
    cfg_.validate(dn);
    int d_T = cfg_.teacher.out_dim;
    if (cfg_.scheme == GuidanceScheme::kAlignGraph) {
      if (cfg_.endpoint_reactant) graph_r_ = make_mlp(store, rng, "gd.graph_r.", dn.d_y, 2 * d_T, d_T);
      if (cfg_.endpoint_product) graph_p_ = make_mlp(store, rng, "gd.graph_p.", dn.d_y, 2 * d_T, d_T);
    }
    if (cfg_.scheme == GuidanceScheme::kAlignNode)
      node_ = make_mlp(store, rng, "gd.node.", dn.d_x, 2 * d_T, d_T);
    if (cfg_.scheme == GuidanceScheme::kGrg) {
      enc_ = make_mlp(store, rng, "gd.gin.enc.", dn.d_e + kNumBondTypes, dn.d_x, dn.d_x);
      rounds_.resize(cfg_.gin_rounds);
      for (int k = 0; k < cfg_.gin_rounds; ++k) {
        std::string pre = "gd.gin.r" + std::to_string(k + 1) + ".";
        rounds_[k].eps = &store.add(pre + "eps", 1, 1);
        rounds_[k].mlp = make_mlp(store, rng, pre, dn.d_x, dn.d_x, dn.d_x);
      }
      grg_ = make_mlp(store, rng, "gd.grg.", dn.d_x, 2 * d_T, d_T);
    }
  }

  const GuidanceConfig& config() const { return cfg_; }

  Tensor project_graph_r(ParamCtx& ctx, const Tensor& y) const { return run_mlp(ctx, graph_r_, y); }
  Tensor project_graph_p(ParamCtx& ctx, const Tensor& y) const { return run_mlp(ctx, graph_p_, y); }
  Tensor project_node(ParamCtx& ctx, const Tensor& X) const { return run_mlp(ctx, node_, X); }
  Tensor project_grg(ParamCtx& ctx, const Tensor& Xbar) const { return run_mlp(ctx, grg_, Xbar); }

  // K rounds of GIN-style message passing restricted to bonds of the
  // reference graph: h_v <- MLP_k((1 + eps_k) h_v + sum_u ReLU(h_u + e_uv)),
  // with e = EdgeEnc(concat(E_uv, onehot(reference bond uv))). During
  // training the reference graph is the ground-truth reactant set; at
  // sampling time it is the decoded candidate itself.
  Tensor edge_gin(ParamCtx& ctx, const Tensor& X, const Tensor& E,
                  const MolecularGraph& reference) const {
    if (cfg_.scheme != GuidanceScheme::kGrg) throw std::logic_error("edge_gin: GRG scheme not active");
    Tape* tp = ctx.tape();
    int N = reference.n;
    if (X.rows != N || E.rows != N * N) throw std::invalid_argument("edge_gin: shape mismatch");

    Tensor bond_onehot(N * N, kNumBondTypes);
    std::vector<double> adj(static_cast<size_t>(N) * N, 0.0);
    std::vector<int> swap(static_cast<size_t>(N) * N);
    for (int v = 0; v < N; ++v)
      for (int u = 0; u < N; ++u) {
        size_t r = static_cast<size_t>(v) * N + u;
        swap[r] = u * N + v;
        bond_onehot.at(static_cast<int>(r), reference.bond(v, u)) = 1.0;
        if (u != v && reference.bond(v, u) != kBondNone) adj[r] = 1.0;
      }
    Tensor enc = run_mlp(ctx, enc_, t_concat_cols(tp, E, bond_onehot));

    Tensor h = X;
    for (const Round& round : rounds_) {
      // Row v*N+u holds ReLU(h_u + e_uv); summing segments gives the
      // neighbor aggregate for v.
      Tensor msg = t_relu(tp, t_add(tp, t_tile_nodes(tp, h), t_row_permute(tp, enc, swap)));
      Tensor agg = t_sum_segments(tp, t_row_scale(tp, msg, adj), N);
      Tensor self = t_add(tp, h, t_mul_scalar_t(tp, h, ctx.use(*round.eps)));
      h = run_mlp(ctx, round.mlp, t_add(tp, self, agg));
    }
    return h;
  }

 private:
  struct Mlp {
    Parameter *w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;
  };
  struct Round {
    Parameter* eps = nullptr;
    Mlp mlp;
  };

  static Mlp make_mlp(ParamStore& store, Rng& rng, const std::string& pre, int in, int hidden, int out) {
    Mlp m;
    m.w1 = &store.add(pre + "w1", in, hidden);
    init_xavier_uniform(*m.w1, rng);
    m.b1 = &store.add(pre + "b1", 1, hidden);
    m.w2 = &store.add(pre + "w2", hidden, out);
    init_xavier_uniform(*m.w2, rng);
    m.b2 = &store.add(pre + "b2", 1, out);
    return m;
  }

  Tensor run_mlp(ParamCtx& ctx, const Mlp& m, const Tensor& x) const {
    if (!m.w1) throw std::logic_error("guidance head not configured for this scheme");
    Tape* tp = ctx.tape();
    Tensor h = t_relu(tp, t_add_bias(tp, t_matmul(tp, x, ctx.use(*m.w1)), ctx.use(*m.b1)));
    return t_add_bias(tp, t_matmul(tp, h, ctx.use(*m.w2)), ctx.use(*m.b2));
  }

  GuidanceConfig cfg_;
  Mlp graph_r_, graph_p_, node_, enc_, grg_;
  std::vector<Round> rounds_;
};

// Sum over active endpoints of (1 - cos(projection(y at align layer), target)).
inline Tensor align_loss_graph(ParamCtx& ctx, const DenoiserTrace& trace, const GuidanceHeads& heads,
                               const TeacherTargets& targets) {
  const GuidanceConfig& cfg = heads.config();
  Tape* tp = ctx.tape();
  const Tensor& y = trace.y.at(cfg.align_layer - 1);
  Tensor total;
  bool first = true;
  auto add_endpoint = [&](const Tensor& proj, const std::vector<double>& target) {
    if (target.empty()) throw std::invalid_argument("align_loss_graph: missing teacher target");
    Tensor tgt = tensor_of(target, 1, static_cast<int>(target.size()));
    Tensor dist = t_affine(tp, cosine_similarity(tp, proj, tgt), -1.0, 1.0);
    total = first ? dist : t_add(tp, total, dist);
    first = false;
  };
  if (cfg.endpoint_reactant) add_endpoint(heads.project_graph_r(ctx, y), targets.graph_vec_r);
  if (cfg.endpoint_product) add_endpoint(heads.project_graph_p(ctx, y), targets.graph_vec_p);
  return total;
}

namespace detail {

inline Tensor masked_cosine_distance_mean(Tape* tp, const Tensor& proj, const Tensor& targets,
                                          const std::vector<uint8_t>& mask, const char* what) {
  std::vector<double> weights(mask.begin(), mask.end());
  double total = 0;
  for (double w : weights) total += w;
  if (!(total > 0)) throw std::invalid_argument(std::string(what) + ": empty atom mask");
  Tensor cos = t_row_cosine(tp, proj, targets);
  Tensor dist = t_affine(tp, cos, -1.0, 1.0);
  return t_reduce_rows(tp, dist, std::move(weights), true);
}

}  // namespace detail

// Masked mean over real reactant atoms of per-atom cosine distance between
// the projected node states at the align layer and the teacher rows.
inline Tensor align_loss_node(ParamCtx& ctx, const DenoiserTrace& trace, const GuidanceHeads& heads,
                              const TeacherTargets& targets, const std::vector<uint8_t>& mask) {
  const GuidanceConfig& cfg = heads.config();
  Tensor proj = heads.project_node(ctx, trace.X.at(cfg.align_layer - 1));
  return detail::masked_cosine_distance_mean(ctx.tape(), proj, targets.atom_vecs, mask,
                                             "align_loss_node");
}

// GRG: EdgeGIN over the reference bonds, project, then masked cosine distance
// against instance-normalized teacher rows.
inline Tensor grg_loss(ParamCtx& ctx, const DenoiserTrace& trace, const GuidanceHeads& heads,
                       const Tensor& normalized_targets, const MolecularGraph& reference) {
  const GuidanceConfig& cfg = heads.config();
  Tensor xbar = heads.edge_gin(ctx, trace.X.at(cfg.align_layer - 1), trace.E.at(cfg.align_layer - 1),
                               reference);
  Tensor proj = heads.project_grg(ctx, xbar);
  return detail::masked_cosine_distance_mean(ctx.tape(), proj, normalized_targets, reference.node_mask,
                                             "grg_loss");
}

inline Tensor reg_loss_discrete(Tape* tape, const Tensor& token_logits, int z0) {
  if (z0 < 1 || z0 > token_logits.cols) throw std::invalid_argument("reg_loss_discrete: class out of range");
  return t_cross_entropy_rows(tape, token_logits, {z0 - 1}, {1.0});
}

inline Tensor reg_loss_continuous(Tape* tape, const Tensor& token_pred, const std::vector<double>& z0) {
  if (static_cast<int>(z0.size()) != token_pred.cols)
    throw std::invalid_argument("reg_loss_continuous: dimension mismatch");
  return t_mse(tape, token_pred, tensor_of(z0, 1, static_cast<int>(z0.size())));
}

// base + lambda_align * align + lambda_z * token, with absent terms skipped.
inline Tensor total_loss(Tape* tape, const Tensor& base, const Tensor* align, const Tensor* token,
                         double lambda_align, double lambda_z) {
  if (lambda_align < 0 || lambda_z < 0) throw std::invalid_argument("total_loss: negative weight");
  Tensor out = base;
  if (align) out = t_add(tape, out, t_affine(tape, *align, lambda_align, 0.0));
  if (token) out = t_add(tape, out, t_affine(tape, *token, lambda_z, 0.0));
  return out;
}

}  // namespace bridgekit
