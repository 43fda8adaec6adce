#pragma once

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bridgekit/denoiser.hpp"
#include "bridgekit/guidance.hpp"
#include "bridgekit/isomorphism.hpp"
#include "bridgekit/process.hpp"
#include "bridgekit/smiles.hpp"

namespace bridgekit {

struct SampleOptions {
  int n = 100;
  uint64_t seed = 0;
  int window = 10;  // trailing reverse steps entering the similarity score
};

// Everything needed to score candidates against the teacher at inference
// time: the trained projection heads plus the whitening transforms fitted on
// the training split.
struct SimilarityContext {
  GuidanceConfig cfg;
  const GuidanceHeads* heads = nullptr;
  Whitening graph_w;
  Whitening atom_w;
};

struct Candidate {
  MolecularGraph graph;
  int count = 0;
  int first_index = 0;  // draw that first produced this graph
  double f = 0.0;
  double s = 0.0;
  double score = 0.0;
  bool empty = false;
};

struct CandidateSet {
  MolecularGraph product;
  int n = 0;
  std::vector<Candidate> entries;
};

// Decoded graphs may place bonds next to dummy slots; strip those, then
// rebuild the mask and component labels from what is left.
inline MolecularGraph sanitize_candidate(MolecularGraph g) {
  g.set_mask_from_atoms();
  for (int i = 0; i < g.n; ++i)
    for (int j = i + 1; j < g.n; ++j)
      if (g.bond(i, j) != kBondNone && (!g.node_mask[i] || !g.node_mask[j])) g.set_bond(i, j, kBondNone);
  g.recompute_components();
  return g;
}

namespace detail {

inline double cosine_value(const double* a, const double* b, int d) {
  double dot = 0, na = 0, nb = 0;
  for (int j = 0; j < d; ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-8);
}

// Features retained from one reverse step at the alignment layer.
struct StepFeatures {
  Tensor X, E, y;
};

struct Trajectory {
  MolecularGraph graph;
  std::vector<StepFeatures> tail;
};

// Runs one full reverse trajectory from the pinned product endpoint down to
// a clean-graph sample. The token chain (when configured) starts from its
// stationary prior and follows the learned per-step posterior, so no label
// information is consumed anywhere on this path.
inline Trajectory sample_trajectory(const Denoiser& dn, const MolecularGraph& product,
                                    const ProcessSchedule& sch, Rng& rng, int window,
                                    const CategoricalKernel* token_kernel) {
  ParamCtx ctx(nullptr);
  const DenoiserConfig& dc = dn.config();
  int N = product.n;
  int K = dc.token_dim;

  std::vector<double> tok;
  int tok_class = 0;
  if (K > 0) {
    tok.assign(K, 0.0);
    if (dc.token_discrete) {
      tok_class = rng.uniform_int(K) + 1;
      tok[tok_class - 1] = 1.0;
    } else {
      for (double& v : tok) v = rng.normal();
    }
  }

  Trajectory out;
  MolecularGraph g = product;
  for (int t = sch.T; t >= 1; --t) {
    EmbeddedInputs in = dn.embed(g, product, static_cast<double>(t) / sch.T, K > 0 ? &tok : nullptr);
    DenoiserTrace tr = dn.forward(ctx, in);

    if (window > 0 && t <= window) {
      int l = dc.align_layer - 1;
      out.tail.push_back({tr.X[l], tr.E[l], tr.y[l]});
    }

    GraphProbs probs;
    probs.N = N;
    probs.K_a = dn.atom_categories();
    probs.K_b = kNumBondTypes;
    probs.atom.assign(tr.atom_probs.ptr(), tr.atom_probs.ptr() + tr.atom_probs.size());
    probs.bond.assign(tr.bond_probs.ptr(), tr.bond_probs.ptr() + tr.bond_probs.size());
    g = reverse_step(probs, g, product, t, sch, rng);

    if (K > 0 && dc.token_discrete) {
      // Sample a clean-class guess from the head, then one step of the
      // categorical posterior q(z_{t-1} | z_t, zhat0).
      std::vector<double> p(K);
      double mx = tr.token_out.at(0, 0);
      for (int k = 1; k < K; ++k) mx = std::max(mx, tr.token_out.at(0, k));
      double sum = 0;
      for (int k = 0; k < K; ++k) {
        p[k] = std::exp(tr.token_out.at(0, k) - mx);
        sum += p[k];
      }
      for (double& v : p) v /= sum;
      int zhat = detail::sample_row(p.data(), K, rng) + 1;
      const std::vector<double>& q_t = token_kernel->q(t);
      const std::vector<double>& qb_prev = token_kernel->q_bar(t - 1);
      std::vector<double> w(K);
      for (int k = 0; k < K; ++k)
        w[k] = q_t[static_cast<size_t>(k) * K + (tok_class - 1)] *
               qb_prev[static_cast<size_t>(zhat - 1) * K + k];
      tok_class = detail::sample_row(w.data(), K, rng) + 1;
      tok.assign(K, 0.0);
      tok[tok_class - 1] = 1.0;
    } else if (K > 0) {
      // Gaussian posterior step toward the head's clean-vector estimate.
      double ab_t = sch.alpha_bars[t];
      double ab_prev = sch.alpha_bars[t - 1];
      double beta = sch.betas[t];
      double alpha = 1.0 - beta;
      double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
      double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t);
      double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_t));
      for (int k = 0; k < K; ++k) {
        double noise = sigma > 0.0 ? sigma * rng.normal() : 0.0;
        tok[k] = c0 * tr.token_out.at(0, k) + ct * tok[k] + noise;
      }
    }
  }
  out.graph = sanitize_candidate(g);
  return out;
}

// Teacher-side view of one decoded candidate, computed once per distinct
// graph and reused across duplicate draws.
struct CandidateTargets {
  std::vector<double> graph_vec;
  Tensor atom_vecs;
};

inline CandidateTargets candidate_targets(const SimilarityContext& sim, const MolecularGraph& cand) {
  CandidateTargets t;
  if (cand.real_atom_count() == 0) return t;
  switch (sim.cfg.scheme) {
    case GuidanceScheme::kAlignGraph: {
      t.graph_vec = sim.graph_w.apply(teacher_graph_vec(sim.cfg.teacher, cand));
      l2_normalize(t.graph_vec);
      break;
    }
    case GuidanceScheme::kAlignNode:
      t.atom_vecs = whitened_atom_targets(sim.cfg.teacher, cand, sim.atom_w);
      break;
    case GuidanceScheme::kGrg: {
      Tensor base = whitened_atom_targets(sim.cfg.teacher, cand, sim.atom_w);
      t.atom_vecs = instance_normalize(base, cand.component_ids, cand.node_mask);
      break;
    }
    default:
      throw std::invalid_argument("similarity: scheme has no alignment head");
  }
  return t;
}

// Mean step score over the retained tail: s = mean_t (cos_t + 1) / 2,
// clamped to [0, 1]. Candidates that decoded to nothing score 0.
inline double occurrence_similarity(const SimilarityContext& sim, const std::vector<StepFeatures>& tail,
                                    const MolecularGraph& cand, const CandidateTargets& tgt) {
  if (tail.empty() || cand.real_atom_count() == 0) return 0.0;
  ParamCtx ctx(nullptr);
  std::vector<int> valid = cand.real_atoms();
  double acc = 0.0;
  for (const StepFeatures& sf : tail) {
    double st = 0.0;
    if (sim.cfg.scheme == GuidanceScheme::kAlignGraph) {
      Tensor proj = sim.heads->project_graph_r(ctx, sf.y);
      st = cosine_value(proj.ptr(), tgt.graph_vec.data(), proj.cols);
    } else {
      Tensor proj = sim.cfg.scheme == GuidanceScheme::kAlignNode
                        ? sim.heads->project_node(ctx, sf.X)
                        : sim.heads->project_grg(ctx, sim.heads->edge_gin(ctx, sf.X, sf.E, cand));
      double m = 0.0;
      for (int i : valid)
        m += cosine_value(proj.ptr() + static_cast<size_t>(i) * proj.cols,
                          tgt.atom_vecs.ptr() + static_cast<size_t>(i) * tgt.atom_vecs.cols, proj.cols);
      st = m / static_cast<double>(valid.size());
    }
    acc += (st + 1.0) / 2.0;
  }
  return std::clamp(acc / static_cast<double>(tail.size()), 0.0, 1.0);
}

}  // namespace detail

// Draws n reverse trajectories for one product, deduplicates the decoded
// graphs, and fills per-candidate frequency plus (when `sim` is given) the
// trailing-window similarity averaged over duplicate occurrences. Entries
// come out in frequency order with first-sampled breaking ties.
inline CandidateSet sample_candidates(const Denoiser& dn, const MolecularGraph& product,
                                      const ProcessSchedule& sch, const SampleOptions& opt,
                                      const SimilarityContext* sim = nullptr) {
  if (opt.n < 1) throw std::invalid_argument("sample_candidates: n must be positive");
  if (opt.window < 1) throw std::invalid_argument("sample_candidates: window must be positive");
  if (sim) {
    if (!sim->heads || !sim->cfg.uses_alignment())
      throw std::invalid_argument("sample_candidates: similarity needs a trained alignment head");
    if (sim->cfg.scheme == GuidanceScheme::kAlignGraph && !sim->cfg.endpoint_reactant)
      throw std::invalid_argument("sample_candidates: similarity needs the reactant-side head");
  }

  const DenoiserConfig& dc = dn.config();
  CategoricalKernel token_kernel = dc.token_dim > 0 && dc.token_discrete
                                       ? CategoricalKernel(sch, dc.token_dim)
                                       : CategoricalKernel(sch, 1);

  CandidateSet set;
  set.product = product;
  set.n = opt.n;
  std::unordered_map<uint64_t, std::vector<int>> buckets;
  std::vector<detail::CandidateTargets> targets;
  std::vector<std::vector<double>> sims;

  for (int d = 0; d < opt.n; ++d) {
    Rng rng = derive_rng(opt.seed, 0x7261776Bu, static_cast<uint64_t>(d));
    detail::Trajectory traj =
        detail::sample_trajectory(dn, product, sch, rng, sim ? opt.window : 0,
                                  dc.token_dim > 0 && dc.token_discrete ? &token_kernel : nullptr);

    uint64_t sig = graph_signature(traj.graph);
    int idx = -1;
    for (int e : buckets[sig])
      if (graphs_equal(set.entries[e].graph, traj.graph)) {
        idx = e;
        break;
      }
    if (idx < 0) {
      idx = static_cast<int>(set.entries.size());
      Candidate c;
      c.graph = traj.graph;
      c.first_index = d;
      c.empty = traj.graph.real_atom_count() == 0;
      set.entries.push_back(std::move(c));
      buckets[sig].push_back(idx);
      sims.emplace_back();
      if (sim) targets.push_back(detail::candidate_targets(*sim, set.entries[idx].graph));
    }
    set.entries[idx].count += 1;
    if (sim)
      sims[idx].push_back(
          detail::occurrence_similarity(*sim, traj.tail, set.entries[idx].graph, targets[idx]));
  }

  for (size_t i = 0; i < set.entries.size(); ++i) {
    Candidate& c = set.entries[i];
    c.f = static_cast<double>(c.count) / opt.n;
    if (sim && !sims[i].empty()) {
      double m = 0;
      for (double v : sims[i]) m += v;
      c.s = m / static_cast<double>(sims[i].size());
    }
    c.score = c.f;
  }
  std::sort(set.entries.begin(), set.entries.end(), [](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.first_index < b.first_index;
  });
  return set;
}

// Frequency baseline: score is the frequency itself and the order is the one
// sample_candidates already produced.
inline void order_by_frequency(CandidateSet& set) {
  for (Candidate& c : set.entries) c.score = c.f;
  std::sort(set.entries.begin(), set.entries.end(), [](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.first_index < b.first_index;
  });
}

// Linear fusion score = w_f f + w_s s, sorted descending; ties fall back to
// frequency, then to earliest first sample.
inline void rerank_candidates(CandidateSet& set, double weight_f, double weight_s) {
  if (weight_f < 0.0 || weight_s < 0.0)
    throw std::invalid_argument("rerank: fusion weights must be nonnegative");
  for (Candidate& c : set.entries) c.score = weight_f * c.f + weight_s * c.s;
  std::sort(set.entries.begin(), set.entries.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.count != b.count) return a.count > b.count;
    return a.first_index < b.first_index;
  });
}

// Fraction of products whose ground-truth reactant set appears among the
// first k ranked candidates.
inline double top_k_exact_match(const std::vector<CandidateSet>& sets,
                                const std::vector<MolecularGraph>& truths, int k) {
  if (k < 1) throw std::invalid_argument("top_k_exact_match: k must be positive");
  if (sets.size() != truths.size())
    throw std::invalid_argument("top_k_exact_match: size mismatch");
  if (sets.empty()) return 0.0;
  int hits = 0;
  for (size_t i = 0; i < sets.size(); ++i) {
    int limit = std::min<int>(k, static_cast<int>(sets[i].entries.size()));
    for (int r = 0; r < limit; ++r)
      if (!sets[i].entries[r].empty && graphs_equal(sets[i].entries[r].graph, truths[i])) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

// Mean number of distinct decoded candidates per product.
inline double mean_diversity(const std::vector<CandidateSet>& sets) {
  if (sets.empty()) return 0.0;
  double sum = 0;
  for (const CandidateSet& s : sets) sum += static_cast<double>(s.entries.size());
  return sum / static_cast<double>(sets.size());
}

// Tab-separated dump, one block per product: a '#product' header line, a
// column header, then one row per ranked candidate.
inline void dump_candidates(std::ostream& os, const CandidateSet& set, const AtomVocab& vocab) {
  os << "#product\t" << write_smiles(set.product, vocab) << "\n";
  os << "rank\tscore\tf\ts\tcount\tsmiles\n";
  std::ostringstream num;
  num << std::fixed << std::setprecision(6);
  for (size_t i = 0; i < set.entries.size(); ++i) {
    const Candidate& c = set.entries[i];
    num.str("");
    num << c.score << "\t" << c.f << "\t" << c.s;
    os << (i + 1) << "\t" << num.str() << "\t" << c.count << "\t" << write_smiles(c.graph, vocab)
       << "\n";
  }
}

}  // namespace bridgekit
