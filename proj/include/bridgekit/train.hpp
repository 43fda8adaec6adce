#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bridgekit/config.hpp"
#include "bridgekit/dataset.hpp"
#include "bridgekit/denoiser.hpp"
#include "bridgekit/guidance.hpp"
#include "bridgekit/inference.hpp"
#include "bridgekit/teacher_cache.hpp"

namespace bridgekit {

namespace detail {

inline void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
}

}  // namespace detail

// Deterministic shuffled train/validation split of [0, n). Both halves come
// back sorted so downstream iteration order is independent of the shuffle.
inline std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double val_fraction,
                                                                   uint64_t seed) {
  if (n < 0 || val_fraction < 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("split_indices: bad arguments");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = derive_rng(seed, 0x5B117u);
  detail::shuffle_indices(idx, rng);
  int n_val = static_cast<int>(val_fraction * n);
  std::vector<int> val(idx.begin(), idx.begin() + n_val);
  std::vector<int> train(idx.begin() + n_val, idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

// Fits the whitening transform the configured scheme needs, on the training
// split only, so training and evaluation share bit-identical targets.
inline void fit_split_whitenings(const RunConfig& cfg, const Dataset& ds, const TeacherCache& cache,
                                 Whitening& graph_w, Whitening& atom_w) {
  auto [train_idx, val_idx] = split_indices(static_cast<int>(ds.records.size()), cfg.val_fraction,
                                            cfg.seed);
  std::vector<uint64_t> train_keys;
  train_keys.reserve(train_idx.size());
  for (int i : train_idx) train_keys.push_back(ds.records[i].key);
  if (cfg.guidance.scheme == GuidanceScheme::kAlignGraph)
    graph_w = fit_graph_whitening(cache, train_keys, cfg.guidance.teacher.out_dim);
  else
    atom_w = fit_atom_whitening(cache, train_keys, cfg.guidance.teacher.out_dim);
}

struct EpochStats {
  int epoch = 0;
  double base = 0.0;
  double align = 0.0;
  double token = 0.0;
  double val_top1 = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 1-based; the epoch whose parameters were checkpointed
  double best_val_top1 = -1.0;

  std::string csv() const {
    std::ostringstream os;
    os << "epoch,base,align,token,val_top1\n";
    for (const EpochStats& e : epochs)
      os << e.epoch << "," << e.base << "," << e.align << "," << e.token << "," << e.val_top1
         << "\n";
    return os.str();
  }
};

// Trains the denoiser (plus guidance heads when configured) on the ingested
// dataset. `store` must come in empty and leaves holding the final-epoch
// parameters; the best-validation parameters go to cfg.checkpoint when set.
// Whitening transforms fitted on the training split are returned through the
// out pointers for reuse at evaluation time.
inline TrainReport train_model(const RunConfig& cfg, const Dataset& ds, const TeacherCache* cache,
                               ParamStore& store, Whitening* graph_w_out = nullptr,
                               Whitening* atom_w_out = nullptr) {
  cfg.validate();
  if (ds.records.empty()) throw std::invalid_argument("train: empty dataset");
  if (store.count() != 0) throw std::invalid_argument("train: parameter store must start empty");

  const GuidanceConfig& gc = cfg.guidance;
  const DenoiserConfig& dc = cfg.denoiser;
  bool train_align = gc.uses_alignment() && gc.lambda_align > 0.0;
  bool train_token = gc.uses_token() && gc.lambda_z > 0.0;

  if (train_align) {
    if (!cache) throw std::invalid_argument("train: alignment guidance needs a teacher cache");
    if (cache->corpus_hash != ds.corpus_hash)
      throw IoError("train: teacher cache is stale for this corpus");
    if (cache->id != gc.teacher.id())
      throw IoError("train: teacher cache was built with different teacher settings");
  }
  if (train_token)
    for (const ReactionRecord& r : ds.records)
      if (!r.reaction_class)
        throw std::invalid_argument("train: token guidance needs a class label on every record");

  auto [train_idx, val_idx] = split_indices(static_cast<int>(ds.records.size()), cfg.val_fraction,
                                            cfg.seed);
  if (train_idx.empty()) throw std::invalid_argument("train: training split is empty");

  Whitening graph_w, atom_w;
  if (train_align) fit_split_whitenings(cfg, ds, *cache, graph_w, atom_w);
  if (graph_w_out) *graph_w_out = graph_w;
  if (atom_w_out) *atom_w_out = atom_w;

  // Per-record alignment targets, fixed for the whole run.
  std::vector<TeacherTargets> targets(ds.records.size());
  if (train_align) {
    bool node_level = gc.scheme != GuidanceScheme::kAlignGraph;
    for (int i : train_idx) {
      const ReactionRecord& rec = ds.records[i];
      targets[i] = targets_for_record(rec, cache->at(rec.key), graph_w,
                                      node_level ? &atom_w : nullptr);
      if (gc.scheme == GuidanceScheme::kGrg)
        targets[i].atom_vecs = instance_normalize(targets[i].atom_vecs,
                                                  rec.reactants.component_ids,
                                                  rec.reactants.node_mask);
      if (gc.scheme == GuidanceScheme::kAlignGraph && gc.endpoint_product) {
        targets[i].graph_vec_p = graph_w.apply(teacher_graph_vec(gc.teacher, rec.product));
        l2_normalize(targets[i].graph_vec_p);
      }
    }
  }

  Rng init_rng = derive_rng(cfg.seed, 0x1417u);
  Denoiser dn(dc, ds.vocab.size(), store, init_rng);
  std::unique_ptr<GuidanceHeads> heads;
  if (gc.uses_alignment()) heads = std::make_unique<GuidanceHeads>(gc, dc, store, init_rng);

  ProcessSchedule sch = cosine_schedule(cfg.schedule_steps);
  CategoricalKernel tok_kernel =
      dc.token_dim > 0 && dc.token_discrete ? CategoricalKernel(sch, dc.token_dim)
                                            : CategoricalKernel(sch, 1);
  AdamW opt(cfg.opt);
  TrainReport report;
  double best = -1.0;
  std::vector<int> order = train_idx;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = derive_rng(cfg.seed, 0xE60Cu, static_cast<uint64_t>(epoch));
    detail::shuffle_indices(order, shuffle_rng);

    double sum_base = 0, sum_align = 0, sum_token = 0;
    size_t cursor = 0;
    int batch_no = 0;
    while (cursor < order.size()) {
      size_t end = std::min(cursor + static_cast<size_t>(cfg.batch), order.size());
      int B = static_cast<int>(end - cursor);
      Tape tape;
      ParamCtx ctx(&tape);
      Tensor total;
      bool first = true;
      for (size_t k = cursor; k < end; ++k) {
        const ReactionRecord& rec = ds.records[order[k]];
        Rng rng = derive_rng(cfg.seed, 0xD37Au, static_cast<uint64_t>(epoch),
                             static_cast<uint64_t>(order[k]));
        int t = 1 + rng.uniform_int(sch.T);
        MolecularGraph G_t = bridge_forward_sample(rec.reactants, rec.product, t, sch,
                                                   ds.vocab.size(), kNumBondTypes, rng);

        std::vector<double> tok;
        std::vector<double> z0_vec;
        int z0 = 0;
        if (dc.token_dim > 0) {
          z0 = rec.reaction_class.value();
          if (dc.token_discrete) {
            int zt = corrupt_token_discrete(z0, t, tok_kernel, rng);
            tok.assign(dc.token_dim, 0.0);
            tok[zt - 1] = 1.0;
          } else {
            z0_vec.assign(dc.token_dim, 0.0);
            z0_vec[z0 - 1] = 1.0;
            tok = corrupt_token_continuous(z0_vec, t, sch, rng);
          }
        }

        EmbeddedInputs in = dn.embed(G_t, rec.product, static_cast<double>(t) / sch.T,
                                     dc.token_dim > 0 ? &tok : nullptr);
        DenoiserTrace tr = dn.forward(ctx, in);
        Tensor base = dn.base_loss(&tape, tr, rec.reactants);
        sum_base += base.item();

        Tensor align, token;
        Tensor *alignp = nullptr, *tokenp = nullptr;
        if (train_align) {
          switch (gc.scheme) {
            case GuidanceScheme::kAlignGraph:
              align = align_loss_graph(ctx, tr, *heads, targets[order[k]]);
              break;
            case GuidanceScheme::kAlignNode:
              align = align_loss_node(ctx, tr, *heads, targets[order[k]],
                                      rec.reactants.node_mask);
              break;
            default:
              align = grg_loss(ctx, tr, *heads, targets[order[k]].atom_vecs, rec.reactants);
              break;
          }
          sum_align += align.item();
          alignp = &align;
        }
        if (train_token) {
          token = dc.token_discrete ? reg_loss_discrete(&tape, tr.token_out, z0)
                                    : reg_loss_continuous(&tape, tr.token_out, z0_vec);
          sum_token += token.item();
          tokenp = &token;
        }
        Tensor rec_total = total_loss(&tape, base, alignp, tokenp, gc.lambda_align, gc.lambda_z);
        total = first ? rec_total : t_add(&tape, total, rec_total);
        first = false;
      }

      Tensor mean = t_affine(&tape, total, 1.0 / B, 0.0);
      if (!std::isfinite(mean.item()))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch_no) + " (value " +
                                 std::to_string(mean.item()) + ")");
      tape.backward(mean);
      GradMap grads;
      accumulate_grads(tape, ctx, grads);
      opt.step(store, grads);
      cursor = end;
      ++batch_no;
    }

    EpochStats es;
    es.epoch = epoch;
    es.base = sum_base / static_cast<double>(order.size());
    es.align = sum_align / static_cast<double>(order.size());
    es.token = sum_token / static_cast<double>(order.size());

    if (!val_idx.empty()) {
      std::vector<CandidateSet> sets;
      std::vector<MolecularGraph> truths;
      sets.reserve(val_idx.size());
      for (int i : val_idx) {
        SampleOptions so;
        so.n = cfg.val_draws;
        so.seed = hash_combine(hash_combine(hash_combine(cfg.seed, 0x7A11Du),
                                            static_cast<uint64_t>(i)),
                               static_cast<uint64_t>(epoch));
        sets.push_back(sample_candidates(dn, ds.records[i].product, sch, so));
        truths.push_back(ds.records[i].reactants);
      }
      es.val_top1 = top_k_exact_match(sets, truths, 1);
      if (es.val_top1 > best) {
        best = es.val_top1;
        report.best_epoch = epoch;
        report.best_val_top1 = best;
        if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, store);
      }
    } else {
      report.best_epoch = epoch;
      if (!cfg.checkpoint.empty() && epoch == cfg.epochs) save_checkpoint(cfg.checkpoint, store);
    }
    report.epochs.push_back(es);
  }

  if (!cfg.metrics_log.empty()) {
    std::ofstream log(cfg.metrics_log);
    if (!log) throw IoError("cannot open metrics log: " + cfg.metrics_log);
    log << report.csv();
  }
  return report;
}

// Rebuilds the model stack from a run configuration plus a checkpoint file.
// The parameter layout is reproduced by re-running the constructors with the
// same shapes, then the stored values overwrite the fresh initialization.
struct LoadedModel {
  ParamStore store;
  std::unique_ptr<Denoiser> dn;
  std::unique_ptr<GuidanceHeads> heads;
};

inline LoadedModel load_model(const RunConfig& cfg, int atom_categories,
                              const std::string& checkpoint_path) {
  LoadedModel m;
  Rng rng = derive_rng(cfg.seed, 0x1417u);
  m.dn = std::make_unique<Denoiser>(cfg.denoiser, atom_categories, m.store, rng);
  if (cfg.guidance.uses_alignment())
    m.heads = std::make_unique<GuidanceHeads>(cfg.guidance, cfg.denoiser, m.store, rng);
  load_checkpoint(checkpoint_path, m.store);
  return m;
}

}  // namespace bridgekit
