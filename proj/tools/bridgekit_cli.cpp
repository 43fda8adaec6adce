#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "bridgekit/config.hpp"
#include "bridgekit/inference.hpp"
#include "bridgekit/train.hpp"

using namespace bridgekit;

namespace {

// Config resolution order: profile preset, then config file, then individual
// flags in the order they appeared on the command line.
struct ConfigArgs {
  std::string profile;
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> pending;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--profile", args.profile, "preset defaults: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--config", args.config_file, "flat key=value config file");
  for (const std::string& key : config_keys()) {
    cmd->add_option_function<std::string>(
        "--" + key,
        [key, &args](const std::string& v) { args.pending.emplace_back(key, v); },
        "override config key " + key);
  }
}

RunConfig resolve_config(const ConfigArgs& args) {
  RunConfig cfg;
  if (!args.profile.empty()) apply_config_kv(cfg, "profile", args.profile);
  if (!args.config_file.empty()) cfg = load_config_file(args.config_file, cfg);
  for (const auto& [k, v] : args.pending) apply_config_kv(cfg, k, v);
  return cfg;
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw std::invalid_argument("--dataset is required");
  Dataset ds = ingest_file(cfg.dataset, cfg.seed, cfg.max_real_atoms);
  for (const std::string& e : ds.stats.errors) std::cerr << "reject: " << e << "\n";
  if (ds.records.empty()) throw std::runtime_error("dataset yielded no usable records");
  return ds;
}

TeacherCache load_matching_cache(const RunConfig& cfg, const Dataset& ds) {
  if (cfg.cache_path.empty())
    throw std::invalid_argument("--cache is required for this configuration");
  TeacherCache cache = load_teacher_cache(cfg.cache_path);
  if (cache.corpus_hash != ds.corpus_hash)
    throw IoError("teacher cache is stale: rebuild it for this dataset");
  if (cache.id != cfg.guidance.teacher.id())
    throw IoError("teacher cache was built with different teacher settings (" + cache.id + ")");
  return cache;
}

// Loads the model and, when reranking, the similarity context on top of it.
struct EvalStack {
  Dataset ds;
  LoadedModel model;
  ProcessSchedule sch;
  std::optional<TeacherCache> cache;
  SimilarityContext sim;
  bool rerank = false;
};

EvalStack build_stack(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  EvalStack st{load_dataset(cfg), {}, cosine_schedule(cfg.schedule_steps), {}, {}, cfg.rerank};
  st.model = load_model(cfg, st.ds.vocab.size(), cfg.checkpoint);
  if (cfg.rerank) {
    if (!cfg.guidance.uses_alignment() || !st.model.heads)
      throw std::invalid_argument(
          "--rerank.enabled needs a checkpoint trained with an alignment scheme "
          "(align_graph, align_node, or grg)");
    st.cache = load_matching_cache(cfg, st.ds);
    fit_split_whitenings(cfg, st.ds, *st.cache, st.sim.graph_w, st.sim.atom_w);
    st.sim.cfg = cfg.guidance;
    st.sim.heads = st.model.heads.get();
  }
  return st;
}

CandidateSet sample_one(const RunConfig& cfg, const EvalStack& st, const MolecularGraph& product,
                        uint64_t seed) {
  SampleOptions so;
  so.n = cfg.sample_n;
  so.seed = seed;
  so.window = cfg.rerank_window;
  CandidateSet set =
      sample_candidates(*st.model.dn, product, st.sch, so, st.rerank ? &st.sim : nullptr);
  if (st.rerank)
    rerank_candidates(set, cfg.fusion_frequency, cfg.fusion_similarity);
  else
    order_by_frequency(set);
  return set;
}

void cmd_ingest(const ConfigArgs& cargs) {
  RunConfig cfg = resolve_config(cargs);
  Dataset ds = load_dataset(cfg);
  std::cout << "lines " << ds.stats.total_lines << "  accepted " << ds.stats.accepted
            << "  rejected " << ds.stats.rejected << "  skipped-too-large "
            << ds.stats.skipped_too_large << "  atom-categories " << ds.vocab.size() << "\n";
  if (!cfg.vocab_out.empty()) {
    ds.vocab.save(cfg.vocab_out);
    std::cout << "vocab written to " << cfg.vocab_out << "\n";
  }
}

void cmd_cache_teacher(const ConfigArgs& cargs) {
  RunConfig cfg = resolve_config(cargs);
  if (cfg.cache_path.empty()) throw std::invalid_argument("--cache output path is required");
  Dataset ds = load_dataset(cfg);
  TeacherCache cache = build_teacher_cache(ds, cfg.guidance.teacher);
  save_teacher_cache(cache, cfg.cache_path);
  std::cout << "cached " << cache.keys.size() << " records, teacher '" << cache.id << "', dim "
            << cache.dim << " -> " << cfg.cache_path << "\n";
}

void cmd_train(const ConfigArgs& cargs) {
  RunConfig cfg = resolve_config(cargs);
  cfg.validate();
  Dataset ds = load_dataset(cfg);
  std::optional<TeacherCache> cache;
  if (!cfg.cache_path.empty()) cache = load_matching_cache(cfg, ds);
  ParamStore store;
  TrainReport rep = train_model(cfg, ds, cache ? &*cache : nullptr, store);
  std::cout << rep.csv();
  if (rep.best_val_top1 >= 0.0)
    std::cout << "best val_top1 " << rep.best_val_top1 << " at epoch " << rep.best_epoch << "\n";
  if (cfg.checkpoint.empty())
    std::cerr << "warning: no --checkpoint path, parameters were not saved\n";
  else
    std::cout << "checkpoint " << cfg.checkpoint << "\n";
}

void cmd_sample(const ConfigArgs& cargs, int index, const std::string& product_smiles) {
  RunConfig cfg = resolve_config(cargs);
  cfg.validate();
  EvalStack st = build_stack(cfg);

  MolecularGraph product;
  if (!product_smiles.empty()) {
    st.ds.vocab.freeze();
    MolecularGraph g = parse_smiles(product_smiles, st.ds.vocab);
    if (g.real_atom_count() > cfg.max_real_atoms)
      throw std::invalid_argument("product exceeds max_real_atoms");
    product = pad_and_permute(g, g.n + 10, cfg.seed).graph;
  } else {
    if (index < 0 || index >= static_cast<int>(st.ds.records.size()))
      throw std::invalid_argument("--index out of range");
    product = st.ds.records[index].product;
  }

  CandidateSet set = sample_one(cfg, st, product, hash_combine(cfg.seed, 0x5A3Eu));
  if (cfg.candidates_out.empty()) {
    dump_candidates(std::cout, set, st.ds.vocab);
  } else {
    std::ofstream out(cfg.candidates_out);
    if (!out) throw IoError("cannot open " + cfg.candidates_out);
    dump_candidates(out, set, st.ds.vocab);
    std::cout << "wrote " << set.entries.size() << " candidates to " << cfg.candidates_out << "\n";
  }
}

void cmd_eval(const ConfigArgs& cargs, const std::string& split, const std::string& report_path) {
  RunConfig cfg = resolve_config(cargs);
  cfg.validate();
  EvalStack st = build_stack(cfg);

  auto [train_idx, val_idx] = split_indices(static_cast<int>(st.ds.records.size()),
                                            cfg.val_fraction, cfg.seed);
  std::vector<int> chosen;
  if (split == "val")
    chosen = val_idx;
  else if (split == "train")
    chosen = train_idx;
  else
    for (int i = 0; i < static_cast<int>(st.ds.records.size()); ++i) chosen.push_back(i);
  if (chosen.empty()) throw std::invalid_argument("selected split is empty");

  std::vector<CandidateSet> sets(chosen.size());
  std::vector<MolecularGraph> truths(chosen.size());
  parallel_for(chosen.size(), [&](int, size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) {
      int rec = chosen[i];
      sets[i] = sample_one(cfg, st, st.ds.records[rec].product,
                           hash_combine(hash_combine(cfg.seed, 0xEA1Du), static_cast<uint64_t>(rec)));
      truths[i] = st.ds.records[rec].reactants;
    }
  });

  double top1 = top_k_exact_match(sets, truths, 1);
  double top3 = top_k_exact_match(sets, truths, 3);
  double top5 = top_k_exact_match(sets, truths, 5);
  double top10 = top_k_exact_match(sets, truths, 10);
  double div = mean_diversity(sets);

  std::cout << std::fixed << std::setprecision(4);
  std::cout << "products " << chosen.size() << "  draws/product " << cfg.sample_n
            << (st.rerank ? "  (reranked)\n" : "  (frequency)\n");
  std::cout << "Top-1    Top-3    Top-5    Top-10   Diversity\n";
  std::cout << top1 << "   " << top3 << "   " << top5 << "   " << top10 << "   " << div << "\n";

  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw IoError("cannot open " + report_path);
    out << "top1,top3,top5,top10,diversity\n"
        << top1 << "," << top3 << "," << top5 << "," << top10 << "," << div << "\n";
    std::cout << "report " << report_path << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"discrete-bridge retrosynthesis: data, training, sampling, evaluation"};
  app.require_subcommand(1);

  ConfigArgs cargs;

  CLI::App* ingest = app.add_subcommand("ingest", "parse a reaction TSV and report statistics");
  add_config_flags(ingest, cargs);
  ingest->callback([&] { cmd_ingest(cargs); });

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic bond-cut corpus");
  SyntheticConfig sc;
  std::string synth_out;
  bool no_class = false;
  synth->add_option("--out", synth_out, "output TSV path")->required();
  synth->add_option("--count", sc.count, "number of reactions");
  synth->add_option("--seed", sc.seed, "generator seed");
  synth->add_option("--min-atoms", sc.min_atoms, "minimum heavy atoms per product");
  synth->add_option("--max-atoms", sc.max_atoms, "maximum heavy atoms per product");
  synth->add_option("--ring-prob", sc.ring_prob, "probability of one ring edge");
  synth->add_option("--double-prob", sc.double_bond_prob, "per-edge double-bond probability");
  synth->add_flag("--no-class", no_class, "omit the reaction class column");
  synth->callback([&] {
    sc.with_class = !no_class;
    std::ofstream out(synth_out);
    if (!out) throw IoError("cannot open " + synth_out);
    generate_synthetic(out, sc);
    std::cout << "wrote " << sc.count << " reactions to " << synth_out << "\n";
  });

  CLI::App* cache = app.add_subcommand("cache-teacher", "precompute teacher features for a dataset");
  add_config_flags(cache, cargs);
  cache->callback([&] { cmd_cache_teacher(cargs); });

  CLI::App* train = app.add_subcommand("train", "train the denoiser with the configured guidance");
  add_config_flags(train, cargs);
  train->callback([&] { cmd_train(cargs); });

  CLI::App* sample = app.add_subcommand("sample", "sample reactant candidates for one product");
  add_config_flags(sample, cargs);
  int sample_index = 0;
  std::string sample_product;
  sample->add_option("--index", sample_index, "dataset record index to take the product from");
  sample->add_option("--product", sample_product, "product SMILES (instead of --index)");
  sample->callback([&] { cmd_sample(cargs, sample_index, sample_product); });

  CLI::App* eval = app.add_subcommand("eval", "sample and score a whole split");
  add_config_flags(eval, cargs);
  std::string eval_split = "val";
  std::string eval_report;
  eval->add_option("--split", eval_split, "val, train, or all")
      ->check(CLI::IsMember({"val", "train", "all"}));
  eval->add_option("--report", eval_report, "write the metric row as CSV");
  eval->callback([&] { cmd_eval(cargs, eval_split, eval_report); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
