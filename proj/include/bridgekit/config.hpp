#pragma once

#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bridgekit/denoiser.hpp"
#include "bridgekit/guidance.hpp"
#include "bridgekit/nn.hpp"

namespace bridgekit {

// Everything a run needs, settable from a flat key=value file or CLI flags.
// Two presets ship: the paper-scale profile and a desk profile small enough
// to train on one core in minutes.
struct RunConfig {
  std::string dataset;
  std::string vocab_out;
  std::string cache_path;
  std::string checkpoint;
  std::string metrics_log;
  std::string candidates_out;

  int max_real_atoms = 64;  // pad size N = largest real side + 10, capped here
  int schedule_steps = 500;
  DenoiserConfig denoiser;
  GuidanceConfig guidance;
  AdamW::Config opt;

  int batch = 128;
  int epochs = 30;
  uint64_t seed = 42;
  double val_fraction = 0.1;
  int val_draws = 8;

  int sample_n = 100;
  int rerank_window = 10;
  double fusion_frequency = 0.85;
  double fusion_similarity = 0.15;
  bool rerank = false;

  void validate() const {
    if (max_real_atoms < 1) throw std::invalid_argument("config: max_real_atoms must be positive");
    if (schedule_steps < 1) throw std::invalid_argument("config: schedule_steps must be positive");
    if (batch < 1) throw std::invalid_argument("config: batch must be positive");
    if (epochs < 1) throw std::invalid_argument("config: epochs must be positive");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
      throw std::invalid_argument("config: val_fraction must be in [0, 1)");
    if (val_draws < 1) throw std::invalid_argument("config: val_draws must be positive");
    if (sample_n < 1) throw std::invalid_argument("config: sample_n must be positive");
    if (rerank_window < 1) throw std::invalid_argument("config: rerank_window must be positive");
    if (fusion_frequency < 0.0 || fusion_similarity < 0.0)
      throw std::invalid_argument("config: fusion weights must be nonnegative");
    if (opt.lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
    denoiser.validate();
    guidance.validate(denoiser);
  }
};

inline RunConfig paper_profile() { return RunConfig{}; }

inline RunConfig desk_profile() {
  RunConfig c;
  c.max_real_atoms = 14;
  c.schedule_steps = 100;
  c.denoiser.layers = 3;
  c.denoiser.d_x = 32;
  c.denoiser.d_e = 16;
  c.denoiser.d_y = 32;
  c.denoiser.heads = 4;
  c.denoiser.align_layer = 2;
  c.guidance.align_layer = 2;
  c.batch = 16;
  c.opt.lr = 1e-3;
  return c;
}

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: expected a boolean, got '" + v + "'");
}

inline int parse_int(const std::string& v) {
  size_t pos = 0;
  int x = std::stoi(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("config: expected an integer, got '" + v + "'");
  return x;
}

inline double parse_double(const std::string& v) {
  size_t pos = 0;
  double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("config: expected a number, got '" + v + "'");
  return x;
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Every assignable key, in documentation order. Kept next to the dispatch
// below so the CLI can mirror the full key space as flags.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "dataset",         "vocab_out",
      "cache",           "checkpoint",
      "metrics_log",     "candidates_out",
      "max_real_atoms",  "schedule_steps",
      "denoiser.layers", "denoiser.d_x",
      "denoiser.d_e",    "denoiser.d_y",
      "denoiser.heads",  "denoiser.token_dim",
      "denoiser.token_discrete", "guidance.scheme",
      "guidance.endpoint_reactant", "guidance.endpoint_product",
      "guidance.align_layer", "guidance.lambda_align",
      "guidance.lambda_z", "guidance.gin_rounds",
      "teacher.kind",    "teacher.radius",
      "teacher.n_bits",  "teacher.iterations",
      "teacher.dim",     "teacher.out_dim",
      "opt.lr",          "opt.weight_decay",
      "opt.beta1",       "opt.beta2",
      "opt.amsgrad",     "batch",
      "epochs",          "seed",
      "val_fraction",    "val_draws",
      "sample.n",        "rerank.window",
      "rerank.weight_f", "rerank.weight_s",
      "rerank.enabled",
  };
  return keys;
}

// Applies one key=value assignment. The key space is flat with dotted
// prefixes grouping related fields. Unknown keys are an error so typos
// cannot silently change a run.
inline void apply_config_kv(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  if (key == "profile") {
    if (value == "desk")
      c = desk_profile();
    else if (value == "paper")
      c = paper_profile();
    else
      throw std::invalid_argument("config: unknown profile '" + value + "'");
  } else if (key == "dataset") {
    c.dataset = value;
  } else if (key == "vocab_out") {
    c.vocab_out = value;
  } else if (key == "cache") {
    c.cache_path = value;
  } else if (key == "checkpoint") {
    c.checkpoint = value;
  } else if (key == "metrics_log") {
    c.metrics_log = value;
  } else if (key == "candidates_out") {
    c.candidates_out = value;
  } else if (key == "max_real_atoms") {
    c.max_real_atoms = parse_int(value);
  } else if (key == "schedule_steps") {
    c.schedule_steps = parse_int(value);
  } else if (key == "denoiser.layers") {
    c.denoiser.layers = parse_int(value);
  } else if (key == "denoiser.d_x") {
    c.denoiser.d_x = parse_int(value);
  } else if (key == "denoiser.d_e") {
    c.denoiser.d_e = parse_int(value);
  } else if (key == "denoiser.d_y") {
    c.denoiser.d_y = parse_int(value);
  } else if (key == "denoiser.heads") {
    c.denoiser.heads = parse_int(value);
  } else if (key == "denoiser.token_dim") {
    c.denoiser.token_dim = parse_int(value);
  } else if (key == "denoiser.token_discrete") {
    c.denoiser.token_discrete = parse_bool(value);
  } else if (key == "guidance.scheme") {
    c.guidance.scheme = scheme_from_name(value);
  } else if (key == "guidance.endpoint_reactant") {
    c.guidance.endpoint_reactant = parse_bool(value);
  } else if (key == "guidance.endpoint_product") {
    c.guidance.endpoint_product = parse_bool(value);
  } else if (key == "guidance.align_layer") {
    c.guidance.align_layer = parse_int(value);
    c.denoiser.align_layer = c.guidance.align_layer;
  } else if (key == "guidance.lambda_align") {
    c.guidance.lambda_align = parse_double(value);
  } else if (key == "guidance.lambda_z") {
    c.guidance.lambda_z = parse_double(value);
  } else if (key == "guidance.gin_rounds") {
    c.guidance.gin_rounds = parse_int(value);
  } else if (key == "teacher.kind") {
    if (value == "morgan")
      c.guidance.teacher.kind = TeacherKind::kMorgan;
    else if (value == "wl")
      c.guidance.teacher.kind = TeacherKind::kWl;
    else
      throw std::invalid_argument("config: unknown teacher kind '" + value + "'");
  } else if (key == "teacher.radius") {
    c.guidance.teacher.radius = parse_int(value);
  } else if (key == "teacher.n_bits") {
    c.guidance.teacher.n_bits = parse_int(value);
  } else if (key == "teacher.iterations") {
    c.guidance.teacher.iterations = parse_int(value);
  } else if (key == "teacher.dim") {
    c.guidance.teacher.dim = parse_int(value);
  } else if (key == "teacher.out_dim") {
    c.guidance.teacher.out_dim = parse_int(value);
  } else if (key == "opt.lr") {
    c.opt.lr = parse_double(value);
  } else if (key == "opt.weight_decay") {
    c.opt.weight_decay = parse_double(value);
  } else if (key == "opt.beta1") {
    c.opt.beta1 = parse_double(value);
  } else if (key == "opt.beta2") {
    c.opt.beta2 = parse_double(value);
  } else if (key == "opt.amsgrad") {
    c.opt.amsgrad = parse_bool(value);
  } else if (key == "batch") {
    c.batch = parse_int(value);
  } else if (key == "epochs") {
    c.epochs = parse_int(value);
  } else if (key == "seed") {
    c.seed = static_cast<uint64_t>(std::stoull(value));
  } else if (key == "val_fraction") {
    c.val_fraction = parse_double(value);
  } else if (key == "val_draws") {
    c.val_draws = parse_int(value);
  } else if (key == "sample.n") {
    c.sample_n = parse_int(value);
  } else if (key == "rerank.window") {
    c.rerank_window = parse_int(value);
  } else if (key == "rerank.weight_f") {
    c.fusion_frequency = parse_double(value);
  } else if (key == "rerank.weight_s") {
    c.fusion_similarity = parse_double(value);
  } else if (key == "rerank.enabled") {
    c.rerank = parse_bool(value);
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

// Reads `key = value` lines; '#' starts a comment, blank lines are skipped.
// A `profile = desk|paper` line resets all defaults, so it belongs first.
inline RunConfig load_config(std::istream& in, RunConfig base = RunConfig{}) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    try {
      apply_config_kv(base, key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = RunConfig{}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  return load_config(in, base);
}

}  // namespace bridgekit
