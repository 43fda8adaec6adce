#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "bridgekit/tensor.hpp"

namespace bridgekit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

struct Parameter {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<double> value;

  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

// Owns all model parameters in insertion order. Insertion order defines both
// checkpoint byte layout and optimizer iteration, which keeps runs and saved
// files reproducible.
class ParamStore {
 public:
  Parameter& add(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->rows = rows;
    p->cols = cols;
    p->value.assign(static_cast<size_t>(rows) * cols, 0.0);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return *params_[it->second];
  }

  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return *params_[it->second];
  }

  std::vector<std::unique_ptr<Parameter>>& all() { return params_; }
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  size_t count() const { return params_.size(); }

  size_t total_size() const {
    size_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, size_t> index_;
};

inline void init_zeros(Parameter& p) { std::fill(p.value.begin(), p.value.end(), 0.0); }

inline void init_xavier_uniform(Parameter& p, Rng& rng) {
  double limit = std::sqrt(6.0 / (p.rows + p.cols));
  for (double& v : p.value) v = (rng.uniform() * 2.0 - 1.0) * limit;
}

inline void init_constant(Parameter& p, double c) { std::fill(p.value.begin(), p.value.end(), c); }

// Binds parameters to a tape for one forward pass. Each parameter gets a
// single leaf node no matter how many times it is used, so gradients
// accumulate correctly across shared uses.
class ParamCtx {
 public:
  explicit ParamCtx(Tape* tape) : tape_(tape) {}

  Tape* tape() const { return tape_; }

  Tensor use(Parameter& p) {
    Tensor t;
    t.rows = p.rows;
    t.cols = p.cols;
    t.data = std::shared_ptr<std::vector<double>>(&p.value, [](std::vector<double>*) {});
    if (tape_) {
      auto it = nodes_.find(&p);
      if (it == nodes_.end()) {
        t.node = tape_->leaf(t);
        nodes_[&p] = t.node;
        watched_.push_back(&p);
      } else {
        t.node = it->second;
      }
    }
    return t;
  }

  int node_of(const Parameter& p) const {
    auto it = nodes_.find(const_cast<Parameter*>(&p));
    return it == nodes_.end() ? -1 : it->second;
  }

  const std::vector<Parameter*>& watched() const { return watched_; }

 private:
  Tape* tape_;
  std::unordered_map<Parameter*, int> nodes_;
  std::vector<Parameter*> watched_;
};

using GradMap = std::unordered_map<std::string, std::vector<double>>;

// Adds d(loss)/d(param) for every parameter touched through `ctx` into `out`,
// scaled by `scale` (used for batch averaging).
inline void accumulate_grads(const Tape& tape, const ParamCtx& ctx, GradMap& out, double scale = 1.0) {
  for (Parameter* p : ctx.watched()) {
    int node = ctx.node_of(*p);
    if (!tape.has_grad(node)) continue;
    const auto& g = tape.grad(node);
    auto& dst = out[p->name];
    if (dst.empty()) dst.assign(p->size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
  }
}

// Decoupled-weight-decay Adam with the max-of-second-moment variant. Bias
// correction uses the raw second moment's schedule applied to the running max.
class AdamW {
 public:
  struct Config {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-12;
    bool amsgrad = true;
  };

  AdamW() = default;
  explicit AdamW(const Config& cfg) : cfg_(cfg) {}

  const Config& config() const { return cfg_; }
  int64_t steps() const { return steps_; }

  void step(ParamStore& params, const GradMap& grads) {
    ++steps_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (auto& up : params.all()) {
      auto git = grads.find(up->name);
      if (git == grads.end()) continue;
      const std::vector<double>& g = git->second;
      if (g.size() != up->size()) throw std::invalid_argument("gradient shape mismatch: " + up->name);
      State& st = state_[up->name];
      if (st.m.empty()) {
        st.m.assign(up->size(), 0.0);
        st.v.assign(up->size(), 0.0);
        if (cfg_.amsgrad) st.vmax.assign(up->size(), 0.0);
      }
      for (size_t i = 0; i < g.size(); ++i) {
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double second = st.v[i];
        if (cfg_.amsgrad) {
          st.vmax[i] = std::max(st.vmax[i], st.v[i]);
          second = st.vmax[i];
        }
        double mhat = st.m[i] / bc1;
        double vhat = second / bc2;
        up->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        up->value[i] -= cfg_.lr * cfg_.weight_decay * up->value[i];
      }
    }
  }

 private:
  struct State {
    std::vector<double> m, v, vmax;
  };
  Config cfg_;
  int64_t steps_ = 0;
  std::unordered_map<std::string, State> state_;
};

// ---------------------------------------------------------------------------
// Checkpoint serialization. Layout: the magic "BKPT1" followed by one record
// per parameter in store order: u32 name length, name bytes, u32 rank,
// u32 dims[rank], then the payload as little-endian float32.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw IoError("checkpoint: truncated field");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("BKPT1", 5);
  for (const auto& p : params.all()) {
    detail::write_u32(os, static_cast<uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::write_u32(os, 2);
    detail::write_u32(os, static_cast<uint32_t>(p->rows));
    detail::write_u32(os, static_cast<uint32_t>(p->cols));
    for (double v : p->value) {
      float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

// Loads values into an existing store. Every record must name a known
// parameter with a matching shape, and every parameter must be covered.
inline void load_checkpoint(const std::string& path, ParamStore& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "BKPT1", 5) != 0) throw IoError("not a checkpoint file: " + path);
  std::unordered_map<std::string, bool> seen;
  while (true) {
    int peek = is.peek();
    if (peek == EOF) break;
    uint32_t name_len = detail::read_u32(is);
    if (name_len == 0 || name_len > 4096) throw IoError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("checkpoint: truncated name");
    uint32_t rank = detail::read_u32(is);
    if (rank == 0 || rank > 4) throw IoError("checkpoint: implausible rank for " + name);
    std::vector<uint32_t> dims(rank);
    size_t numel = 1;
    for (uint32_t& d : dims) {
      d = detail::read_u32(is);
      numel *= d;
    }
    if (!params.has(name)) throw IoError("checkpoint names unknown parameter: " + name);
    Parameter& p = params.get(name);
    bool shape_ok = numel == p.size();
    if (rank == 2) shape_ok = dims[0] == static_cast<uint32_t>(p.rows) && dims[1] == static_cast<uint32_t>(p.cols);
    if (!shape_ok) throw IoError("checkpoint shape mismatch for parameter: " + name);
    for (size_t i = 0; i < numel; ++i) {
      float f = 0;
      is.read(reinterpret_cast<char*>(&f), 4);
      if (!is) throw IoError("checkpoint: truncated payload for " + name);
      p.value[i] = static_cast<double>(f);
    }
    if (seen[name]) throw IoError("checkpoint repeats parameter: " + name);
    seen[name] = true;
  }
  for (const auto& p : params.all())
    if (!seen[p->name]) throw IoError("checkpoint missing parameter: " + p->name);
}

}  // namespace bridgekit
