#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "bridgekit/dataset.hpp"
#include "bridgekit/guidance.hpp"

namespace bridgekit {

// Precomputed raw (pre-whitening) teacher vectors for one dataset. Atom rows
// are stored in reactant parser order; the whitening transform is refit
// deterministically from the cached training rows at load time, so the cache
// file itself stays independent of the train/validation split.
struct TeacherCacheEntry {
  std::vector<double> graph_vec;           // raw_dim, sum over reactant atoms
  std::vector<std::vector<double>> atoms;  // n_atoms x raw_dim, parser order
};

struct TeacherCache {
  std::string id;  // encodes teacher kind, parameters and whitened width
  int dim = 0;     // raw vector width
  uint64_t corpus_hash = 0;
  std::vector<uint64_t> keys;  // record order as built
  std::unordered_map<uint64_t, TeacherCacheEntry> entries;

  const TeacherCacheEntry& at(uint64_t key) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw IoError("teacher cache has no entry for record key");
    return it->second;
  }
};

// Computes the reactant-side teacher vectors for every record. Atom rows are
// gathered back into parser order through reactant_order so the cache is
// independent of the slot permutation.
inline TeacherCache build_teacher_cache(const Dataset& ds, const TeacherConfig& cfg) {
  TeacherCache cache;
  cache.id = cfg.id();
  cache.dim = cfg.raw_dim();
  cache.corpus_hash = ds.corpus_hash;
  for (const ReactionRecord& rec : ds.records) {
    if (cache.entries.count(rec.key)) continue;  // duplicate lines share teacher rows
    auto slot_rows = teacher_atom_matrix(cfg, rec.reactants);
    TeacherCacheEntry e;
    e.graph_vec.assign(cache.dim, 0.0);
    e.atoms.resize(rec.reactants.real_atom_count());
    for (int s = 0; s < rec.reactants.n; ++s) {
      if (!rec.reactants.node_mask[s]) continue;
      int parser_idx = rec.reactant_order[s];
      e.atoms[parser_idx] = slot_rows[s];
      for (int j = 0; j < cache.dim; ++j) e.graph_vec[j] += slot_rows[s][j];
    }
    cache.keys.push_back(rec.key);
    cache.entries.emplace(rec.key, std::move(e));
  }
  return cache;
}

namespace detail {

inline void put_u32(std::ostream& o, uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& o, uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_f32_row(std::ostream& o, const std::vector<double>& row) {
  for (double x : row) {
    float f = static_cast<float>(x);
    o.write(reinterpret_cast<const char*>(&f), 4);
  }
}

inline uint32_t get_u32(std::istream& in, const char* what) {
  uint32_t v;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw IoError(std::string("teacher cache truncated reading ") + what);
  return v;
}
inline uint64_t get_u64(std::istream& in, const char* what) {
  uint64_t v;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw IoError(std::string("teacher cache truncated reading ") + what);
  return v;
}
inline std::vector<double> get_f32_row(std::istream& in, int dim, const char* what) {
  std::vector<float> buf(dim);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim) * 4);
  if (!in) throw IoError(std::string("teacher cache truncated reading ") + what);
  return std::vector<double>(buf.begin(), buf.end());
}

}  // namespace detail

inline void save_teacher_cache(const TeacherCache& cache, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write teacher cache " + path);
  f.write("BKTE1", 5);
  detail::put_u32(f, static_cast<uint32_t>(cache.id.size()));
  f.write(cache.id.data(), static_cast<std::streamsize>(cache.id.size()));
  detail::put_u32(f, static_cast<uint32_t>(cache.dim));
  detail::put_u64(f, cache.corpus_hash);
  detail::put_u32(f, static_cast<uint32_t>(cache.keys.size()));
  for (uint64_t key : cache.keys) {
    const TeacherCacheEntry& e = cache.entries.at(key);
    detail::put_u64(f, key);
    detail::put_f32_row(f, e.graph_vec);
    detail::put_u32(f, static_cast<uint32_t>(e.atoms.size()));
    for (const auto& row : e.atoms) detail::put_f32_row(f, row);
  }
  if (!f) throw IoError("write failure on teacher cache " + path);
}

inline TeacherCache load_teacher_cache(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read teacher cache " + path);
  char magic[5];
  f.read(magic, 5);
  if (!f || std::memcmp(magic, "BKTE1", 5) != 0) throw IoError("not a teacher cache file: " + path);

  TeacherCache cache;
  uint32_t id_len = detail::get_u32(f, "id length");
  if (id_len > 4096) throw IoError("implausible teacher id length in cache");
  cache.id.resize(id_len);
  f.read(cache.id.data(), id_len);
  if (!f) throw IoError("teacher cache truncated reading id");
  cache.dim = static_cast<int>(detail::get_u32(f, "dim"));
  if (cache.dim <= 0 || cache.dim > (1 << 20)) throw IoError("implausible teacher dim in cache");
  cache.corpus_hash = detail::get_u64(f, "corpus hash");
  uint32_t count = detail::get_u32(f, "record count");

  for (uint32_t r = 0; r < count; ++r) {
    uint64_t key = detail::get_u64(f, "record key");
    if (cache.entries.count(key)) throw IoError("duplicate record key in teacher cache");
    TeacherCacheEntry e;
    e.graph_vec = detail::get_f32_row(f, cache.dim, "graph vector");
    uint32_t n_atoms = detail::get_u32(f, "atom count");
    if (n_atoms > (1 << 20)) throw IoError("implausible atom count in teacher cache");
    e.atoms.resize(n_atoms);
    for (uint32_t a = 0; a < n_atoms; ++a) e.atoms[a] = detail::get_f32_row(f, cache.dim, "atom row");
    cache.keys.push_back(key);
    cache.entries.emplace(key, std::move(e));
  }
  char extra;
  if (f.read(&extra, 1)) throw IoError("trailing bytes after teacher cache payload");
  return cache;
}

// Whitening transforms are refit from the cached raw vectors of the training
// records, in record order, so that every consumer of a given (cache, split)
// pair reproduces bit-identical transforms.
inline Whitening fit_graph_whitening(const TeacherCache& cache, const std::vector<uint64_t>& train_keys,
                                     int out_dim) {
  std::vector<double> rows;
  rows.reserve(train_keys.size() * cache.dim);
  for (uint64_t key : train_keys) {
    const auto& e = cache.at(key);
    rows.insert(rows.end(), e.graph_vec.begin(), e.graph_vec.end());
  }
  return fit_whitening(rows, static_cast<int>(train_keys.size()), cache.dim, out_dim);
}

inline Whitening fit_atom_whitening(const TeacherCache& cache, const std::vector<uint64_t>& train_keys,
                                    int out_dim) {
  std::vector<double> rows;
  int n_rows = 0;
  for (uint64_t key : train_keys) {
    for (const auto& row : cache.at(key).atoms) {
      rows.insert(rows.end(), row.begin(), row.end());
      ++n_rows;
    }
  }
  return fit_whitening(rows, n_rows, cache.dim, out_dim);
}

// Whitened, normalized alignment targets for one record, with atom rows
// reordered from parser order into slot order; drop-in for the trainer.
// Either whitening may be left unfitted when that target level is unused.
inline TeacherTargets targets_for_record(const ReactionRecord& rec, const TeacherCacheEntry& e,
                                         const Whitening& graph_w, const Whitening* atom_w) {
  TeacherTargets t;
  if (graph_w.out_dim > 0) {
    t.graph_vec_r = graph_w.apply(e.graph_vec);
    l2_normalize(t.graph_vec_r);
  }
  if (atom_w) {
    t.atom_vecs = Tensor(rec.reactants.n, atom_w->out_dim);
    for (int s = 0; s < rec.reactants.n; ++s) {
      if (!rec.reactants.node_mask[s]) continue;
      std::vector<double> row = atom_w->apply(e.atoms.at(rec.reactant_order[s]));
      l2_normalize(row);
      for (int j = 0; j < atom_w->out_dim; ++j) t.atom_vecs.at(s, j) = row[j];
    }
  }
  return t;
}

}  // namespace bridgekit
