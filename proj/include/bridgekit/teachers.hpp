#pragma once

#include <algorithm>
#include <vector>

#include "bridgekit/graph.hpp"
#include "bridgekit/isomorphism.hpp"

namespace bridgekit {

// The two built-in reference encoders. Both are deterministic functions of
// the labeled graph: permutation of slots never changes the result (up to
// row order for atom-level output), and atoms whose labeled r-hop
// neighborhoods are isomorphic receive identical identifiers.

// Environment identifier of an atom at radius 0. Exposed so tests can
// enumerate environments independently of the folding loop below.
inline uint64_t morgan_initial_id(int atom_type, int formal_charge, int degree) {
  uint64_t h = splitmix64(0x4d6f7267ULL);
  h = hash_combine(h, static_cast<uint64_t>(atom_type));
  h = hash_combine(h, static_cast<uint64_t>(static_cast<int64_t>(formal_charge) + 128));
  h = hash_combine(h, static_cast<uint64_t>(degree));
  return h;
}

// Extends an environment identifier by one bond shell. `shell` holds
// (bond category, neighbor identifier) pairs; order does not matter.
inline uint64_t morgan_extend_id(uint64_t id, std::vector<std::pair<int, uint64_t>> shell) {
  std::sort(shell.begin(), shell.end());
  uint64_t h = splitmix64(id);
  for (const auto& [b, nid] : shell) h = hash_combine(hash_combine(h, static_cast<uint64_t>(b)), nid);
  return h;
}

// Counts of hashed circular environments of radius 0..radius over the real
// atoms, folded modulo n_bits. Disconnected components contribute
// independently, so the vector is additive over components.
inline std::vector<double> morgan_counts(const MolecularGraph& g, int radius, int n_bits) {
  if (n_bits <= 0) throw std::invalid_argument("morgan_counts: n_bits must be positive");
  std::vector<double> counts(n_bits, 0.0);
  std::vector<uint64_t> id(g.n, 0);
  for (int v = 0; v < g.n; ++v)
    if (g.node_mask[v]) {
      id[v] = morgan_initial_id(g.atom_types[v], g.formal_charges[v], g.degree(v));
      counts[id[v] % n_bits] += 1.0;
    }
  for (int r = 0; r < radius; ++r) {
    std::vector<uint64_t> next(g.n, 0);
    for (int v = 0; v < g.n; ++v) {
      if (!g.node_mask[v]) continue;
      std::vector<std::pair<int, uint64_t>> shell;
      for (int u = 0; u < g.n; ++u) {
        if (u == v || !g.node_mask[u]) continue;
        int b = g.bond(v, u);
        if (b != kBondNone) shell.push_back({b, id[u]});
      }
      next[v] = morgan_extend_id(id[v], std::move(shell));
      counts[next[v] % n_bits] += 1.0;
    }
    id = std::move(next);
  }
  return counts;
}

// Per-atom circular-environment histograms: row v counts atom v's own
// environment identifiers of radius 0..radius folded modulo n_bits, so the
// column sums over real atoms reproduce morgan_counts exactly.
inline std::vector<std::vector<double>> morgan_atom_vectors(const MolecularGraph& g, int radius,
                                                            int n_bits) {
  if (n_bits <= 0) throw std::invalid_argument("morgan_atom_vectors: n_bits must be positive");
  std::vector<std::vector<double>> rows(g.n, std::vector<double>(n_bits, 0.0));
  std::vector<uint64_t> id(g.n, 0);
  for (int v = 0; v < g.n; ++v)
    if (g.node_mask[v]) {
      id[v] = morgan_initial_id(g.atom_types[v], g.formal_charges[v], g.degree(v));
      rows[v][id[v] % n_bits] += 1.0;
    }
  for (int r = 0; r < radius; ++r) {
    std::vector<uint64_t> next(g.n, 0);
    for (int v = 0; v < g.n; ++v) {
      if (!g.node_mask[v]) continue;
      std::vector<std::pair<int, uint64_t>> shell;
      for (int u = 0; u < g.n; ++u) {
        if (u == v || !g.node_mask[u]) continue;
        int b = g.bond(v, u);
        if (b != kBondNone) shell.push_back({b, id[u]});
      }
      next[v] = morgan_extend_id(id[v], std::move(shell));
      rows[v][next[v] % n_bits] += 1.0;
    }
    id = std::move(next);
  }
  return rows;
}

// Per-atom signed hashed embeddings of WL color histories. Row v is the
// embedding of slot v (zero rows on dummy slots). Each refinement level
// scatters the atom's color into one of `dim` buckets with sign taken from
// the color's top bit.
inline std::vector<std::vector<double>> wl_atom_vectors(const MolecularGraph& g, int iterations, int dim) {
  if (dim < 8) throw std::invalid_argument("wl_atom_vectors: dim must be at least 8");
  std::vector<std::vector<double>> rows(g.n, std::vector<double>(dim, 0.0));
  auto colors = detail::wl_initial_colors(g);
  for (int k = 0; k <= iterations; ++k) {
    for (int v = 0; v < g.n; ++v) {
      if (!g.node_mask[v]) continue;
      uint64_t c = splitmix64(colors[v] + static_cast<uint64_t>(k) * 0x9e37ULL);
      double sign = (c >> 63) ? -1.0 : 1.0;
      rows[v][c % dim] += sign;
    }
    if (k < iterations) colors = detail::wl_refine_once(g, colors);
  }
  return rows;
}

}  // namespace bridgekit
