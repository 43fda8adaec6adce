#pragma once

#include <queue>
#include <string>
#include <vector>

#include "bridgekit/common.hpp"

namespace bridgekit {

// Bond categories. Index 0 means "no bond" and is a real category for the
// generative process, not a mask.
enum BondType : int {
  kBondNone = 0,
  kBondSingle = 1,
  kBondDouble = 2,
  kBondTriple = 3,
  kBondAromatic = 4,
};
constexpr int kNumBondTypes = 5;

// Dense slot-indexed molecular graph. Slot 0..n-1 each hold an atom category
// (0 = dummy/absent) and a row in the symmetric bond matrix. Dummy slots are
// part of the state space: generation may turn them into real atoms and back.
struct MolecularGraph {
  int n = 0;
  std::vector<int> atom_types;      // n, 0 = dummy
  std::vector<int> formal_charges;  // n
  std::vector<uint8_t> node_mask;   // n, 1 = real atom
  std::vector<int> bond_types;      // n*n row-major, symmetric, zero diagonal
  std::vector<int> component_ids;   // n, -1 on dummy slots

  MolecularGraph() = default;
  explicit MolecularGraph(int slots) { resize(slots); }

  void resize(int slots) {
    n = slots;
    atom_types.assign(n, 0);
    formal_charges.assign(n, 0);
    node_mask.assign(n, 0);
    bond_types.assign(static_cast<size_t>(n) * n, 0);
    component_ids.assign(n, -1);
  }

  int bond(int i, int j) const { return bond_types[static_cast<size_t>(i) * n + j]; }
  void set_bond(int i, int j, int t) {
    bond_types[static_cast<size_t>(i) * n + j] = t;
    bond_types[static_cast<size_t>(j) * n + i] = t;
  }

  int real_atom_count() const {
    int c = 0;
    for (uint8_t m : node_mask) c += m;
    return c;
  }

  std::vector<int> real_atoms() const {
    std::vector<int> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i)
      if (node_mask[i]) out.push_back(i);
    return out;
  }

  int degree(int i) const {
    int d = 0;
    for (int j = 0; j < n; ++j)
      if (bond(i, j) != kBondNone) ++d;
    return d;
  }

  void set_mask_from_atoms() {
    for (int i = 0; i < n; ++i) node_mask[i] = atom_types[i] != 0 ? 1 : 0;
  }

  // Connected components over nonzero bonds among real atoms, labeled in
  // order of first appearance. Dummy slots get -1.
  void recompute_components() {
    component_ids.assign(n, -1);
    int next = 0;
    for (int s = 0; s < n; ++s) {
      if (!node_mask[s] || component_ids[s] >= 0) continue;
      component_ids[s] = next;
      std::queue<int> q;
      q.push(s);
      while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v = 0; v < n; ++v) {
          if (v == u || !node_mask[v] || component_ids[v] >= 0) continue;
          if (bond(u, v) != kBondNone) {
            component_ids[v] = next;
            q.push(v);
          }
        }
      }
      ++next;
    }
  }

  int component_count() const {
    int m = 0;
    for (int c : component_ids) m = std::max(m, c + 1);
    return m;
  }

  // Returns an empty string when all structural invariants hold, otherwise a
  // description of the first violation. Meant for parsed or decoded graphs;
  // in-process noisy states are not required to satisfy these.
  std::string validate() const {
    if (static_cast<int>(atom_types.size()) != n || static_cast<int>(formal_charges.size()) != n ||
        static_cast<int>(node_mask.size()) != n || static_cast<int>(component_ids.size()) != n ||
        bond_types.size() != static_cast<size_t>(n) * n)
      return "field sizes inconsistent with slot count";
    for (int i = 0; i < n; ++i) {
      if ((atom_types[i] != 0) != (node_mask[i] != 0)) return "node_mask disagrees with atom_types at slot " + std::to_string(i);
      if (!node_mask[i] && formal_charges[i] != 0) return "dummy slot carries a charge at slot " + std::to_string(i);
      if (bond(i, i) != kBondNone) return "nonzero diagonal bond at slot " + std::to_string(i);
      for (int j = 0; j < i; ++j) {
        int b = bond(i, j);
        if (b != bond(j, i)) return "asymmetric bond between " + std::to_string(i) + " and " + std::to_string(j);
        if (b < 0 || b >= kNumBondTypes) return "bond category out of range";
        if (b != kBondNone && (!node_mask[i] || !node_mask[j]))
          return "bond incident to a dummy slot between " + std::to_string(i) + " and " + std::to_string(j);
      }
    }
    MolecularGraph copy = *this;
    copy.recompute_components();
    if (copy.component_ids != component_ids) return "component_ids inconsistent with bond connectivity";
    return "";
  }
};

// Moves slot i of `g` to slot perm[i] of the result. `perm` must be a
// permutation of [0, g.n).
inline MolecularGraph apply_slot_permutation(const MolecularGraph& g, const std::vector<int>& perm) {
  MolecularGraph out(g.n);
  for (int i = 0; i < g.n; ++i) {
    int p = perm[i];
    out.atom_types[p] = g.atom_types[i];
    out.formal_charges[p] = g.formal_charges[i];
    out.node_mask[p] = g.node_mask[i];
    out.component_ids[p] = g.component_ids[i];
    for (int j = 0; j < g.n; ++j) out.bond_types[static_cast<size_t>(p) * g.n + perm[j]] = g.bond(i, j);
  }
  return out;
}

struct PaddedGraph {
  MolecularGraph graph;
  // order[slot] = index of the source atom placed at that slot, -1 for dummies.
  std::vector<int> order;
};

// Pads `g` (whose slots must all be real atoms) to `target_n` slots and
// applies a uniformly random slot permutation drawn from `seed`.
inline PaddedGraph pad_and_permute(const MolecularGraph& g, int target_n, uint64_t seed) {
  if (g.real_atom_count() != g.n)
    throw std::invalid_argument("pad_and_permute: input must be an unpadded graph of real atoms");
  if (target_n < g.n)
    throw std::invalid_argument("pad_and_permute: target slot count " + std::to_string(target_n) +
                                " below atom count " + std::to_string(g.n));
  Rng rng(seed);
  std::vector<int> perm(target_n);
  for (int i = 0; i < target_n; ++i) perm[i] = i;
  for (int i = target_n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

  PaddedGraph out;
  out.graph.resize(target_n);
  out.order.assign(target_n, -1);
  for (int i = 0; i < g.n; ++i) {
    int p = perm[i];
    out.order[p] = i;
    out.graph.atom_types[p] = g.atom_types[i];
    out.graph.formal_charges[p] = g.formal_charges[i];
    out.graph.node_mask[p] = 1;
    for (int j = 0; j < g.n; ++j)
      out.graph.bond_types[static_cast<size_t>(p) * target_n + perm[j]] = g.bond(i, j);
  }
  out.graph.recompute_components();
  return out;
}

}  // namespace bridgekit
