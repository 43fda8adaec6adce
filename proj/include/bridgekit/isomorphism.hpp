#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "bridgekit/graph.hpp"

namespace bridgekit {

namespace detail {

// One round of color refinement: new color = hash of own color and the
// sorted multiset of (bond category, neighbor color) over real neighbors.
inline std::vector<uint64_t> wl_refine_once(const MolecularGraph& g, const std::vector<uint64_t>& colors) {
  std::vector<uint64_t> next(g.n, 0);
  std::vector<std::pair<int, uint64_t>> nb;
  for (int v = 0; v < g.n; ++v) {
    if (!g.node_mask[v]) continue;
    nb.clear();
    for (int u = 0; u < g.n; ++u) {
      if (u == v || !g.node_mask[u]) continue;
      int b = g.bond(v, u);
      if (b != kBondNone) nb.push_back({b, colors[u]});
    }
    std::sort(nb.begin(), nb.end());
    uint64_t h = splitmix64(colors[v]);
    for (const auto& [b, c] : nb) h = hash_combine(hash_combine(h, static_cast<uint64_t>(b)), c);
    next[v] = h;
  }
  return next;
}

inline std::vector<uint64_t> wl_initial_colors(const MolecularGraph& g) {
  std::vector<uint64_t> colors(g.n, 0);
  for (int v = 0; v < g.n; ++v)
    if (g.node_mask[v])
      colors[v] = hash_combine(splitmix64(static_cast<uint64_t>(g.atom_types[v]) + 0x51ed2701),
                               static_cast<uint64_t>(static_cast<int64_t>(g.formal_charges[v]) + 128));
  return colors;
}

inline std::vector<uint64_t> sorted_real_colors(const MolecularGraph& g, const std::vector<uint64_t>& colors) {
  std::vector<uint64_t> h;
  h.reserve(g.n);
  for (int v = 0; v < g.n; ++v)
    if (g.node_mask[v]) h.push_back(colors[v]);
  std::sort(h.begin(), h.end());
  return h;
}

}  // namespace detail

// Stable WL colors after `iterations` refinement rounds (real atoms only;
// dummy slots keep color 0).
inline std::vector<uint64_t> wl_colors(const MolecularGraph& g, int iterations) {
  auto colors = detail::wl_initial_colors(g);
  for (int k = 0; k < iterations; ++k) colors = detail::wl_refine_once(g, colors);
  return colors;
}

// Content hash of the labeled graph up to slot permutation: multiset of
// stabilized colors plus the multiset of colored edges. Unequal signatures
// imply non-isomorphic; equal signatures are a cheap bucketing key.
inline uint64_t graph_signature(const MolecularGraph& g) {
  int rounds = std::max(1, g.real_atom_count());
  auto colors = wl_colors(g, std::min(rounds, 8));
  auto sorted = detail::sorted_real_colors(g, colors);
  uint64_t h = splitmix64(0xb11d6e5eULL + static_cast<uint64_t>(sorted.size()));
  for (uint64_t c : sorted) h = hash_combine(h, c);
  std::vector<uint64_t> edges;
  for (int i = 0; i < g.n; ++i) {
    if (!g.node_mask[i]) continue;
    for (int j = i + 1; j < g.n; ++j) {
      if (!g.node_mask[j]) continue;
      int b = g.bond(i, j);
      if (b == kBondNone) continue;
      uint64_t lo = std::min(colors[i], colors[j]), hi = std::max(colors[i], colors[j]);
      edges.push_back(hash_combine(hash_combine(splitmix64(static_cast<uint64_t>(b)), lo), hi));
    }
  }
  std::sort(edges.begin(), edges.end());
  for (uint64_t e : edges) h = hash_combine(h, e);
  return h;
}

// Exact labeled-graph isomorphism on the real atoms of both graphs,
// preserving atom categories, charges and bond categories. Padding and slot
// order are ignored. Color refinement prunes the search; backtracking
// resolves the rest. Both graphs must use the same vocabulary.
inline bool graphs_equal(const MolecularGraph& a, const MolecularGraph& b) {
  std::vector<int> ra = a.real_atoms(), rb = b.real_atoms();
  if (ra.size() != rb.size()) return false;
  if (ra.empty()) return true;

  auto ca = detail::wl_initial_colors(a);
  auto cb = detail::wl_initial_colors(b);
  if (detail::sorted_real_colors(a, ca) != detail::sorted_real_colors(b, cb)) return false;

  // Refine until the joint partition stabilizes.
  for (size_t round = 0; round < ra.size(); ++round) {
    auto na = detail::wl_refine_once(a, ca);
    auto nb = detail::wl_refine_once(b, cb);
    if (detail::sorted_real_colors(a, na) != detail::sorted_real_colors(b, nb)) return false;
    // Partition size on `a`: stop once refinement no longer splits classes.
    auto classes = [](const std::vector<uint64_t>& v) {
      auto s = v;
      std::sort(s.begin(), s.end());
      return std::unique(s.begin(), s.end()) - s.begin();
    };
    bool stable = classes(na) == classes(ca) && classes(nb) == classes(cb);
    ca = std::move(na);
    cb = std::move(nb);
    if (stable) break;
  }

  // Candidate targets in b for every atom of a share the final color.
  std::map<uint64_t, std::vector<int>> by_color;
  for (int v : rb) by_color[cb[v]].push_back(v);

  // Order a's atoms rarest color first to fail fast.
  std::vector<int> order = ra;
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    size_t sx = by_color[ca[x]].size(), sy = by_color[ca[y]].size();
    if (sx != sy) return sx < sy;
    return x < y;
  });

  std::vector<int> map_a(a.n, -1);
  std::vector<char> used_b(b.n, 0);

  std::function<bool(size_t)> place = [&](size_t k) -> bool {
    if (k == order.size()) return true;
    int v = order[k];
    auto it = by_color.find(ca[v]);
    if (it == by_color.end()) return false;
    for (int w : it->second) {
      if (used_b[w]) continue;
      if (a.atom_types[v] != b.atom_types[w] || a.formal_charges[v] != b.formal_charges[w]) continue;
      bool ok = true;
      for (size_t prev = 0; prev < k && ok; ++prev) {
        int pv = order[prev];
        ok = a.bond(v, pv) == b.bond(w, map_a[pv]);
      }
      if (!ok) continue;
      map_a[v] = w;
      used_b[w] = 1;
      if (place(k + 1)) return true;
      used_b[w] = 0;
      map_a[v] = -1;
    }
    return false;
  };

  return place(0);
}

}  // namespace bridgekit
