#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bridgekit/smiles.hpp"

namespace bridgekit {

// One aligned retrosynthesis example. Product and reactants live in the same
// slot space: slot j holds the product atom and the reactant atom that
// correspond under the dataset's atom mapping, so the generative bridge only
// has to edit what the reaction actually changes. reactant_order[j] is the
// reactant-side parser atom index at slot j (-1 on dummies); it is the
// bookkeeping needed to reorder teacher targets into model order.
struct ReactionRecord {
  MolecularGraph product;
  MolecularGraph reactants;
  std::vector<int> reactant_order;
  std::optional<int> reaction_class;
  uint64_t key = 0;  // content hash of the source line
  int line_number = 0;
};

struct IngestStats {
  int total_lines = 0;
  int comment_lines = 0;
  int accepted = 0;
  int rejected = 0;
  int skipped_too_large = 0;
  std::vector<std::string> errors;  // "line N: message"
};

struct Dataset {
  AtomVocab vocab;
  std::vector<ReactionRecord> records;
  IngestStats stats;
  uint64_t corpus_hash = 0;  // over raw line bytes, comments included
};

namespace detail {

// Positions product parser atoms next to their reactant counterparts. With
// full atom maps the counterpart is the reactant atom carrying the same map
// number; unmapped lines fall back to index alignment (extra reactant atoms
// must then occupy the highest parser indices).
inline std::vector<int> product_to_reactant(const std::vector<int>& pmaps, const std::vector<int>& rmaps,
                                            size_t offset_for_errors) {
  int n_p = static_cast<int>(pmaps.size());
  int n_r = static_cast<int>(rmaps.size());
  bool p_mapped = n_p > 0, r_mapped = n_r > 0;
  for (int m : pmaps) p_mapped = p_mapped && m > 0;
  for (int m : rmaps) r_mapped = r_mapped && m > 0;
  bool any = false;
  for (int m : pmaps) any = any || m > 0;
  for (int m : rmaps) any = any || m > 0;

  std::vector<int> ridx(n_p);
  if (!any) {
    for (int i = 0; i < n_p; ++i) ridx[i] = i;
    return ridx;
  }
  if (!p_mapped || !r_mapped)
    throw ParseError("atom maps must cover either every atom or none", offset_for_errors);
  std::vector<int> where;  // map number -> reactant index
  for (int k = 0; k < n_r; ++k) {
    int m = rmaps[k];
    if (m >= static_cast<int>(where.size())) where.resize(m + 1, -1);
    if (where[m] != -1) throw ParseError("duplicate reactant atom map " + std::to_string(m), offset_for_errors);
    where[m] = k;
  }
  std::vector<char> used(n_r, 0);
  for (int i = 0; i < n_p; ++i) {
    int m = pmaps[i];
    int k = m < static_cast<int>(where.size()) ? where[m] : -1;
    if (k < 0) throw ParseError("product atom map " + std::to_string(m) + " missing on the reactant side",
                                offset_for_errors);
    if (used[k]) throw ParseError("duplicate product atom map " + std::to_string(m), offset_for_errors);
    used[k] = 1;
    ridx[i] = k;
  }
  return ridx;
}

}  // namespace detail

// Builds the aligned, padded record for one parsed line. `ridx[i]` is the
// reactant parser index matching product parser atom i; atoms without a
// shared counterpart simply occupy distinct slots.
inline ReactionRecord build_record(const MolecularGraph& product, const MolecularGraph& reactants,
                                   const std::vector<int>& ridx, uint64_t perm_seed) {
  int n_p = product.n, n_r = reactants.n;
  int width = std::max(n_p, n_r);
  for (int i = 0; i < n_p; ++i) width = std::max(width, ridx[i] + 1);
  int N = width + 10;

  Rng rng(perm_seed);
  std::vector<int> perm(N);
  for (int i = 0; i < N; ++i) perm[i] = i;
  for (int i = N - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

  ReactionRecord rec;
  rec.reactants.resize(N);
  rec.product.resize(N);
  rec.reactant_order.assign(N, -1);

  for (int k = 0; k < n_r; ++k) {
    int s = perm[k];
    rec.reactant_order[s] = k;
    rec.reactants.atom_types[s] = reactants.atom_types[k];
    rec.reactants.formal_charges[s] = reactants.formal_charges[k];
    rec.reactants.node_mask[s] = 1;
  }
  for (int k = 0; k < n_r; ++k)
    for (int l = k + 1; l < n_r; ++l)
      if (reactants.bond(k, l) != kBondNone) rec.reactants.set_bond(perm[k], perm[l], reactants.bond(k, l));

  for (int i = 0; i < n_p; ++i) {
    int s = perm[ridx[i]];
    rec.product.atom_types[s] = product.atom_types[i];
    rec.product.formal_charges[s] = product.formal_charges[i];
    rec.product.node_mask[s] = 1;
  }
  for (int i = 0; i < n_p; ++i)
    for (int j = i + 1; j < n_p; ++j)
      if (product.bond(i, j) != kBondNone)
        rec.product.set_bond(perm[ridx[i]], perm[ridx[j]], product.bond(i, j));

  rec.reactants.recompute_components();
  rec.product.recompute_components();
  return rec;
}

// Reads the tab-separated reaction corpus: `product<TAB>reactants[<TAB>class]`
// per line, '#' starts a comment. Malformed lines are counted and reported
// with their line number; lines whose molecules exceed `max_real_atoms` are
// skipped with a separate count. Slot permutations are seeded per accepted
// record index so ingestion is reproducible. Note the vocabulary registers
// atom categories in parsing order, including categories seen on lines that
// are later rejected.
inline Dataset ingest_dataset(std::istream& in, uint64_t seed, int max_real_atoms = 64) {
  Dataset ds;
  std::string line;
  int line_no = 0;
  uint64_t h = 1469598103934665603ull;
  auto hash_bytes = [&h](const std::string& s) {
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    h = (h ^ static_cast<unsigned char>('\n')) * 1099511628211ull;
  };

  while (std::getline(in, line)) {
    ++line_no;
    ++ds.stats.total_lines;
    hash_bytes(line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed = line;
    size_t first = trimmed.find_first_not_of(" \t");
    if (first == std::string::npos) {
      ++ds.stats.comment_lines;
      continue;
    }
    if (trimmed[first] == '#') {
      ++ds.stats.comment_lines;
      continue;
    }

    auto reject = [&](const std::string& why) {
      ++ds.stats.rejected;
      ds.stats.errors.push_back("line " + std::to_string(line_no) + ": " + why);
    };

    std::vector<std::string> fields;
    {
      std::stringstream ss(line);
      std::string f;
      while (std::getline(ss, f, '\t')) fields.push_back(f);
    }
    if (fields.size() < 2 || fields.size() > 3) {
      reject("expected 2 or 3 tab-separated fields, got " + std::to_string(fields.size()));
      continue;
    }

    std::optional<int> cls;
    if (fields.size() == 3) {
      try {
        size_t pos = 0;
        int v = std::stoi(fields[2], &pos);
        if (pos != fields[2].size() || v < 1 || v > 10) throw std::invalid_argument("range");
        cls = v;
      } catch (const std::exception&) {
        reject("reaction class must be an integer in [1, 10], got '" + fields[2] + "'");
        continue;
      }
    }

    try {
      std::vector<int> pmaps, rmaps;
      MolecularGraph product = parse_smiles(fields[0], ds.vocab, &pmaps);
      MolecularGraph reactants = parse_smiles(fields[1], ds.vocab, &rmaps);
      std::vector<int> ridx = detail::product_to_reactant(pmaps, rmaps, 0);

      int width = std::max(product.n, reactants.n);
      if (width > max_real_atoms) {
        ++ds.stats.skipped_too_large;
        continue;
      }

      uint64_t perm_seed = hash_combine(seed, static_cast<uint64_t>(ds.records.size()));
      ReactionRecord rec = build_record(product, reactants, ridx, perm_seed);
      rec.reaction_class = cls;
      rec.line_number = line_no;
      rec.key = fnv1a64(line);
      ds.records.push_back(std::move(rec));
      ++ds.stats.accepted;
    } catch (const ParseError& e) {
      reject(std::string(e.what()) + " at offset " + std::to_string(e.offset));
    }
  }
  ds.corpus_hash = h;
  return ds;
}

inline Dataset ingest_file(const std::string& path, uint64_t seed, int max_real_atoms = 64) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open dataset file " + path);
  return ingest_dataset(f, seed, max_real_atoms);
}

// ---------------------------------------------------------------------------
// Synthetic bond-cut corpus.

struct SyntheticConfig {
  int count = 2000;
  uint64_t seed = 7;
  int min_atoms = 4;
  int max_atoms = 10;
  double ring_prob = 0.3;
  double double_bond_prob = 0.2;
  bool with_class = true;
};

namespace detail {

inline int valence_cap(const std::string& element) {
  if (element == "C") return 4;
  if (element == "N") return 3;
  return 2;  // O
}

struct SynthMol {
  std::vector<std::string> elements;
  std::vector<std::pair<int, int>> edges;
  std::vector<int> orders;       // bond order per edge (1 or 2)
  std::vector<int> ring_edge;    // 1 if the edge closes the ring
  std::vector<int> used_valence;
};

// Random connected molecule over {C, N, O}: a degree-capped random tree plus
// at most one extra ring-closing single bond.
inline SynthMol random_molecule(Rng& rng, const SyntheticConfig& cfg) {
  SynthMol m;
  int n = cfg.min_atoms + rng.uniform_int(cfg.max_atoms - cfg.min_atoms + 1);
  m.elements.push_back("C");
  for (int i = 1; i < n; ++i) {
    double u = rng.uniform();
    m.elements.push_back(u < 0.7 ? "C" : u < 0.85 ? "N" : "O");
  }
  m.used_valence.assign(n, 0);

  for (int i = 1; i < n; ++i) {
    std::vector<int> open;
    for (int j = 0; j < i; ++j)
      if (m.used_valence[j] < valence_cap(m.elements[j])) open.push_back(j);
    if (open.empty()) {  // double bonds can exhaust every attachment point
      m.edges.clear();
      return m;
    }
    int j = open[rng.uniform_int(static_cast<int>(open.size()))];
    int order = 1;
    if (rng.uniform() < cfg.double_bond_prob && valence_cap(m.elements[i]) - m.used_valence[i] >= 2 &&
        valence_cap(m.elements[j]) - m.used_valence[j] >= 2)
      order = 2;
    m.edges.push_back({j, i});
    m.orders.push_back(order);
    m.ring_edge.push_back(0);
    m.used_valence[i] += order;
    m.used_valence[j] += order;
  }

  if (rng.uniform() < cfg.ring_prob) {
    std::vector<std::pair<int, int>> candidates;
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) {
        if (m.used_valence[a] >= valence_cap(m.elements[a])) continue;
        if (m.used_valence[b] >= valence_cap(m.elements[b])) continue;
        bool adjacent = false;
        for (auto& e : m.edges) adjacent = adjacent || (e == std::make_pair(a, b));
        if (!adjacent) candidates.push_back({a, b});
      }
    if (!candidates.empty()) {
      auto [a, b] = candidates[rng.uniform_int(static_cast<int>(candidates.size()))];
      m.edges.push_back({a, b});
      m.orders.push_back(1);
      m.ring_edge.push_back(1);
      m.used_valence[a] += 1;
      m.used_valence[b] += 1;
    }
  }
  return m;
}

inline MolecularGraph to_graph(const SynthMol& m, AtomVocab& vocab, int extra_slots = 0) {
  int n = static_cast<int>(m.elements.size());
  MolecularGraph g(n + extra_slots);
  for (int i = 0; i < n; ++i) {
    g.atom_types[i] = vocab.find_or_add(m.elements[i], 0, 0);
    g.node_mask[i] = 1;
  }
  for (size_t e = 0; e < m.edges.size(); ++e)
    g.set_bond(m.edges[e].first, m.edges[e].second, m.orders[e] == 2 ? kBondDouble : kBondSingle);
  return g;
}

inline int pair_class(const std::string& a, const std::string& b) {
  auto rank = [](const std::string& e) { return e == "C" ? 0 : e == "N" ? 1 : 2; };
  int x = std::min(rank(a), rank(b)), y = std::max(rank(a), rank(b));
  // (C,C)=0 (C,N)=1 (C,O)=2 (N,N)=3 (N,O)=4 (O,O)=5
  static const int table[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
  return table[x][y];
}

// Deterministic hydrolysis site: the "most labile" single bond, the one with
// the lexicographically largest (element pair, endpoint degrees, neighbor
// weights) key. Every quantity is isomorphism-invariant, so the cut depends
// only on the molecule's structure — never on atom order — and identical
// products always map to identical reactant sets. Returns -1 when the
// molecule has no single bond.
inline int most_labile_single_bond(const SynthMol& m) {
  int n = static_cast<int>(m.elements.size());
  auto rank = [&](int a) { return m.elements[a] == "C" ? 0 : m.elements[a] == "N" ? 1 : 2; };
  std::vector<int> degree(n, 0);
  for (const auto& e : m.edges) {
    ++degree[e.first];
    ++degree[e.second];
  }
  std::vector<int> weight(n), nbr(n, 0);  // per-atom potential and its 1-ring sum
  for (int a = 0; a < n; ++a) weight[a] = 3 * rank(a) + degree[a];
  for (const auto& e : m.edges) {
    nbr[e.first] += weight[e.second];
    nbr[e.second] += weight[e.first];
  }
  int best = -1;
  std::array<int, 3> best_key{};
  for (size_t e = 0; e < m.edges.size(); ++e) {
    if (m.orders[e] != 1) continue;
    auto [u, v] = m.edges[e];
    std::array<int, 3> key = {pair_class(m.elements[u], m.elements[v]), degree[u] + degree[v],
                              nbr[u] + nbr[v]};
    if (best < 0 || key > best_key) {
      best = static_cast<int>(e);
      best_key = key;
    }
  }
  return best;
}

}  // namespace detail

// One synthetic pseudo-hydrolysis line: pick a random single bond u-v of a
// random molecule, delete it and cap both severed ends with a new terminal O.
// Emitted SMILES carry full atom maps, so ingestion aligns product and
// reactant atoms exactly; reactants always have two more atoms than the
// product. The class label encodes the cut bond's element pair plus whether
// the cut opened the ring.
inline std::string synthetic_line(uint64_t seed, int index, const SyntheticConfig& cfg) {
  Rng rng(hash_combine(seed, static_cast<uint64_t>(index)));
  AtomVocab vocab;

  detail::SynthMol mol;
  int cut = -1;
  for (int attempt = 0; attempt < 64 && cut < 0; ++attempt) {
    mol = detail::random_molecule(rng, cfg);
    if (mol.edges.size() + 1 < mol.elements.size()) continue;
    std::vector<int> singles;
    for (size_t e = 0; e < mol.edges.size(); ++e)
      if (mol.orders[e] == 1) singles.push_back(static_cast<int>(e));
    if (!singles.empty()) cut = singles[rng.uniform_int(static_cast<int>(singles.size()))];
  }
  if (cut < 0) throw std::logic_error("synthetic_line: no cuttable bond after many attempts");

  int n = static_cast<int>(mol.elements.size());
  auto [u, v] = mol.edges[cut];

  MolecularGraph product = detail::to_graph(mol, vocab);
  MolecularGraph reactants = detail::to_graph(mol, vocab, 2);
  reactants.set_bond(u, v, kBondNone);
  int o_type = vocab.find_or_add("O", 0, 0);
  reactants.atom_types[n] = o_type;
  reactants.node_mask[n] = 1;
  reactants.set_bond(u, n, kBondSingle);
  reactants.atom_types[n + 1] = o_type;
  reactants.node_mask[n + 1] = 1;
  reactants.set_bond(v, n + 1, kBondSingle);
  product.recompute_components();
  reactants.recompute_components();

  std::vector<int> pmaps(n), rmaps(n + 2);
  for (int i = 0; i < n; ++i) pmaps[i] = rmaps[i] = i + 1;
  rmaps[n] = n + 1;
  rmaps[n + 1] = n + 2;

  std::string out = write_smiles(product, vocab, &pmaps) + "\t" + write_smiles(reactants, vocab, &rmaps);
  if (cfg.with_class) {
    int cls = 1 + detail::pair_class(mol.elements[u], mol.elements[v]) + (mol.ring_edge[cut] ? 4 : 0);
    out += "\t" + std::to_string(std::min(cls, 10));
  }
  return out;
}

inline void generate_synthetic(std::ostream& out, const SyntheticConfig& cfg) {
  out << "# synthetic bond-cut corpus, seed " << cfg.seed << "\n";
  for (int i = 0; i < cfg.count; ++i) out << synthetic_line(cfg.seed, i, cfg) << "\n";
}

}  // namespace bridgekit
