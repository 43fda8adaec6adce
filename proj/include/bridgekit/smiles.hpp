#pragma once

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bridgekit/graph.hpp"

namespace bridgekit {

// Atom categories are (element, formal charge) pairs discovered from data.
// Index 0 is reserved for the dummy/absent category.
class AtomVocab {
 public:
  struct Entry {
    std::string element;
    int charge = 0;
    bool operator==(const Entry& o) const { return element == o.element && charge == o.charge; }
  };

  AtomVocab() { entries_.push_back({"", 0}); }

  int size() const { return static_cast<int>(entries_.size()); }
  const Entry& entry(int idx) const { return entries_.at(idx); }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  int find(const std::string& element, int charge) const {
    auto it = index_.find({element, charge});
    return it == index_.end() ? -1 : it->second;
  }

  int find_or_add(const std::string& element, int charge, size_t offset) {
    int idx = find(element, charge);
    if (idx >= 0) return idx;
    if (frozen_)
      throw ParseError("atom category " + element + (charge ? (charge > 0 ? "+" : "") + std::to_string(charge) : "") +
                           " not in vocabulary",
                       offset);
    entries_.push_back({element, charge});
    idx = size() - 1;
    index_[{element, charge}] = idx;
    return idx;
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write vocabulary file " + path);
    for (int i = 1; i < size(); ++i) f << entries_[i].element << '\t' << entries_[i].charge << '\n';
  }

  static AtomVocab load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read vocabulary file " + path);
    AtomVocab v;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      size_t tab = line.find('\t');
      if (tab == std::string::npos) throw IoError("malformed vocabulary line: " + line);
      v.find_or_add(line.substr(0, tab), std::stoi(line.substr(tab + 1)), 0);
    }
    v.freeze();
    return v;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::pair<std::string, int>, int> index_;
  bool frozen_ = false;
};

namespace detail {

inline const std::vector<std::string>& element_table() {
  static const std::vector<std::string> t = {
      "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
      "S",  "Cl", "Ar", "K",  "Ca", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga",
      "Ge", "As", "Se", "Br", "Kr", "Zr", "Mo", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb",
      "Te", "I",  "Xe", "Ba", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi"};
  return t;
}

inline bool known_element(const std::string& sym) {
  for (const auto& e : element_table())
    if (e == sym) return true;
  return false;
}

struct ParsedAtom {
  std::string element;
  int charge = 0;
  int map = 0;  // bracket atom-map number, 0 = unmapped
  bool aromatic = false;
  size_t offset = 0;
};

}  // namespace detail

// Parses the supported SMILES subset: organic-subset atoms (B C N O P S F Cl
// Br I), aromatic lowercase forms, bracket atoms with optional isotope,
// hydrogen count, charge and atom-map number, bonds - = # :, branches, ring
// closures %nn and 1..9, and dot-separated components. Stereochemistry is
// rejected. Two adjacent aromatic atoms joined without an explicit bond
// symbol get the aromatic bond category; otherwise the default bond is
// single. When `atom_maps` is given it receives one entry per atom in parser
// order (0 = unmapped).
inline MolecularGraph parse_smiles(const std::string& s, AtomVocab& vocab,
                                   std::vector<int>* atom_maps = nullptr) {
  using detail::ParsedAtom;
  if (s.empty()) throw ParseError("empty SMILES", 0);

  std::vector<ParsedAtom> atoms;
  struct BondRec {
    int u, v, type;
  };
  std::vector<BondRec> bonds;

  auto add_bond = [&](int u, int v, int type, size_t off) {
    if (u == v) throw ParseError("bond joins an atom to itself", off);
    for (const auto& b : bonds)
      if ((b.u == u && b.v == v) || (b.u == v && b.v == u))
        throw ParseError("duplicate bond between atoms", off);
    bonds.push_back({u, v, type});
  };
  auto default_bond = [&](int u, int v) {
    return (atoms[u].aromatic && atoms[v].aromatic) ? kBondAromatic : kBondSingle;
  };

  struct OpenRing {
    int atom;
    int bond;  // -1 when no explicit symbol was given
    size_t offset;
  };
  std::map<int, OpenRing> open_rings;
  std::vector<std::pair<int, size_t>> branch_stack;  // (atom to return to, offset of '(')
  int prev = -1;
  int pending_bond = -1;
  size_t pending_bond_off = 0;

  auto attach_atom = [&](ParsedAtom a, size_t off) {
    a.offset = off;
    atoms.push_back(a);
    int idx = static_cast<int>(atoms.size()) - 1;
    if (prev >= 0) {
      int type = pending_bond >= 0 ? pending_bond : default_bond(prev, idx);
      add_bond(prev, idx, type, off);
    } else if (pending_bond >= 0) {
      throw ParseError("bond symbol with no preceding atom", pending_bond_off);
    }
    pending_bond = -1;
    prev = idx;
  };

  auto ring_closure = [&](int key, size_t off) {
    if (prev < 0) throw ParseError("ring closure digit with no preceding atom", off);
    auto it = open_rings.find(key);
    if (it == open_rings.end()) {
      open_rings[key] = {prev, pending_bond, off};
    } else {
      OpenRing o = it->second;
      open_rings.erase(it);
      int type;
      if (o.bond >= 0 && pending_bond >= 0) {
        if (o.bond != pending_bond) throw ParseError("ring closure bond symbols disagree", off);
        type = o.bond;
      } else if (o.bond >= 0) {
        type = o.bond;
      } else if (pending_bond >= 0) {
        type = pending_bond;
      } else {
        type = default_bond(o.atom, prev);
      }
      add_bond(o.atom, prev, type, off);
    }
    pending_bond = -1;
  };

  size_t i = 0;
  const size_t len = s.size();
  while (i < len) {
    char c = s[i];
    switch (c) {
      case '(':
        if (prev < 0) throw ParseError("branch opens before any atom", i);
        if (pending_bond >= 0) throw ParseError("bond symbol before branch open", i);
        branch_stack.push_back({prev, i});
        ++i;
        break;
      case ')':
        if (branch_stack.empty()) throw ParseError("unmatched branch close", i);
        if (pending_bond >= 0) throw ParseError("dangling bond symbol before branch close", i);
        prev = branch_stack.back().first;
        branch_stack.pop_back();
        ++i;
        break;
      case '.':
        if (pending_bond >= 0) throw ParseError("bond symbol before component separator", i);
        if (!branch_stack.empty()) throw ParseError("component separator inside a branch", i);
        if (prev < 0) throw ParseError("component separator with no preceding atom", i);
        prev = -1;
        ++i;
        break;
      case '-':
      case '=':
      case '#':
      case ':': {
        if (pending_bond >= 0) throw ParseError("two bond symbols in a row", i);
        pending_bond = c == '-' ? kBondSingle : c == '=' ? kBondDouble : c == '#' ? kBondTriple : kBondAromatic;
        pending_bond_off = i;
        ++i;
        break;
      }
      case '%': {
        if (i + 2 >= len || !std::isdigit(static_cast<unsigned char>(s[i + 1])) ||
            !std::isdigit(static_cast<unsigned char>(s[i + 2])))
          throw ParseError("%% ring closure needs two digits", i);
        ring_closure((s[i + 1] - '0') * 10 + (s[i + 2] - '0'), i);
        i += 3;
        break;
      }
      case '[': {
        size_t start = i;
        ++i;
        ParsedAtom a;
        while (i < len && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;  // isotope, ignored
        if (i >= len) throw ParseError("unterminated bracket atom", start);
        if (std::islower(static_cast<unsigned char>(s[i])) &&
            std::string("bcnops").find(s[i]) != std::string::npos) {
          a.element = static_cast<char>(std::toupper(static_cast<unsigned char>(s[i])));
          a.aromatic = true;
          ++i;
        } else if (std::isupper(static_cast<unsigned char>(s[i]))) {
          a.element = s[i];
          ++i;
          if (i < len && std::islower(static_cast<unsigned char>(s[i])) &&
              detail::known_element(a.element + s[i])) {
            a.element += s[i];
            ++i;
          }
          if (!detail::known_element(a.element)) throw ParseError("unknown element " + a.element, start + 1);
        } else {
          throw ParseError("expected element symbol in bracket atom", i);
        }
        if (i < len && (s[i] == '@')) throw ParseError("stereochemistry is not supported", i);
        if (i < len && s[i] == 'H') {  // hydrogen count, not modeled
          ++i;
          while (i < len && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        }
        if (i < len && (s[i] == '+' || s[i] == '-')) {
          char sign = s[i];
          int unit = sign == '+' ? 1 : -1;
          int count = 0;
          while (i < len && s[i] == sign) {
            ++count;
            ++i;
          }
          if (count == 1 && i < len && std::isdigit(static_cast<unsigned char>(s[i]))) {
            count = 0;
            while (i < len && std::isdigit(static_cast<unsigned char>(s[i]))) {
              count = count * 10 + (s[i] - '0');
              ++i;
            }
          }
          a.charge = unit * count;
        }
        if (i < len && s[i] == ':') {
          ++i;
          if (i >= len || !std::isdigit(static_cast<unsigned char>(s[i])))
            throw ParseError("atom-map colon without a number", i);
          int map = 0;
          while (i < len && std::isdigit(static_cast<unsigned char>(s[i]))) {
            map = map * 10 + (s[i] - '0');
            ++i;
          }
          if (map == 0) throw ParseError("atom-map number must be positive", start);
          a.map = map;
        }
        if (i >= len || s[i] != ']') throw ParseError("unterminated bracket atom", start);
        ++i;
        attach_atom(a, start);
        break;
      }
      default: {
        if (std::isdigit(static_cast<unsigned char>(c))) {
          ring_closure(c - '0', i);
          ++i;
          break;
        }
        detail::ParsedAtom a;
        if (std::isupper(static_cast<unsigned char>(c))) {
          std::string sym(1, c);
          // Two-character organic-subset symbols.
          if (i + 1 < len && (s.compare(i, 2, "Cl") == 0 || s.compare(i, 2, "Br") == 0)) {
            sym = s.substr(i, 2);
            i += 2;
          } else {
            ++i;
          }
          static const std::string organic[] = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"};
          bool ok = false;
          for (const auto& o : organic) ok = ok || o == sym;
          if (!ok) throw ParseError("element " + sym + " must be written as a bracket atom", i - sym.size());
          a.element = sym;
          attach_atom(a, i - sym.size());
        } else if (std::islower(static_cast<unsigned char>(c)) &&
                   std::string("bcnops").find(c) != std::string::npos) {
          a.element = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
          a.aromatic = true;
          ++i;
          attach_atom(a, i - 1);
        } else {
          throw ParseError(std::string("unexpected character '") + c + "'", i);
        }
        break;
      }
    }
  }

  if (pending_bond >= 0) throw ParseError("dangling bond symbol at end of input", pending_bond_off);
  if (!branch_stack.empty()) throw ParseError("unclosed branch", branch_stack.back().second);
  if (!open_rings.empty()) throw ParseError("unmatched ring closure", open_rings.begin()->second.offset);

  MolecularGraph g(static_cast<int>(atoms.size()));
  if (atom_maps) atom_maps->assign(atoms.size(), 0);
  for (size_t a = 0; a < atoms.size(); ++a) {
    g.atom_types[a] = vocab.find_or_add(atoms[a].element, atoms[a].charge, atoms[a].offset);
    g.formal_charges[a] = atoms[a].charge;
    g.node_mask[a] = 1;
    if (atom_maps) (*atom_maps)[a] = atoms[a].map;
  }
  for (const auto& b : bonds) g.set_bond(b.u, b.v, b.type);
  g.recompute_components();
  return g;
}

namespace detail {

inline std::string atom_token(const AtomVocab& vocab, int type, int map = 0) {
  const auto& e = vocab.entry(type);
  static const std::string organic[] = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"};
  bool plain = e.charge == 0 && map == 0;
  if (plain) {
    bool found = false;
    for (const auto& o : organic) found = found || o == e.element;
    plain = found;
  }
  if (plain) return e.element;
  std::string t = "[" + e.element;
  if (e.charge > 0) t += e.charge == 1 ? "+" : "+" + std::to_string(e.charge);
  if (e.charge < 0) t += e.charge == -1 ? "-" : "-" + std::to_string(-e.charge);
  if (map > 0) t += ":" + std::to_string(map);
  return t + "]";
}

inline const char* bond_token(int type) {
  switch (type) {
    case kBondSingle: return "";
    case kBondDouble: return "=";
    case kBondTriple: return "#";
    case kBondAromatic: return ":";
    default: throw std::logic_error("bond_token: not a writable bond category");
  }
}

}  // namespace detail

// Writes the real atoms of `g`. Components are emitted lowest-slot first and
// joined with '.'; within a component the traversal is depth-first from the
// lowest slot, taking neighbors in ascending slot order. When `atom_maps` is
// given (one entry per slot, 0 = none) mapped atoms are written in bracket
// form with their map number, which is how reaction datasets express the
// product-to-reactant atom correspondence.
inline std::string write_smiles(const MolecularGraph& g, const AtomVocab& vocab,
                                const std::vector<int>* atom_maps = nullptr) {
  std::vector<int> real = g.real_atoms();
  if (real.empty()) return "";

  std::vector<char> visited(g.n, 0);
  // Ring-closure bookkeeping: per atom, list of (other endpoint, bond type).
  std::vector<std::vector<std::pair<int, int>>> ring_bonds(g.n);
  std::vector<std::map<int, int>> ring_digit(g.n);  // other endpoint -> digit
  int next_digit = 1;
  std::vector<int> free_digits;

  std::string out;

  // Pass 1 on each component: find back edges via iterative DFS.
  // Pass 2: emit text with an explicit stack of (atom, parent, remaining children).
  auto find_back_edges = [&](int root) {
    std::vector<char> seen(g.n, 0);
    std::vector<std::pair<int, int>> stack{{root, -1}};
    std::vector<std::pair<int, int>> order;
    seen[root] = 1;
    while (!stack.empty()) {
      auto [v, parent] = stack.back();
      stack.pop_back();
      order.push_back({v, parent});
      std::vector<int> nb;
      for (int u = 0; u < g.n; ++u)
        if (u != v && g.node_mask[u] && g.bond(v, u) != kBondNone) nb.push_back(u);
      for (auto it = nb.rbegin(); it != nb.rend(); ++it) {
        if (!seen[*it]) {
          seen[*it] = 1;
          stack.push_back({*it, v});
        }
      }
    }
    // Tree edges are (v, parent) pairs discovered above; every other bonded
    // pair inside the component is a ring bond.
    std::vector<std::pair<int, int>> tree;
    for (auto [v, p] : order)
      if (p >= 0) tree.push_back({std::min(v, p), std::max(v, p)});
    for (size_t a = 0; a < order.size(); ++a) {
      int v = order[a].first;
      for (size_t b = a + 1; b < order.size(); ++b) {
        int u = order[b].first;
        if (g.bond(v, u) == kBondNone) continue;
        auto e = std::make_pair(std::min(v, u), std::max(v, u));
        if (std::find(tree.begin(), tree.end(), e) == tree.end()) {
          ring_bonds[v].push_back({u, g.bond(v, u)});
          ring_bonds[u].push_back({v, g.bond(v, u)});
        }
      }
    }
    return order;
  };

  auto emit_digit = [&](std::string& dst, int digit) {
    if (digit < 10) {
      dst += static_cast<char>('0' + digit);
    } else if (digit < 100) {
      dst += '%';
      dst += static_cast<char>('0' + digit / 10);
      dst += static_cast<char>('0' + digit % 10);
    } else {
      throw std::runtime_error("write_smiles: more than 99 concurrently open ring closures");
    }
  };

  auto emit_component = [&](int root) {
    find_back_edges(root);
    struct Frame {
      int atom;
      int parent;
      std::vector<int> children;
      size_t next = 0;
    };
    std::vector<Frame> fs;
    auto make_frame = [&](int v, int parent) {
      Frame f{v, parent, {}, 0};
      for (int u = 0; u < g.n; ++u) {
        if (u == v || !g.node_mask[u] || g.bond(v, u) == kBondNone) continue;
        if (u == parent) continue;
        bool is_ring = false;
        for (auto& rb : ring_bonds[v]) is_ring = is_ring || rb.first == u;
        if (!is_ring && !visited[u]) f.children.push_back(u);
      }
      return f;
    };
    auto emit_atom = [&](int v) {
      visited[v] = 1;
      out += detail::atom_token(vocab, g.atom_types[v], atom_maps ? (*atom_maps)[v] : 0);
      for (auto& [u, bt] : ring_bonds[v]) {
        auto it = ring_digit[v].find(u);
        if (it == ring_digit[v].end()) {
          int digit;
          if (!free_digits.empty()) {
            digit = free_digits.back();
            free_digits.pop_back();
          } else {
            digit = next_digit++;
          }
          ring_digit[v][u] = digit;
          ring_digit[u][v] = digit;
          out += detail::bond_token(bt);
          emit_digit(out, digit);
        } else {
          int digit = it->second;
          out += detail::bond_token(bt);
          emit_digit(out, digit);
          free_digits.push_back(digit);
        }
      }
    };

    emit_atom(root);
    fs.push_back(make_frame(root, -1));
    while (!fs.empty()) {
      Frame& f = fs.back();
      if (f.next >= f.children.size()) {
        fs.pop_back();
        if (!fs.empty() && fs.back().next < fs.back().children.size()) out += ')';
        continue;
      }
      int child = f.children[f.next++];
      bool wrap = f.next < f.children.size();  // every child but the last sits in parens
      if (wrap) out += '(';
      out += detail::bond_token(g.bond(f.atom, child));
      emit_atom(child);
      fs.push_back(make_frame(child, f.atom));
    }
  };

  bool first = true;
  for (int v : real) {
    if (visited[v]) continue;
    if (!first) out += '.';
    first = false;
    emit_component(v);
  }
  return out;
}

}  // namespace bridgekit
