#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <sstream>

#include "bridgekit/dataset.hpp"
#include "bridgekit/isomorphism.hpp"
#include "bridgekit/teacher_cache.hpp"

using namespace bridgekit;
using Catch::Matchers::WithinAbs;

namespace {

int count_real_bonds(const MolecularGraph& g) {
  int c = 0;
  for (int i = 0; i < g.n; ++i)
    for (int j = i + 1; j < g.n; ++j)
      if (g.bond(i, j) != kBondNone) ++c;
  return c;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/bridgekit_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("atom maps round-trip through parsing and writing") {
  AtomVocab vocab;
  std::vector<int> maps;
  MolecularGraph g = parse_smiles("[CH3:2][C:1](=O)O", vocab, &maps);
  REQUIRE(g.n == 4);
  CHECK(maps == std::vector<int>{2, 1, 0, 0});

  std::string written = write_smiles(g, vocab, &maps);
  std::vector<int> maps2;
  MolecularGraph g2 = parse_smiles(written, vocab, &maps2);
  CHECK(graphs_equal(g, g2));
  CHECK(maps2 == maps);

  CHECK_THROWS_AS(parse_smiles("[C:0]", vocab), ParseError);
  CHECK_THROWS_AS(parse_smiles("[C:]", vocab), ParseError);
}

TEST_CASE("ingest handles the documented line formats and reports failures") {
  std::string text =
      "# header comment\n"
      "O=C=O\tO=C=O\n"
      "CCO\tCC.O\t3\n"
      "xyz(\tCC\n"
      "CCO\tCC.O\t12\n"
      "CCO\tCC.O\tnope\n"
      "CC\tCC\t1\textra\n"
      "\n";
  std::stringstream in(text);
  Dataset ds = ingest_dataset(in, 42);

  CHECK(ds.stats.total_lines == 8);
  CHECK(ds.stats.comment_lines == 2);
  CHECK(ds.stats.accepted == 2);
  CHECK(ds.stats.rejected == 4);
  CHECK(ds.stats.skipped_too_large == 0);
  REQUIRE(ds.stats.errors.size() == 4);
  CHECK(ds.stats.errors[0].find("line 4") == 0);
  CHECK(ds.stats.errors[1].find("line 5") == 0);
  CHECK(ds.stats.total_lines == ds.stats.comment_lines + ds.stats.accepted + ds.stats.rejected +
                                    ds.stats.skipped_too_large);

  const ReactionRecord& identity = ds.records[0];
  CHECK(identity.product.n == 13);
  CHECK(identity.product.real_atom_count() == 3);
  CHECK(identity.reactants.real_atom_count() == 3);
  CHECK(identity.product.atom_types == identity.reactants.atom_types);
  CHECK(identity.product.bond_types == identity.reactants.bond_types);
  CHECK(!identity.reaction_class.has_value());

  const ReactionRecord& second = ds.records[1];
  REQUIRE(second.reaction_class.has_value());
  CHECK(*second.reaction_class == 3);
  CHECK(second.line_number == 3);

  SECTION("reactant_order maps slots back to parser atoms") {
    AtomVocab fresh;
    MolecularGraph parsed = parse_smiles("CC.O", fresh);
    int seen = 0;
    for (int s = 0; s < second.reactants.n; ++s) {
      int k = second.reactant_order[s];
      if (!second.reactants.node_mask[s]) {
        CHECK(k == -1);
        continue;
      }
      REQUIRE(k >= 0);
      ++seen;
      const auto& want = fresh.entry(parsed.atom_types[k]);
      const auto& got = ds.vocab.entry(second.reactants.atom_types[s]);
      CHECK(want.element == got.element);
    }
    CHECK(seen == 3);
  }

  SECTION("ingestion is deterministic in the seed") {
    std::stringstream in2(text), in3(text);
    Dataset again = ingest_dataset(in2, 42);
    Dataset other = ingest_dataset(in3, 43);
    REQUIRE(again.records.size() == ds.records.size());
    CHECK(again.records[1].reactants.atom_types == ds.records[1].reactants.atom_types);
    CHECK(again.records[1].reactant_order == ds.records[1].reactant_order);
    CHECK(again.corpus_hash == ds.corpus_hash);
    CHECK(other.records[1].reactant_order != ds.records[1].reactant_order);
    CHECK(other.corpus_hash == ds.corpus_hash);
  }

  SECTION("oversized molecules are skipped with a count") {
    std::stringstream in2(text);
    Dataset small = ingest_dataset(in2, 42, 2);
    CHECK(small.stats.accepted == 0);
    CHECK(small.stats.skipped_too_large == 2);
  }
}

TEST_CASE("atom-mapped lines align corresponding atoms onto shared slots") {
  std::string text = "[C:1][C:2][O:3]\t[O:3][C:2][C:1].[O:4]\n";
  std::stringstream in(text);
  Dataset ds = ingest_dataset(in, 5);
  REQUIRE(ds.stats.accepted == 1);
  const ReactionRecord& rec = ds.records[0];

  CHECK(rec.product.real_atom_count() == 3);
  CHECK(rec.reactants.real_atom_count() == 4);

  // The scrambled reactant order must not matter: on every product slot the
  // two sides carry the same element, and the shared bonds coincide.
  int extra_slot = -1;
  for (int s = 0; s < rec.product.n; ++s) {
    if (rec.product.node_mask[s]) {
      CHECK(rec.product.atom_types[s] == rec.reactants.atom_types[s]);
    } else if (rec.reactants.node_mask[s]) {
      extra_slot = s;
    }
  }
  REQUIRE(extra_slot >= 0);
  CHECK(ds.vocab.entry(rec.reactants.atom_types[extra_slot]).element == "O");
  CHECK(rec.reactants.degree(extra_slot) == 0);
  for (int i = 0; i < rec.product.n; ++i)
    for (int j = 0; j < rec.product.n; ++j)
      if (rec.product.node_mask[i] && rec.product.node_mask[j])
        CHECK(rec.product.bond(i, j) == rec.reactants.bond(i, j));

  SECTION("inconsistent maps are rejected with reasons") {
    auto rejected = [](const std::string& line) {
      std::stringstream s(line + "\n");
      Dataset d = ingest_dataset(s, 1);
      return d.stats.rejected == 1 && d.stats.accepted == 0;
    };
    CHECK(rejected("[C:1]C\t[C:1][C:2]"));
    CHECK(rejected("[C:1][C:1]\t[C:1][C:2]"));
    CHECK(rejected("[C:1]\t[C:1].[C:1]"));
    CHECK(rejected("[C:5]\t[C:1]"));
  }
}

TEST_CASE("synthetic corpus is self-consistent under ingestion") {
  SyntheticConfig cfg;
  cfg.count = 60;
  cfg.seed = 9;
  std::stringstream file;
  generate_synthetic(file, cfg);

  Dataset ds = ingest_dataset(file, 42);
  CHECK(ds.stats.accepted == 60);
  CHECK(ds.stats.rejected == 0);
  CHECK(ds.stats.skipped_too_large == 0);

  bool saw_ring_class = false;
  for (const ReactionRecord& rec : ds.records) {
    int np = rec.product.real_atom_count();
    int nr = rec.reactants.real_atom_count();
    CHECK(nr == np + 2);
    CHECK(rec.product.n == nr + 10);

    // The two reactant-only slots hold the new terminal oxygens.
    int extras = 0;
    for (int s = 0; s < rec.product.n; ++s) {
      if (rec.product.node_mask[s] || !rec.reactants.node_mask[s]) continue;
      ++extras;
      CHECK(ds.vocab.entry(rec.reactants.atom_types[s]).element == "O");
      CHECK(rec.reactants.degree(s) == 1);
    }
    CHECK(extras == 2);

    // Exactly one product bond disappears (the cut), two appear (the caps).
    CHECK(count_real_bonds(rec.reactants) == count_real_bonds(rec.product) + 1);
    int cut_bonds = 0;
    for (int i = 0; i < rec.product.n; ++i)
      for (int j = i + 1; j < rec.product.n; ++j) {
        if (rec.product.bond(i, j) != kBondNone && rec.reactants.bond(i, j) == kBondNone) {
          ++cut_bonds;
          CHECK(rec.product.bond(i, j) == kBondSingle);
        }
      }
    CHECK(cut_bonds == 1);

    REQUIRE(rec.reaction_class.has_value());
    CHECK(*rec.reaction_class >= 1);
    CHECK(*rec.reaction_class <= 10);
    saw_ring_class = saw_ring_class || *rec.reaction_class > 4;
  }
  CHECK(saw_ring_class);

  SECTION("generation is deterministic") {
    CHECK(synthetic_line(9, 17, cfg) == synthetic_line(9, 17, cfg));
    CHECK(synthetic_line(9, 17, cfg) != synthetic_line(9, 18, cfg));
  }
}

TEST_CASE("teacher cache stores parser-order rows and round-trips bytes") {
  SyntheticConfig scfg;
  scfg.count = 30;
  scfg.seed = 21;
  std::stringstream file;
  generate_synthetic(file, scfg);
  Dataset ds = ingest_dataset(file, 42);
  REQUIRE(ds.stats.accepted == 30);

  TeacherConfig tcfg;
  tcfg.kind = TeacherKind::kMorgan;
  tcfg.radius = 2;
  tcfg.n_bits = 32;
  tcfg.out_dim = 4;
  TeacherCache cache = build_teacher_cache(ds, tcfg);
  CHECK(cache.dim == 32);
  CHECK(cache.corpus_hash == ds.corpus_hash);
  CHECK(cache.keys.size() == ds.records.size());

  SECTION("atom rows are independent of the slot permutation") {
    std::stringstream file2;
    generate_synthetic(file2, scfg);
    Dataset ds2 = ingest_dataset(file2, 999);
    TeacherCache cache2 = build_teacher_cache(ds2, tcfg);
    REQUIRE(cache2.keys == cache.keys);
    for (uint64_t key : cache.keys) {
      CHECK(cache.at(key).graph_vec == cache2.at(key).graph_vec);
      CHECK(cache.at(key).atoms == cache2.at(key).atoms);
    }
  }

  SECTION("graph vector equals the column sum of atom rows") {
    for (uint64_t key : cache.keys) {
      const auto& e = cache.at(key);
      for (int j = 0; j < cache.dim; ++j) {
        double col = 0;
        for (const auto& row : e.atoms) col += row[j];
        CHECK(col == e.graph_vec[j]);
      }
    }
  }

  SECTION("file round-trip preserves every field through float32") {
    TempFile tmp("cache.bkte");
    save_teacher_cache(cache, tmp.path);
    TeacherCache loaded = load_teacher_cache(tmp.path);
    CHECK(loaded.id == cache.id);
    CHECK(loaded.dim == cache.dim);
    CHECK(loaded.corpus_hash == cache.corpus_hash);
    REQUIRE(loaded.keys == cache.keys);
    for (uint64_t key : cache.keys) {
      const auto& a = cache.at(key);
      const auto& b = loaded.at(key);
      REQUIRE(a.atoms.size() == b.atoms.size());
      for (int j = 0; j < cache.dim; ++j)
        CHECK(b.graph_vec[j] == static_cast<double>(static_cast<float>(a.graph_vec[j])));
      for (size_t r = 0; r < a.atoms.size(); ++r)
        for (int j = 0; j < cache.dim; ++j)
          CHECK(b.atoms[r][j] == static_cast<double>(static_cast<float>(a.atoms[r][j])));
    }
  }

  SECTION("corrupt files are rejected") {
    TempFile tmp("cache_bad.bkte");
    {
      std::ofstream f(tmp.path, std::ios::binary);
      f << "NOTACACHE";
    }
    CHECK_THROWS_AS(load_teacher_cache(tmp.path), IoError);
    {
      std::stringstream buf;
      save_teacher_cache(cache, tmp.path);
      std::ifstream in(tmp.path, std::ios::binary);
      buf << in.rdbuf();
      std::string bytes = buf.str();
      std::ofstream f(tmp.path, std::ios::binary);
      f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_teacher_cache(tmp.path), IoError);
    CHECK_THROWS_AS(load_teacher_cache("/tmp/bridgekit_no_such_cache"), IoError);
  }

  SECTION("whitening refits deterministically from the cached training rows") {
    Whitening w1 = fit_graph_whitening(cache, cache.keys, 4);
    Whitening w2 = fit_graph_whitening(cache, cache.keys, 4);
    CHECK(w1.mean == w2.mean);
    CHECK(w1.proj == w2.proj);
    CHECK(w1.deficient_axes == w2.deficient_axes);

    Whitening wa = fit_atom_whitening(cache, cache.keys, 4);
    CHECK(wa.in_dim == 32);
    CHECK(wa.out_dim == 4);

    const ReactionRecord& rec = ds.records[0];
    TeacherTargets t = targets_for_record(rec, cache.at(rec.key), w1, &wa);
    double norm = 0;
    for (double x : t.graph_vec_r) norm += x * x;
    CHECK_THAT(norm, WithinAbs(1.0, 1e-9));

    Tensor direct = whitened_atom_targets(tcfg, rec.reactants, wa);
    REQUIRE(t.atom_vecs.rows == direct.rows);
    for (int s = 0; s < t.atom_vecs.rows; ++s)
      for (int j = 0; j < t.atom_vecs.cols; ++j) CHECK(t.atom_vecs.at(s, j) == direct.at(s, j));
  }
}
