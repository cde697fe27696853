#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "iclmol/mining.hpp"
#include "oracles.hpp"

using namespace iclmol;
using namespace iclmol::mol;
using namespace iclmol::mining;

namespace {

Molecule chain(std::string id, std::vector<int> z, std::vector<int> orders = {}) {
  Molecule m;
  m.id = std::move(id);
  for (std::size_t i = 0; i < z.size(); ++i) m.atoms.push_back({z[i], {1.5 * static_cast<double>(i), 0, 0}});
  for (std::uint32_t i = 1; i < z.size(); ++i) {
    const int o = orders.empty() ? 1 : orders[i - 1];
    m.bonds.push_back({i - 1, i, static_cast<BondOrder>(o)});
  }
  return m;
}

// Carbon chain hanging off a fixed core, to make context candidates.
Molecule decorated(std::string id, std::size_t extra, int hetero = 8) {
  std::vector<int> z{hetero, 6};
  for (std::size_t i = 0; i < extra; ++i) z.push_back(6);
  return chain(std::move(id), z);
}

LabeledGraph co_pattern() {
  LabeledGraph g;
  g.add_node(6);
  g.add_node(8);
  g.add_edge(0, 1, 1);
  return g;
}

}  // namespace

TEST_CASE("min dfs code is canonical under relabeling") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = oracle::random_connected_graph(2 + rng() % 6, {6, 7, 8}, {1, 2}, 0.25, rng);
    std::vector<std::uint32_t> perm(g.node_count());
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    LabeledGraph h;
    std::vector<std::uint32_t> inv(perm.size());
    for (std::uint32_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    for (std::uint32_t i = 0; i < perm.size(); ++i) h.add_node(g.node_label(perm[i]));
    for (const auto& e : g.edges()) h.add_edge(inv[e.u], inv[e.v], e.label);
    const auto code = min_dfs_code(g);
    CHECK(code == min_dfs_code(h));
    CHECK(is_min_code(code));
    CHECK(oracle::isomorphic(graph_from_code(code), g));
  }
}

TEST_CASE("mining finds C-O in small alcohols and ethers") {
  std::vector<LabeledGraph> gs{heavy_graph(chain("ethanol", {6, 6, 8})), heavy_graph(chain("methanol", {6, 8})),
                               heavy_graph(chain("dme", {6, 8, 6}))};
  MiningOptions opts;
  opts.min_support = 2;
  const auto found = mine_frequent(gs, opts);
  bool saw_co = false;
  for (const auto& p : found) {
    if (oracle::isomorphic(p.graph, co_pattern())) {
      saw_co = true;
      CHECK(p.support.size() == 3);
    }
  }
  CHECK(saw_co);
}

TEST_CASE("mining edge cases") {
  MiningOptions opts;
  opts.min_support = 2;
  std::vector<LabeledGraph> alkanes{heavy_graph(chain("a", {6, 6, 6})), heavy_graph(chain("b", {6, 6, 6, 6}))};
  CHECK(mine_frequent(alkanes, opts).empty());
  std::vector<LabeledGraph> single{heavy_graph(chain("e", {6, 6, 8}))};
  CHECK(mine_frequent(single, opts).empty());
  opts.min_support = 1;
  CHECK_THROWS_AS(mine_frequent(single, opts), DataError);
}

TEST_CASE("mining matches brute force on random corpora") {
  std::mt19937_64 rng(77);
  for (int corpus_i = 0; corpus_i < 10; ++corpus_i) {
    std::vector<LabeledGraph> corpus;
    const auto n = 3 + rng() % 6;
    for (std::size_t i = 0; i < n; ++i)
      corpus.push_back(oracle::random_connected_graph(2 + rng() % 6, {6, 6, 7, 8}, {1, 2}, 0.15, rng));
    MiningOptions opts;
    opts.min_support = 2;
    const auto mined = mine_frequent(corpus, opts);
    const auto brute = oracle::frequent_subgraphs(corpus, 2, 2, 1, 2);
    REQUIRE(mined.size() == brute.size());
    for (const auto& m : mined) {
      const auto it = std::find_if(brute.begin(), brute.end(),
                                   [&](const oracle::FrequentClass& c) { return oracle::isomorphic(c.graph, m.graph); });
      REQUIRE(it != brute.end());
      CHECK(it->support == m.support);
    }
  }
}

TEST_CASE("mined patterns respect constraints and thread count does not change output") {
  std::mt19937_64 rng(5);
  std::vector<LabeledGraph> corpus;
  for (int i = 0; i < 8; ++i) corpus.push_back(oracle::random_connected_graph(7, {6, 7, 8}, {1, 2}, 0.1, rng));
  MiningOptions opts;
  opts.min_support = 2;
  const auto one = mine_frequent(corpus, opts);
  opts.threads = 3;
  const auto three = mine_frequent(corpus, opts);
  REQUIRE(one.size() == three.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].code == three[i].code);
    CHECK(one[i].support == three[i].support);
    CHECK(satisfies(one[i].graph, opts.constraints));
  }
}

TEST_CASE("context counts follow floor(n/k) with a cap") {
  auto run = [](std::size_t n_candidates, std::size_t max_per) {
    std::vector<Molecule> ms;
    for (std::size_t i = 0; i < n_candidates; ++i) ms.push_back(decorated("m" + std::to_string(i), i % 7));
    Pattern p{"P0000", co_pattern(), {}};
    ContextOptions o;
    o.max_per_pattern = max_per;
    o.seed = 3;
    return build_contexts(std::vector<Pattern>{p}, ms, o);
  };
  CHECK(run(25, 15).size() == 2);
  CHECK(run(9, 15).empty());
  CHECK(run(200, 15).size() == 15);

  const auto cs = run(200, 15);
  std::set<std::string> used;
  for (const auto& c : cs) {
    CHECK(c.molecule_ids.size() == 10);
    for (const auto& id : c.molecule_ids) CHECK(used.insert(id).second);
  }
  CHECK(cs == run(200, 15));
}

TEST_CASE("candidates exclude extra heteroatoms and too many carbons") {
  const auto p = co_pattern();
  CHECK(is_candidate(heavy_graph(decorated("ok", 6)), p, 6));
  CHECK_FALSE(is_candidate(heavy_graph(decorated("long", 7)), p, 6));
  CHECK_FALSE(is_candidate(heavy_graph(chain("n", {8, 6, 7})), p, 6));
}

TEST_CASE("contexts never mix ood classes and re-check clean") {
  std::vector<Molecule> ms;
  // Same C-O pattern in base alcohols and in esters.
  for (int i = 0; i < 12; ++i) ms.push_back(decorated("base" + std::to_string(i), i % 4));
  for (int i = 0; i < 12; ++i) {
    auto m = chain("est" + std::to_string(i), {6, 6, 8, 6}, {1, 1, 1});
    m.atoms.push_back({8, {0, 2, 0}});
    m.bonds.push_back({1, 4, BondOrder::Double});
    for (int c = 0; c < i % 3; ++c) {
      m.atoms.push_back({6, {5.0 + c, 1, 0}});
      m.bonds.push_back({static_cast<std::uint32_t>(c == 0 ? 3 : m.atoms.size() - 2),
                         static_cast<std::uint32_t>(m.atoms.size() - 1), BondOrder::Single});
    }
    REQUIRE(classify_ood(m) == OodClass::Ester);
    ms.push_back(m);
  }
  // Pattern must allow both: C–O with ≤6 extra carbons. Esters carry an extra O, so use O=C–O.
  Pattern p{"P0001", co_pattern(), {}};
  ContextOptions o;
  o.k = 4;
  const auto cs = build_contexts(std::vector<Pattern>{p}, ms, o);
  CHECK_FALSE(cs.empty());
  for (const auto& c : cs) {
    std::set<OodClass> classes;
    for (const auto& id : c.molecule_ids) {
      const auto it = std::find_if(ms.begin(), ms.end(), [&](const Molecule& m) { return m.id == id; });
      classes.insert(classify_ood(*it));
    }
    CHECK(classes.size() == 1);
    CHECK_FALSE(check_context(c, p, ms, 4).has_value());
  }
}

TEST_CASE("pattern and context files round trip") {
  std::vector<Pattern> ps{{"P0000", co_pattern(), {"a", "b"}}};
  std::stringstream ss;
  write_patterns(ss, ps);
  const auto back = read_patterns(ss);
  REQUIRE(back.size() == 1);
  CHECK(back[0].id == "P0000");
  CHECK(back[0].support == ps[0].support);
  CHECK(oracle::isomorphic(back[0].graph, ps[0].graph));

  std::vector<ContextSequence> cs{{"P0000", {"a", "b", "c"}}};
  std::stringstream cs_stream;
  write_contexts(cs_stream, cs);
  CHECK(read_contexts(cs_stream) == cs);

  std::stringstream broken("{\"pattern_id\": 3}\n");
  CHECK_THROWS_AS(read_contexts(broken), ParseError);
}
