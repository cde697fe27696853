#include <random>
#include <sstream>

#include "doctest.h"
#include "iclmol/molgraph.hpp"
#include "oracles.hpp"

using namespace iclmol;
using namespace iclmol::mol;

namespace {

// Heavy-atom skeletons with implicit geometry; positions are irrelevant here.
Molecule build(std::string id, std::vector<int> z, std::vector<std::tuple<int, int, int>> bonds) {
  Molecule m;
  m.id = std::move(id);
  double x = 0;
  for (int e : z) m.atoms.push_back({e, {x += 1.5, 0, 0}});
  for (auto [i, j, o] : bonds)
    m.bonds.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), static_cast<BondOrder>(o)});
  return m;
}

Molecule ethanol() {
  // C C O plus six hydrogens on the carbons and one on the oxygen.
  Molecule m = build("ethanol", {6, 6, 8, 1, 1, 1, 1, 1, 1}, {{0, 1, 1}, {1, 2, 1}, {0, 3, 1}, {0, 4, 1}, {0, 5, 1},
                                                                {1, 6, 1}, {1, 7, 1}, {2, 8, 1}});
  return m;
}

LabeledGraph graph_of(std::vector<int> labels, std::vector<std::tuple<int, int, int>> edges) {
  LabeledGraph g;
  for (int l : labels) g.add_node(l);
  for (auto [i, j, o] : edges) g.add_edge(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), o);
  return g;
}

}  // namespace

TEST_CASE("parse a single molecule line") {
  std::istringstream is(R"({"id":"m1","atoms":[[6,[0,0,0]],[1,[1.09,0,0]]],"bonds":[[0,1,1]],"label_u0":-17.2})");
  const auto ms = parse_dataset(is);
  REQUIRE(ms.size() == 1);
  CHECK(ms[0].id == "m1");
  CHECK(ms[0].atoms.size() == 2);
  CHECK(ms[0].label_u0 == -17.2);
}

TEST_CASE("empty dataset parses to nothing") {
  std::istringstream is("");
  CHECK(parse_dataset(is).empty());
}

TEST_CASE("bad bond endpoint is a validation error naming the molecule") {
  std::istringstream is(R"({"id":"bad","atoms":[[6,[0,0,0]],[1,[1,0,0]]],"bonds":[[0,5,1]],"label_u0":0})");
  try {
    parse_dataset(is);
    FAIL("expected validation error");
  } catch (const ValidationError& e) {
    CHECK(e.molecule_id() == "bad");
  }
}

TEST_CASE("malformed JSON reports the line number") {
  std::istringstream is("\n{\"id\":\"a\",\"atoms\":[[6,[0,0,0]]],\"bonds\":[],\"label_u0\":1}\n{oops\n");
  try {
    parse_dataset(is, "data.jsonl");
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("data.jsonl:3") != std::string::npos);
  }
}

TEST_CASE("dataset round trip keeps aromatic labels") {
  auto benzene = build("bz", {6, 6, 6, 6, 6, 6}, {{0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 4, 4}, {4, 5, 4}, {5, 0, 4}});
  benzene.label_u0 = -1.25;
  std::ostringstream os;
  write_dataset(os, std::vector<Molecule>{benzene});
  CHECK(os.str().find("\"ar\"") != std::string::npos);
  std::istringstream is(os.str());
  const auto back = parse_dataset(is);
  REQUIRE(back.size() == 1);
  CHECK(back[0].bonds[3].order == BondOrder::Aromatic);
  CHECK(back[0].label_u0 == -1.25);
}

TEST_CASE("heavy graph views") {
  const auto eth = heavy_graph(ethanol());
  CHECK(eth.node_count() == 3);
  CHECK(eth.edge_count() == 2);
  CHECK(strip_hydrogens(eth).node_count() == 3);

  auto methane = build("ch4", {6, 1, 1, 1, 1}, {{0, 1, 1}, {0, 2, 1}, {0, 3, 1}, {0, 4, 1}});
  const auto g = heavy_graph(methane);
  CHECK(g.node_count() == 1);
  CHECK(g.edge_count() == 0);

  auto benzene = build("bz", {6, 6, 6, 6, 6, 6}, {{0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 4, 4}, {4, 5, 4}, {5, 0, 4}});
  const auto bz = heavy_graph(benzene);
  CHECK(bz.node_count() == 6);
  CHECK(bz.edge_count() == 6);
  for (const auto& e : bz.edges()) CHECK(e.label == 4);

  CHECK_THROWS_AS(heavy_graph(build("h2", {1, 1}, {{0, 1, 1}})), DataError);
}

TEST_CASE("subgraph match basic cases") {
  const auto eth = heavy_graph(ethanol());
  CHECK(contains(eth, graph_of({6, 8}, {{0, 1, 1}})));
  CHECK_FALSE(contains(eth, graph_of({7, 8}, {{0, 1, 1}})));
  const auto ring = graph_of({6, 6, 6, 6, 6, 6}, {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {3, 4, 1}, {4, 5, 1}, {5, 0, 1}});
  const auto cc = graph_of({6, 6}, {{0, 1, 1}});
  CHECK(subgraph_match(cc, ring, MatchMode::Count).count == oracle::count_monomorphisms(cc, ring));
  CHECK(subgraph_match(cc, ring, MatchMode::Count).count == 12);
  const auto all = subgraph_match(cc, ring, MatchMode::All);
  CHECK(all.embeddings.size() == 12);
}

TEST_CASE("subgraph match agrees with brute force on random graphs") {
  std::mt19937_64 rng(2024);
  const std::vector<int> labels{6, 6, 7, 8};
  const std::vector<int> orders{1, 2};
  for (int trial = 0; trial < 300; ++trial) {
    const auto tn = 2 + rng() % 7;
    const auto pn = 1 + rng() % std::min<std::size_t>(tn, 4);
    const auto target = oracle::random_connected_graph(tn, labels, orders, 0.2, rng);
    const auto pattern = oracle::random_connected_graph(pn, labels, orders, 0.1, rng);
    const auto brute = oracle::count_monomorphisms(pattern, target);
    CHECK(subgraph_match(pattern, target, MatchMode::Exists).found == (brute > 0));
    CHECK(subgraph_match(pattern, target, MatchMode::Count).count == brute);
  }
}

TEST_CASE("ood classification") {
  // CH3-CH=N-OH
  const auto oxime = build("oxime", {6, 6, 7, 8}, {{0, 1, 1}, {1, 2, 2}, {2, 3, 1}});
  // CH3-C(=O)-O-CH3
  const auto ester = build("ester", {6, 6, 8, 8, 6}, {{0, 1, 1}, {1, 2, 2}, {1, 3, 1}, {3, 4, 1}});
  // CH3-NH-OH
  const auto hydroxylamine = build("nhoh", {6, 7, 8}, {{0, 1, 1}, {1, 2, 1}});
  const auto propane = build("propane", {6, 6, 6}, {{0, 1, 1}, {1, 2, 1}});
  // Ester plus an N-O bond: N-O wins.
  const auto both = build("both", {6, 6, 8, 8, 6, 7, 8},
                          {{0, 1, 1}, {1, 2, 2}, {1, 3, 1}, {3, 4, 1}, {4, 5, 1}, {5, 6, 1}});
  CHECK(classify_ood(oxime) == OodClass::Oxime);
  CHECK(classify_ood(ester) == OodClass::Ester);
  CHECK(classify_ood(hydroxylamine) == OodClass::Oxime);
  CHECK(classify_ood(propane) == OodClass::Base);
  CHECK(classify_ood(both) == OodClass::Oxime);
  CHECK(to_string(OodClass::Ester) == "ester");
}
