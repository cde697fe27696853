#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "iclmol/synthetic.hpp"

using namespace iclmol;
using namespace iclmol::mol;
using namespace iclmol::mining;

TEST_CASE("noise-free labels are additive energy plus offset") {
  SyntheticTaskSpec spec;
  spec.noise = 0.0;
  const auto corpus = gen_synthetic(6, 20, spec, 42);
  CHECK(corpus.molecules.size() == 120);
  for (std::size_t p = 0; p < corpus.patterns.size(); ++p) {
    for (const auto& id : corpus.patterns[p].support) {
      const auto& m = *std::find_if(corpus.molecules.begin(), corpus.molecules.end(),
                                    [&](const Molecule& x) { return x.id == id; });
      CHECK(m.label_u0 == doctest::Approx(additive_energy(m, spec) + corpus.offsets[p]).epsilon(1e-12));
    }
  }
}

TEST_CASE("opposite offsets with zero energies give a gap of exactly 2") {
  SyntheticTaskSpec spec;
  spec.noise = 0.0;
  spec.atom_energy.clear();
  spec.bond_energy = {0, 0, 0, 0};
  spec.offsets = {1.0, -1.0};
  spec.holdout_fraction = 0.0;
  const auto corpus = gen_synthetic(2, 5, spec, 1);
  for (const auto& m : corpus.molecules) {
    const double expected = m.id.rfind("SP00", 0) == 0 ? 1.0 : -1.0;
    CHECK(m.label_u0 == expected);
  }
}

TEST_CASE("generated corpus is well-formed and split-consistent") {
  SyntheticTaskSpec spec;
  const auto corpus = gen_synthetic(20, 40, spec, 7);
  CHECK(corpus.patterns.size() == 20);
  CHECK(corpus.holdout_pattern_ids.size() == 4);
  std::map<std::string, const Molecule*> by_id;
  for (const auto& m : corpus.molecules) {
    m.validate();
    by_id[m.id] = &m;
    for (const auto& b : m.bonds) {
      const auto& a = m.atoms[b.i].position;
      const auto& c = m.atoms[b.j].position;
      const double d = std::hypot(a[0] - c[0], a[1] - c[1], a[2] - c[2]);
      CHECK(d > 1.0);
      CHECK(d < 1.7);
    }
  }
  std::set<std::string> holdout(corpus.holdout_pattern_ids.begin(), corpus.holdout_pattern_ids.end());
  for (std::size_t p = 0; p < corpus.patterns.size(); ++p) {
    const bool held = holdout.count(corpus.patterns[p].id) > 0;
    CHECK(held == (corpus.pattern_class[p] != OodClass::Base));
    for (const auto& id : corpus.patterns[p].support) CHECK(classify_ood(*by_id[id]) == corpus.pattern_class[p]);
  }
  CHECK_FALSE(corpus.contexts.empty());
  for (const auto& c : corpus.contexts) {
    const auto& p = *std::find_if(corpus.patterns.begin(), corpus.patterns.end(),
                                  [&](const Pattern& x) { return x.id == c.pattern_id; });
    CHECK_FALSE(check_context(c, p, corpus.molecules, spec.context_k).has_value());
  }
}

TEST_CASE("generation is deterministic and rejects a single pattern") {
  SyntheticTaskSpec spec;
  const auto a = gen_synthetic(5, 10, spec, 99);
  const auto b = gen_synthetic(5, 10, spec, 99);
  REQUIRE(a.molecules.size() == b.molecules.size());
  for (std::size_t i = 0; i < a.molecules.size(); ++i) CHECK(to_json_line(a.molecules[i]) == to_json_line(b.molecules[i]));
  CHECK(a.contexts == b.contexts);
  CHECK_THROWS_AS(gen_synthetic(1, 10, spec, 0), DataError);
}
