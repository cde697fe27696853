#include "iclmol/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

namespace iclmol::mining {

using mol::Atom;
using mol::Bond;
using mol::BondOrder;
using mol::Molecule;
using mol::OodClass;

namespace {

constexpr std::array<int, 5> kHetero{7, 8, 9, 16, 17};
constexpr std::size_t kMaxAttempts = 20000;

int valence(int z) {
  switch (z) {
    case 6: return 4;
    case 7: return 3;
    case 8:
    case 16: return 2;
    default: return 1;
  }
}

double bond_length(BondOrder o) {
  switch (o) {
    case BondOrder::Single: return 1.50;
    case BondOrder::Double: return 1.34;
    case BondOrder::Triple: return 1.20;
    case BondOrder::Aromatic: return 1.40;
  }
  return 1.5;
}

/// Heavy-atom topology under construction (always a tree).
struct Skeleton {
  std::vector<int> z;
  std::vector<Bond> bonds;
  std::vector<int> free;

  std::uint32_t add_atom(int element) {
    z.push_back(element);
    free.push_back(valence(element));
    return static_cast<std::uint32_t>(z.size() - 1);
  }
  bool bond(std::uint32_t i, std::uint32_t j, BondOrder o) {
    const int w = static_cast<int>(o);
    if (free[i] < w || free[j] < w) return false;
    free[i] -= w;
    free[j] -= w;
    bonds.push_back({i, j, o});
    return true;
  }
  int total_free() const {
    int s = 0;
    for (int f : free) s += f;
    return s;
  }
  std::vector<int> hetero_key() const {
    std::vector<int> k;
    for (int e : z)
      if (e != mol::kCarbon) k.push_back(e);
    std::sort(k.begin(), k.end());
    return k;
  }
  Molecule as_molecule() const {
    Molecule m;
    m.id = "core";
    for (int e : z) m.atoms.push_back({e, {0, 0, 0}});
    m.bonds = bonds;
    return m;
  }
};

template <class Rng>
std::size_t pick(std::size_t n, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

template <class Rng>
bool coin(double p, Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

/// Attaches a new atom to a random existing atom with spare valence.
template <class Rng>
bool attach(Skeleton& s, int element, Rng& rng, const std::vector<std::uint32_t>& allowed = {}) {
  std::vector<std::uint32_t> hosts;
  for (std::uint32_t a = 0; a < s.z.size(); ++a) {
    if (s.free[a] < 1) continue;
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), a) == allowed.end()) continue;
    hosts.push_back(a);
  }
  if (hosts.empty() || valence(element) < 1) return false;
  const auto host = hosts[pick(hosts.size(), rng)];
  BondOrder o = BondOrder::Single;
  if (s.free[host] >= 2 && valence(element) >= 2 && coin(0.25, rng)) o = BondOrder::Double;
  const auto a = s.add_atom(element);
  return s.bond(host, a, o);
}

template <class Rng>
Skeleton base_core(Rng& rng) {
  Skeleton s;
  const std::size_t n = 2 + pick(4, rng);
  const std::size_t carbons = std::min<std::size_t>(pick(3, rng), n - 1);
  std::vector<int> elems(carbons, mol::kCarbon);
  while (elems.size() < n) elems.push_back(kHetero[pick(kHetero.size(), rng)]);
  std::shuffle(elems.begin(), elems.end(), rng);
  // Start from the highest-valence atom so the tree can grow.
  std::stable_sort(elems.begin(), elems.end(), [](int a, int b) { return valence(a) > valence(b); });
  s.add_atom(elems[0]);
  for (std::size_t i = 1; i < n; ++i)
    if (!attach(s, elems[i], rng)) return {};
  return s;
}

template <class Rng>
Skeleton ester_core(Rng& rng) {
  Skeleton s;
  const auto c = s.add_atom(mol::kCarbon);
  const auto o1 = s.add_atom(mol::kOxygen);
  const auto o2 = s.add_atom(mol::kOxygen);
  const auto c2 = s.add_atom(mol::kCarbon);
  s.bond(c, o1, BondOrder::Double);
  s.bond(c, o2, BondOrder::Single);
  s.bond(o2, c2, BondOrder::Single);
  const std::size_t extra = pick(3, rng);
  static constexpr std::array<int, 4> kAllowed{7, 9, 16, 17};
  for (std::size_t i = 0; i < extra; ++i)
    if (!attach(s, kAllowed[pick(kAllowed.size(), rng)], rng, {c, c2})) return {};
  return s;
}

template <class Rng>
Skeleton oxime_core(Rng& rng) {
  Skeleton s;
  const auto n = s.add_atom(mol::kNitrogen);
  const auto o = s.add_atom(mol::kOxygen);
  switch (pick(3, rng)) {
    case 0:
      s.bond(n, o, BondOrder::Single);
      break;
    case 1: {
      const auto c = s.add_atom(mol::kCarbon);
      s.bond(c, n, BondOrder::Double);
      s.bond(n, o, BondOrder::Single);
      break;
    }
    default: {
      const auto c = s.add_atom(mol::kCarbon);
      s.bond(c, n, BondOrder::Single);
      s.bond(n, o, BondOrder::Single);
      break;
    }
  }
  const std::size_t extra = pick(3, rng);
  for (std::size_t i = 0; i < extra; ++i)
    if (!attach(s, kHetero[pick(kHetero.size(), rng)], rng)) return {};
  return s;
}

template <class Rng>
std::array<double, 3> random_unit(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    std::array<double, 3> v{g(rng), g(rng), g(rng)};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-8) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

/// Places atoms along the tree with jittered bond lengths, keeping non-bonded
/// atoms at least 2.3 Å apart where possible.
template <class Rng>
std::vector<std::array<double, 3>> embed(const Skeleton& s, double jitter, Rng& rng) {
  const std::size_t n = s.z.size();
  std::vector<std::vector<std::pair<std::uint32_t, BondOrder>>> adj(n);
  for (const auto& b : s.bonds) {
    adj[b.i].emplace_back(b.j, b.order);
    adj[b.j].emplace_back(b.i, b.order);
  }
  std::vector<std::array<double, 3>> pos(n, {0, 0, 0});
  std::vector<bool> placed(n, false);
  placed[0] = true;
  std::vector<std::uint32_t> queue{0};
  std::normal_distribution<double> jit(0.0, jitter);
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const auto p = queue[q];
    for (const auto& [c, order] : adj[p]) {
      if (placed[c]) continue;
      const double len = bond_length(order) + std::clamp(jit(rng), -3 * jitter, 3 * jitter);
      std::array<double, 3> best{};
      double best_clear = -1;
      for (int attempt = 0; attempt < 64; ++attempt) {
        const auto u = random_unit(rng);
        const std::array<double, 3> cand{pos[p][0] + len * u[0], pos[p][1] + len * u[1], pos[p][2] + len * u[2]};
        double clear = 1e9;
        for (std::uint32_t o = 0; o < n; ++o) {
          if (!placed[o] || o == p) continue;
          const double dx = cand[0] - pos[o][0], dy = cand[1] - pos[o][1], dz = cand[2] - pos[o][2];
          clear = std::min(clear, std::sqrt(dx * dx + dy * dy + dz * dz));
        }
        if (clear > best_clear) {
          best_clear = clear;
          best = cand;
        }
        if (clear >= 2.3) break;
      }
      pos[c] = best;
      placed[c] = true;
      queue.push_back(c);
    }
  }
  return pos;
}

}  // namespace

double additive_energy(const Molecule& m, const SyntheticTaskSpec& spec) {
  double e = 0;
  for (const auto& a : m.atoms) {
    auto it = spec.atom_energy.find(a.element);
    if (it != spec.atom_energy.end()) e += it->second;
  }
  for (const auto& b : m.bonds) e += spec.bond_energy[static_cast<std::size_t>(b.order) - 1];
  return e;
}

SyntheticCorpus gen_synthetic(std::size_t n_patterns, std::size_t molecules_per_pattern, const SyntheticTaskSpec& spec,
                              std::uint64_t seed) {
  if (n_patterns < 2) throw DataError("gen_synthetic: need at least 2 patterns");
  if (!spec.offsets.empty() && spec.offsets.size() != n_patterns) {
    throw DataError("gen_synthetic: offsets must list one value per pattern");
  }
  std::mt19937_64 rng(seed);
  const auto n_hold = std::min<std::size_t>(
      static_cast<std::size_t>(std::lround(static_cast<double>(n_patterns) * spec.holdout_fraction)), n_patterns - 1);
  const std::size_t n_ester = (n_hold + 1) / 2;
  const std::size_t n_base = n_patterns - n_hold;

  SyntheticCorpus out;
  std::set<std::vector<int>> used_keys;
  // Held-out cores draw from the scarcer motif keys, so they are placed first.
  std::vector<Skeleton> cores(n_patterns);
  out.pattern_class.resize(n_patterns);
  for (std::size_t g = 0; g < n_patterns; ++g) {
    const std::size_t p = g < n_hold ? n_base + g : g - n_hold;
    const OodClass want = p < n_base ? OodClass::Base : (p < n_base + n_ester ? OodClass::Ester : OodClass::Oxime);
    bool ok = false;
    for (std::size_t attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      Skeleton s = want == OodClass::Base ? base_core(rng) : (want == OodClass::Ester ? ester_core(rng) : oxime_core(rng));
      if (s.z.size() < 2 || s.total_free() < 1) continue;
      if (used_keys.count(s.hetero_key())) continue;
      if (mol::classify_ood(s.as_molecule()) != want) continue;
      used_keys.insert(s.hetero_key());
      cores[p] = std::move(s);
      ok = true;
    }
    if (!ok) throw DataError("gen_synthetic: could not find " + std::to_string(n_patterns) + " distinct pattern cores");
    out.pattern_class[p] = want;
  }

  std::uniform_real_distribution<double> mag(spec.offset_scale, 2.0 * spec.offset_scale);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t p = 0; p < n_patterns; ++p) {
    if (!spec.offsets.empty()) {
      out.offsets.push_back(spec.offsets[p]);
    } else {
      const double m = mag(rng);
      out.offsets.push_back(coin(0.5, rng) ? m : -m);
    }
  }

  for (std::size_t p = 0; p < n_patterns; ++p) {
    char pid[32];
    std::snprintf(pid, sizeof pid, "SP%02zu", p);
    Pattern pattern;
    pattern.id = pid;
    for (int e : cores[p].z) pattern.graph.add_node(e);
    for (const auto& b : cores[p].bonds) pattern.graph.add_edge(b.i, b.j, static_cast<int>(b.order));
    for (std::size_t k = 0; k < molecules_per_pattern; ++k) {
      Skeleton s;
      bool ok = false;
      for (std::size_t attempt = 0; attempt < 200 && !ok; ++attempt) {
        s = cores[p];
        const std::size_t extra = pick(spec.max_extra_carbons + 1, rng);
        for (std::size_t c = 0; c < extra; ++c) {
          if (!attach(s, mol::kCarbon, rng)) break;
        }
        ok = mol::classify_ood(s.as_molecule()) == out.pattern_class[p];
      }
      if (!ok) s = cores[p];
      Molecule m;
      char mid[64];
      std::snprintf(mid, sizeof mid, "%s-%03zu", pid, k);
      m.id = mid;
      const auto pos = embed(s, spec.bond_jitter, rng);
      for (std::size_t a = 0; a < s.z.size(); ++a) m.atoms.push_back(Atom{s.z[a], pos[a]});
      m.bonds = s.bonds;
      m.label_u0 = additive_energy(m, spec) + out.offsets[p] + spec.noise * noise(rng);
      m.validate();
      pattern.support.push_back(m.id);
      out.molecules.push_back(std::move(m));
    }
    if (out.pattern_class[p] != OodClass::Base) out.holdout_pattern_ids.push_back(pattern.id);
    out.patterns.push_back(std::move(pattern));
  }

  ContextOptions copts;
  copts.k = spec.context_k;
  copts.max_per_pattern = spec.max_contexts_per_pattern;
  copts.max_extra_carbons = spec.max_extra_carbons;
  copts.seed = seed;
  out.contexts = build_contexts(out.patterns, out.molecules, copts);
  return out;
}

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  mol::write_dataset(dir / "dataset.jsonl", corpus.molecules);
  write_patterns(dir / "patterns.jsonl", corpus.patterns);
  write_contexts(dir / "contexts.jsonl", corpus.contexts);
  std::map<std::string, mol::OodClass> cls;
  for (std::size_t p = 0; p < corpus.patterns.size(); ++p) cls[corpus.patterns[p].id] = corpus.pattern_class[p];
  for (const auto c : {mol::OodClass::Base, mol::OodClass::Ester, mol::OodClass::Oxime}) {
    std::vector<ContextSequence> part;
    for (const auto& ctx : corpus.contexts)
      if (cls.at(ctx.pattern_id) == c) part.push_back(ctx);
    write_contexts(dir / ("contexts_" + std::string(mol::to_string(c)) + ".jsonl"), part);
  }
  nlohmann::json j;
  j["holdout_pattern_ids"] = corpus.holdout_pattern_ids;
  nlohmann::json offsets = nlohmann::json::object();
  for (std::size_t p = 0; p < corpus.patterns.size(); ++p) offsets[corpus.patterns[p].id] = corpus.offsets[p];
  j["offsets"] = std::move(offsets);
  std::ofstream os(dir / "holdout.json");
  if (!os) throw DataError("cannot write holdout.json in '" + dir.string() + "'");
  os << j.dump(2) << '\n';
}

}  // namespace iclmol::mining
