#include "iclmol/molgraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <utility>

namespace iclmol::mol {

using nlohmann::json;

void Molecule::validate() const {
  if (atoms.empty()) throw ValidationError(id, "molecule has no atoms");
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    const auto& atom = atoms[a];
    if (atom.element < 1 || atom.element > 118) {
      throw ValidationError(id, "atom " + std::to_string(a) + " has invalid atomic number " +
                                    std::to_string(atom.element));
    }
    for (double x : atom.position) {
      if (!std::isfinite(x)) throw ValidationError(id, "atom " + std::to_string(a) + " has a non-finite position");
    }
  }
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (std::size_t b = 0; b < bonds.size(); ++b) {
    const auto& bond = bonds[b];
    if (bond.i >= atoms.size() || bond.j >= atoms.size()) {
      throw ValidationError(id, "bond " + std::to_string(b) + " references atom outside [0," +
                                    std::to_string(atoms.size()) + ")");
    }
    if (bond.i == bond.j) throw ValidationError(id, "bond " + std::to_string(b) + " is a self-loop");
    if (!seen.insert(std::minmax(bond.i, bond.j)).second) {
      throw ValidationError(id, "bond " + std::to_string(b) + " duplicates an earlier bond");
    }
  }
  if (!std::isfinite(label_u0)) throw ValidationError(id, "label_u0 is not finite");
}

std::size_t Molecule::heavy_atom_count() const {
  return static_cast<std::size_t>(
      std::count_if(atoms.begin(), atoms.end(), [](const Atom& a) { return a.element != kHydrogen; }));
}

std::uint32_t LabeledGraph::add_node(int label) {
  labels_.push_back(label);
  adjacency_.emplace_back();
  return static_cast<std::uint32_t>(labels_.size() - 1);
}

void LabeledGraph::add_edge(std::uint32_t u, std::uint32_t v, int label) {
  if (u >= labels_.size() || v >= labels_.size()) throw DataError("edge endpoint out of range");
  if (u == v) throw DataError("self-loop edge");
  if (edge_label(u, v)) throw DataError("duplicate edge");
  const auto id = static_cast<std::uint32_t>(edges_.size());
  edges_.push_back({u, v, label});
  adjacency_[u].push_back({v, label, id});
  adjacency_[v].push_back({u, label, id});
}

std::optional<int> LabeledGraph::edge_label(std::uint32_t u, std::uint32_t v) const {
  for (const auto& n : adjacency_[u])
    if (n.node == v) return n.label;
  return std::nullopt;
}

std::size_t LabeledGraph::count_label(int label) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

std::string_view to_string(OodClass c) {
  switch (c) {
    case OodClass::Base: return "base";
    case OodClass::Ester: return "ester";
    case OodClass::Oxime: return "oxime";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// JSON-lines I/O

namespace {

BondOrder parse_order(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "ar") return BondOrder::Aromatic;
    throw std::invalid_argument("bond order string must be \"ar\"");
  }
  if (!j.is_number_integer()) throw std::invalid_argument("bond order must be 1, 2, 3 or \"ar\"");
  const auto o = j.get<int>();
  if (o < 1 || o > 3) throw std::invalid_argument("bond order must be 1, 2, 3 or \"ar\"");
  return static_cast<BondOrder>(o);
}

json order_json(BondOrder o) {
  if (o == BondOrder::Aromatic) return "ar";
  return static_cast<int>(o);
}

}  // namespace

Molecule parse_molecule_line(std::string_view line, const std::string& source, std::size_t line_no) {
  Molecule m;
  try {
    const json j = json::parse(line);
    if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
    m.id = j.at("id").get<std::string>();
    for (const auto& a : j.at("atoms")) {
      if (!a.is_array() || a.size() != 2 || !a[1].is_array() || a[1].size() != 3) {
        throw std::invalid_argument("atom must be [z, [x, y, z]]");
      }
      if (!a[0].is_number_integer()) throw std::invalid_argument("atomic number must be an integer");
      Atom atom;
      atom.element = a[0].get<int>();
      for (std::size_t k = 0; k < 3; ++k) {
        if (!a[1][k].is_number()) throw std::invalid_argument("coordinates must be numbers");
        atom.position[k] = a[1][k].get<double>();
      }
      m.atoms.push_back(atom);
    }
    for (const auto& b : j.at("bonds")) {
      if (!b.is_array() || b.size() != 3) throw std::invalid_argument("bond must be [i, j, order]");
      if (!b[0].is_number_integer() || !b[1].is_number_integer() || b[0].get<long long>() < 0 ||
          b[1].get<long long>() < 0) {
        throw std::invalid_argument("bond endpoints must be non-negative integers");
      }
      m.bonds.push_back({b[0].get<std::uint32_t>(), b[1].get<std::uint32_t>(), parse_order(b[2])});
    }
    const auto& label = j.at("label_u0");
    if (!label.is_number()) throw std::invalid_argument("label_u0 must be a number");
    m.label_u0 = label.get<double>();
  } catch (const json::exception& e) {
    throw ParseError(source, line_no, e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, line_no, e.what());
  }
  m.validate();
  return m;
}

std::vector<Molecule> parse_dataset(std::istream& is, const std::string& source) {
  std::vector<Molecule> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_molecule_line(line, source, line_no));
  }
  return out;
}

std::vector<Molecule> parse_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset '" + path.string() + "'");
  return parse_dataset(is, path.string());
}

std::string to_json_line(const Molecule& m) {
  json atoms = json::array();
  for (const auto& a : m.atoms) atoms.push_back({a.element, {a.position[0], a.position[1], a.position[2]}});
  json bonds = json::array();
  for (const auto& b : m.bonds) bonds.push_back({b.i, b.j, order_json(b.order)});
  json j;
  j["id"] = m.id;
  j["atoms"] = std::move(atoms);
  j["bonds"] = std::move(bonds);
  j["label_u0"] = m.label_u0;
  return j.dump();
}

void write_dataset(std::ostream& os, std::span<const Molecule> molecules) {
  for (const auto& m : molecules) os << to_json_line(m) << '\n';
}

void write_dataset(const std::filesystem::path& path, std::span<const Molecule> molecules) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  write_dataset(os, molecules);
}

// ---------------------------------------------------------------------------
// Graph views

LabeledGraph heavy_graph(const Molecule& m) {
  LabeledGraph g;
  std::vector<std::int64_t> remap(m.atoms.size(), -1);
  for (std::size_t a = 0; a < m.atoms.size(); ++a) {
    if (m.atoms[a].element == kHydrogen) continue;
    remap[a] = g.add_node(m.atoms[a].element);
  }
  if (g.node_count() == 0) throw DataError("molecule '" + m.id + "' has no heavy atoms");
  for (const auto& b : m.bonds) {
    if (remap[b.i] < 0 || remap[b.j] < 0) continue;
    g.add_edge(static_cast<std::uint32_t>(remap[b.i]), static_cast<std::uint32_t>(remap[b.j]),
               static_cast<int>(b.order));
  }
  return g;
}

LabeledGraph strip_hydrogens(const LabeledGraph& in) {
  LabeledGraph g;
  std::vector<std::int64_t> remap(in.node_count(), -1);
  for (std::uint32_t n = 0; n < in.node_count(); ++n) {
    if (in.node_label(n) == kHydrogen) continue;
    remap[n] = g.add_node(in.node_label(n));
  }
  for (const auto& e : in.edges()) {
    if (remap[e.u] < 0 || remap[e.v] < 0) continue;
    g.add_edge(static_cast<std::uint32_t>(remap[e.u]), static_cast<std::uint32_t>(remap[e.v]), e.label);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Subgraph matching

namespace {

struct PlanStep {
  std::uint32_t node = 0;
  std::int64_t parent = -1;  // earlier pattern node adjacent to this one
  int parent_edge = 0;
  std::vector<std::pair<std::uint32_t, int>> back;  // earlier neighbors and edge labels
};

std::vector<PlanStep> plan(const LabeledGraph& p, const LabeledGraph& t) {
  const auto n = static_cast<std::uint32_t>(p.node_count());
  std::vector<bool> placed(n, false);
  std::vector<std::size_t> rank(n, 0);  // number of placed neighbors
  std::vector<PlanStep> steps;
  steps.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    // Most constrained first: most placed neighbors, then rarest label in target, then degree.
    std::int64_t best = -1;
    for (std::uint32_t c = 0; c < n; ++c) {
      if (placed[c]) continue;
      if (best < 0) {
        best = c;
        continue;
      }
      const auto b = static_cast<std::uint32_t>(best);
      const auto key_c = std::make_tuple(rank[c], -static_cast<long>(t.count_label(p.node_label(c))), p.degree(c));
      const auto key_b = std::make_tuple(rank[b], -static_cast<long>(t.count_label(p.node_label(b))), p.degree(b));
      if (key_c > key_b) best = c;
    }
    const auto node = static_cast<std::uint32_t>(best);
    PlanStep step;
    step.node = node;
    for (const auto& nb : p.neighbors(node)) {
      if (!placed[nb.node]) continue;
      step.back.emplace_back(nb.node, nb.label);
      if (step.parent < 0) {
        step.parent = nb.node;
        step.parent_edge = nb.label;
      }
    }
    placed[node] = true;
    for (const auto& nb : p.neighbors(node)) ++rank[nb.node];
    steps.push_back(std::move(step));
  }
  return steps;
}

class Matcher {
 public:
  Matcher(const LabeledGraph& p, const LabeledGraph& t, MatchMode mode)
      : p_(p), t_(t), mode_(mode), steps_(plan(p, t)), map_(p.node_count(), 0), used_(t.node_count(), false) {}

  MatchResult run() {
    extend(0);
    return std::move(result_);
  }

 private:
  bool feasible(const PlanStep& s, std::uint32_t cand) const {
    if (used_[cand] || t_.node_label(cand) != p_.node_label(s.node)) return false;
    if (t_.degree(cand) < p_.degree(s.node)) return false;
    for (const auto& [q, label] : s.back) {
      const auto e = t_.edge_label(map_[q], cand);
      if (!e || *e != label) return false;
    }
    return true;
  }

  // Returns true to stop the search.
  bool extend(std::size_t depth) {
    if (depth == steps_.size()) {
      result_.found = true;
      ++result_.count;
      if (mode_ == MatchMode::All) result_.embeddings.push_back(map_);
      return mode_ == MatchMode::Exists;
    }
    const PlanStep& s = steps_[depth];
    auto try_candidate = [&](std::uint32_t cand) {
      if (!feasible(s, cand)) return false;
      map_[s.node] = cand;
      used_[cand] = true;
      const bool stop = extend(depth + 1);
      used_[cand] = false;
      return stop;
    };
    if (s.parent >= 0) {
      for (const auto& nb : t_.neighbors(map_[static_cast<std::size_t>(s.parent)])) {
        if (nb.label == s.parent_edge && try_candidate(nb.node)) return true;
      }
    } else {
      for (std::uint32_t c = 0; c < t_.node_count(); ++c)
        if (try_candidate(c)) return true;
    }
    return false;
  }

  const LabeledGraph& p_;
  const LabeledGraph& t_;
  MatchMode mode_;
  std::vector<PlanStep> steps_;
  std::vector<std::uint32_t> map_;
  std::vector<bool> used_;
  MatchResult result_;
};

}  // namespace

MatchResult subgraph_match(const LabeledGraph& pattern, const LabeledGraph& target, MatchMode mode) {
  if (pattern.node_count() > target.node_count() || pattern.edge_count() > target.edge_count()) {
    return {};
  }
  return Matcher(pattern, target, mode).run();
}

const LabeledGraph& ester_pattern() {
  static const LabeledGraph g = [] {
    LabeledGraph e;
    const auto c = e.add_node(kCarbon);
    const auto o_carbonyl = e.add_node(kOxygen);
    const auto o_ether = e.add_node(kOxygen);
    const auto c2 = e.add_node(kCarbon);
    e.add_edge(c, o_carbonyl, static_cast<int>(BondOrder::Double));
    e.add_edge(c, o_ether, static_cast<int>(BondOrder::Single));
    e.add_edge(o_ether, c2, static_cast<int>(BondOrder::Single));
    return e;
  }();
  return g;
}

OodClass classify_ood(const Molecule& m) {
  for (const auto& b : m.bonds) {
    const int zi = m.atoms[b.i].element;
    const int zj = m.atoms[b.j].element;
    if ((zi == kNitrogen && zj == kOxygen) || (zi == kOxygen && zj == kNitrogen)) return OodClass::Oxime;
  }
  if (m.heavy_atom_count() >= ester_pattern().node_count() && contains(heavy_graph(m), ester_pattern())) {
    return OodClass::Ester;
  }
  return OodClass::Base;
}

}  // namespace iclmol::mol
