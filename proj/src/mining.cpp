#include "iclmol/mining.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>
#include <set>
#include <thread>
#include <tuple>

namespace iclmol::mining {

using mol::LabeledGraph;
using nlohmann::json;

bool extension_less(const DfsEdge& a, const DfsEdge& b) {
  const bool ab = !a.forward();
  const bool bb = !b.forward();
  if (ab && bb) {
    if (a.from != b.from) return a.from < b.from;
    if (a.to != b.to) return a.to < b.to;
    return a.edge_label < b.edge_label;
  }
  if (ab != bb) {
    // backward (i1,j1) < forward (i2,j2) iff i1 < j2; forward < backward iff j1 <= i2
    return ab ? a.from < b.to : a.to <= b.from;
  }
  if (a.to != b.to) return a.to < b.to;
  if (a.from != b.from) return a.from > b.from;
  return std::tie(a.from_label, a.edge_label, a.to_label) < std::tie(b.from_label, b.edge_label, b.to_label);
}

bool code_less(const DfsCode& a, const DfsCode& b) {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] == b[i]) continue;
    return extension_less(a[i], b[i]);
  }
  return a.size() < b.size();
}

LabeledGraph graph_from_code(const DfsCode& code) {
  LabeledGraph g;
  auto ensure = [&g](std::uint32_t idx, int label) {
    while (g.node_count() <= idx) g.add_node(label);
  };
  for (const auto& e : code) {
    ensure(e.from, e.from_label);
    ensure(e.to, e.to_label);
    g.add_edge(e.from, e.to, e.edge_label);
  }
  return g;
}

namespace {

/// Rightmost path as DFS vertex indices from root to rightmost vertex.
std::vector<std::uint32_t> rightmost_path(const DfsCode& code) {
  std::vector<std::uint32_t> path;
  std::int64_t old_from = -1;
  for (std::size_t i = code.size(); i-- > 0;) {
    const auto& e = code[i];
    if (e.forward() && (path.empty() || static_cast<std::int64_t>(e.to) == old_from)) {
      if (path.empty()) path.push_back(e.to);
      path.push_back(e.from);
      old_from = e.from;
    }
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::uint32_t vertex_count(const DfsCode& code) {
  std::uint32_t n = 0;
  for (const auto& e : code) n = std::max({n, e.from + 1, e.to + 1});
  return n;
}

struct Embedding {
  std::uint32_t graph = 0;
  std::vector<std::uint32_t> map;  // DFS vertex -> graph node
  std::vector<bool> used;          // graph edges already in the code
};

struct ExtLess {
  bool operator()(const DfsEdge& a, const DfsEdge& b) const { return extension_less(a, b); }
};

using Extensions = std::map<DfsEdge, std::vector<Embedding>, ExtLess>;

/// Rightmost extensions of one embedding, each passed to emit(edge, graph node
/// of the new vertex or -1 for backward edges, graph edge id).
template <class Emit>
void for_each_extension(const LabeledGraph& g, const Embedding& emb, const std::vector<std::uint32_t>& rmpath,
                        std::uint32_t n_vertices, Emit&& emit) {
  std::vector<std::int64_t> inv(g.node_count(), -1);
  for (std::uint32_t v = 0; v < emb.map.size(); ++v) inv[emb.map[v]] = v;
  std::vector<bool> on_path(n_vertices, false);
  for (auto v : rmpath) on_path[v] = true;
  const std::uint32_t r = rmpath.back();
  for (const auto& nb : g.neighbors(emb.map[r])) {
    if (emb.used[nb.edge]) continue;
    const auto w = inv[nb.node];
    if (w >= 0 && on_path[static_cast<std::size_t>(w)]) {
      emit(DfsEdge{r, static_cast<std::uint32_t>(w), g.node_label(emb.map[r]), nb.label, g.node_label(nb.node)}, -1,
           nb.edge);
    }
  }
  for (std::size_t k = rmpath.size(); k-- > 0;) {
    const auto v = rmpath[k];
    for (const auto& nb : g.neighbors(emb.map[v])) {
      if (inv[nb.node] >= 0) continue;
      emit(DfsEdge{v, n_vertices, g.node_label(emb.map[v]), nb.label, g.node_label(nb.node)},
           static_cast<std::int64_t>(nb.node), nb.edge);
    }
  }
}

Embedding extend_embedding(const Embedding& e, std::int64_t new_node, std::uint32_t edge) {
  Embedding out = e;
  out.used[edge] = true;
  if (new_node >= 0) out.map.push_back(static_cast<std::uint32_t>(new_node));
  return out;
}

/// Builds the minimum DFS code of g. With a reference code, stops as soon as a
/// smaller code is found and reports whether reference is minimal.
struct MinCodeOutcome {
  DfsCode code;
  bool reference_is_min = true;
};

MinCodeOutcome min_code_impl(const LabeledGraph& g, const DfsCode* reference) {
  MinCodeOutcome out;
  if (g.edge_count() == 0) return out;
  std::vector<Embedding> states;
  {
    std::optional<DfsEdge> best;
    for (std::uint32_t eid = 0; eid < g.edge_count(); ++eid) {
      const auto& e = g.edges()[eid];
      for (auto [u, v] : {std::pair{e.u, e.v}, std::pair{e.v, e.u}}) {
        DfsEdge cand{0, 1, g.node_label(u), e.label, g.node_label(v)};
        if (!best || extension_less(cand, *best)) {
          best = cand;
          states.clear();
        }
        if (cand == *best) {
          Embedding emb{0, {u, v}, std::vector<bool>(g.edge_count(), false)};
          emb.used[eid] = true;
          states.push_back(std::move(emb));
        }
      }
    }
    out.code.push_back(*best);
    if (reference) {
      if (extension_less(*best, (*reference)[0])) {
        out.reference_is_min = false;
        return out;
      }
    }
  }
  while (out.code.size() < g.edge_count()) {
    const auto rmpath = rightmost_path(out.code);
    const auto n = vertex_count(out.code);
    std::optional<DfsEdge> best;
    std::vector<Embedding> next;
    for (const auto& s : states) {
      for_each_extension(g, s, rmpath, n, [&](const DfsEdge& ext, std::int64_t new_node, std::uint32_t edge) {
        if (!best || extension_less(ext, *best)) {
          best = ext;
          next.clear();
        }
        if (ext == *best) next.push_back(extend_embedding(s, new_node, edge));
      });
    }
    if (!best) break;  // disconnected graph
    if (reference) {
      const auto& want = (*reference)[out.code.size()];
      if (extension_less(*best, want)) {
        out.reference_is_min = false;
        return out;
      }
    }
    out.code.push_back(*best);
    states = std::move(next);
  }
  return out;
}

std::size_t count_carbons(const DfsCode& code) {
  std::set<std::uint32_t> seen;
  std::size_t n = 0;
  for (const auto& e : code) {
    if (seen.insert(e.from).second && e.from_label == mol::kCarbon) ++n;
    if (seen.insert(e.to).second && e.to_label == mol::kCarbon) ++n;
  }
  return n;
}

std::size_t support_of(const std::vector<Embedding>& embs) {
  std::size_t n = 0;
  std::int64_t last = -1;
  for (const auto& e : embs) {
    if (static_cast<std::int64_t>(e.graph) != last) {
      ++n;
      last = e.graph;
    }
  }
  return n;
}

class Miner {
 public:
  Miner(std::span<const LabeledGraph> graphs, const MiningOptions& opts) : graphs_(graphs), opts_(opts) {}

  void grow(DfsCode& code, const std::vector<Embedding>& projections) {
    if (!is_min_code(code)) return;
    const auto n = vertex_count(code);
    LabeledGraph g = graph_from_code(code);
    if (satisfies(g, opts_.constraints)) {
      MinedPattern p;
      p.code = code;
      p.graph = std::move(g);
      for (const auto& e : projections)
        if (p.support.empty() || p.support.back() != e.graph) p.support.push_back(e.graph);
      out_.push_back(std::move(p));
    }
    const auto rmpath = rightmost_path(code);
    const std::size_t carbons = count_carbons(code);
    const bool can_add_vertex = opts_.constraints.max_nodes == 0 || n < opts_.constraints.max_nodes;
    Extensions exts;
    for (const auto& emb : projections) {
      for_each_extension(graphs_[emb.graph], emb, rmpath, n,
                         [&](const DfsEdge& ext, std::int64_t new_node, std::uint32_t edge) {
                           if (ext.forward()) {
                             if (!can_add_vertex) return;
                             if (ext.to_label == mol::kCarbon && carbons >= opts_.constraints.max_carbon) return;
                           }
                           exts[ext].push_back(extend_embedding(emb, new_node, edge));
                         });
    }
    for (auto& [ext, embs] : exts) {
      if (support_of(embs) < opts_.min_support) continue;
      code.push_back(ext);
      grow(code, embs);
      code.pop_back();
    }
  }

  std::vector<MinedPattern> take() { return std::move(out_); }

 private:
  std::span<const LabeledGraph> graphs_;
  const MiningOptions& opts_;
  std::vector<MinedPattern> out_;
};

}  // namespace

DfsCode min_dfs_code(const LabeledGraph& g) { return min_code_impl(g, nullptr).code; }

bool is_min_code(const DfsCode& code) {
  if (code.empty()) return true;
  return min_code_impl(graph_from_code(code), &code).reference_is_min;
}

bool satisfies(const LabeledGraph& g, const PatternConstraints& c) {
  const std::size_t carbons = g.count_label(mol::kCarbon);
  const std::size_t n = g.node_count();
  if (n < c.min_nodes || carbons > c.max_carbon || n - carbons < c.min_non_carbon) return false;
  return c.max_nodes == 0 || n <= c.max_nodes;
}

std::vector<MinedPattern> mine_frequent(std::span<const LabeledGraph> graphs, const MiningOptions& opts) {
  if (opts.min_support < 2) throw DataError("mine_frequent: min_support must be at least 2");
  // Frequent single-edge seeds.
  Extensions seeds;
  for (std::uint32_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = graphs[gi];
    for (std::uint32_t eid = 0; eid < g.edge_count(); ++eid) {
      const auto& e = g.edges()[eid];
      for (auto [u, v] : {std::pair{e.u, e.v}, std::pair{e.v, e.u}}) {
        DfsEdge seed{0, 1, g.node_label(u), e.label, g.node_label(v)};
        if (seed.from_label > seed.to_label) continue;  // the reversed copy is smaller
        const std::size_t carbons = (seed.from_label == mol::kCarbon) + (seed.to_label == mol::kCarbon);
        if (carbons > opts.constraints.max_carbon) continue;
        if (opts.constraints.max_nodes != 0 && opts.constraints.max_nodes < 2) continue;
        Embedding emb{gi, {u, v}, std::vector<bool>(g.edge_count(), false)};
        emb.used[eid] = true;
        seeds[seed].push_back(std::move(emb));
      }
    }
  }
  std::vector<std::pair<DfsEdge, const std::vector<Embedding>*>> work;
  for (const auto& [seed, embs] : seeds)
    if (support_of(embs) >= opts.min_support) work.emplace_back(seed, &embs);

  const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(work.size())));
  std::vector<std::vector<MinedPattern>> partial(threads);
  auto run = [&](unsigned t) {
    Miner miner(graphs, opts);
    for (std::size_t w = t; w < work.size(); w += threads) {
      DfsCode code{work[w].first};
      miner.grow(code, *work[w].second);
    }
    partial[t] = miner.take();
  };
  if (threads == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(run, t);
    for (auto& th : pool) th.join();
  }
  std::vector<MinedPattern> out;
  for (auto& p : partial)
    for (auto& m : p) out.push_back(std::move(m));
  std::sort(out.begin(), out.end(), [](const MinedPattern& a, const MinedPattern& b) { return code_less(a.code, b.code); });
  return out;
}

std::vector<Pattern> mine_patterns(std::span<const mol::Molecule> molecules, const MiningOptions& opts) {
  std::vector<LabeledGraph> graphs;
  graphs.reserve(molecules.size());
  for (const auto& m : molecules) graphs.push_back(mol::heavy_graph(m));
  auto mined = mine_frequent(graphs, opts);
  std::vector<Pattern> out;
  out.reserve(mined.size());
  for (std::size_t i = 0; i < mined.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "P%04zu", i);
    Pattern p{id, std::move(mined[i].graph), {}};
    for (auto gi : mined[i].support) p.support.push_back(molecules[gi].id);
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contexts

bool is_candidate(const LabeledGraph& molecule, const LabeledGraph& pattern, std::size_t max_extra) {
  if (molecule.node_count() < pattern.node_count()) return false;
  if (molecule.node_count() - pattern.node_count() > max_extra) return false;
  // Any embedding maps non-carbons onto non-carbons injectively, so the
  // leftovers are all carbon exactly when the non-carbon counts agree.
  const auto non_carbon = [](const LabeledGraph& g) { return g.node_count() - g.count_label(mol::kCarbon); };
  if (non_carbon(molecule) != non_carbon(pattern)) return false;
  return mol::contains(molecule, pattern);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::vector<ContextSequence> build_contexts(std::span<const Pattern> patterns, std::span<const mol::Molecule> molecules,
                                            const ContextOptions& opts) {
  if (opts.k < 2) throw DataError("build_contexts: k must be at least 2");
  std::vector<LabeledGraph> graphs;
  std::vector<mol::OodClass> classes;
  graphs.reserve(molecules.size());
  for (const auto& m : molecules) {
    graphs.push_back(mol::heavy_graph(m));
    classes.push_back(mol::classify_ood(m));
  }
  std::vector<ContextSequence> out;
  for (const auto& p : patterns) {
    std::array<std::vector<std::size_t>, 3> buckets;
    for (std::size_t i = 0; i < molecules.size(); ++i) {
      if (is_candidate(graphs[i], p.graph, opts.max_extra_carbons)) buckets[static_cast<std::size_t>(classes[i])].push_back(i);
    }
    const std::uint64_t h = fnv1a(p.id);
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::mt19937_64 rng(seq);
    std::size_t remaining = opts.max_per_pattern;
    for (auto& cands : buckets) {
      std::shuffle(cands.begin(), cands.end(), rng);
      const std::size_t n = std::min(cands.size() / opts.k, remaining);
      for (std::size_t c = 0; c < n; ++c) {
        ContextSequence ctx{p.id, {}};
        for (std::size_t j = 0; j < opts.k; ++j) ctx.molecule_ids.push_back(molecules[cands[c * opts.k + j]].id);
        out.push_back(std::move(ctx));
      }
      remaining -= n;
    }
  }
  return out;
}

std::optional<std::string> check_context(const ContextSequence& c, const Pattern& pattern,
                                         std::span<const mol::Molecule> molecules, std::size_t k,
                                         std::size_t max_extra) {
  if (c.pattern_id != pattern.id) return "context names pattern " + c.pattern_id + ", not " + pattern.id;
  if (c.molecule_ids.size() != k) return "context has " + std::to_string(c.molecule_ids.size()) + " molecules";
  std::set<std::string> seen;
  std::optional<mol::OodClass> cls;
  for (const auto& id : c.molecule_ids) {
    if (!seen.insert(id).second) return "duplicate molecule " + id;
    auto it = std::find_if(molecules.begin(), molecules.end(), [&](const mol::Molecule& m) { return m.id == id; });
    if (it == molecules.end()) return "unknown molecule " + id;
    if (!is_candidate(mol::heavy_graph(*it), pattern.graph, max_extra)) return "molecule " + id + " does not fit the pattern";
    const auto k_cls = mol::classify_ood(*it);
    if (cls && *cls != k_cls) return "context mixes OOD classes";
    cls = k_cls;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

json order_json(int label) {
  if (label == static_cast<int>(mol::BondOrder::Aromatic)) return "ar";
  return label;
}

int order_label(const json& j) {
  if (j.is_string() && j.get<std::string>() == "ar") return static_cast<int>(mol::BondOrder::Aromatic);
  if (j.is_number_integer()) {
    const int o = j.get<int>();
    if (o >= 1 && o <= 3) return o;
  }
  throw std::invalid_argument("edge order must be 1, 2, 3 or \"ar\"");
}

template <class F>
auto read_lines(std::istream& is, const std::string& source, F parse) {
  std::vector<decltype(parse(json{}))> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(source, line_no, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    } catch (const DataError& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return out;
}

}  // namespace

void write_patterns(std::ostream& os, std::span<const Pattern> patterns) {
  for (const auto& p : patterns) {
    json edges = json::array();
    for (const auto& e : p.graph.edges()) edges.push_back({e.u, e.v, order_json(e.label)});
    json j;
    j["pattern_id"] = p.id;
    j["nodes"] = p.graph.node_labels();
    j["edges"] = std::move(edges);
    j["support"] = p.support;
    os << j.dump() << '\n';
  }
}

void write_patterns(const std::filesystem::path& path, std::span<const Pattern> patterns) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  write_patterns(os, patterns);
}

std::vector<Pattern> read_patterns(std::istream& is, const std::string& source) {
  return read_lines(is, source, [](const json& j) {
    Pattern p;
    p.id = j.at("pattern_id").get<std::string>();
    for (const auto& z : j.at("nodes")) p.graph.add_node(z.get<int>());
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 3) throw std::invalid_argument("edge must be [i, j, order]");
      p.graph.add_edge(e[0].get<std::uint32_t>(), e[1].get<std::uint32_t>(), order_label(e[2]));
    }
    if (j.contains("support")) p.support = j.at("support").get<std::vector<std::string>>();
    return p;
  });
}

std::vector<Pattern> read_patterns(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open pattern file '" + path.string() + "'");
  return read_patterns(is, path.string());
}

void write_contexts(std::ostream& os, std::span<const ContextSequence> contexts) {
  for (const auto& c : contexts) {
    json j;
    j["pattern_id"] = c.pattern_id;
    j["molecule_ids"] = c.molecule_ids;
    os << j.dump() << '\n';
  }
}

void write_contexts(const std::filesystem::path& path, std::span<const ContextSequence> contexts) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  write_contexts(os, contexts);
}

std::vector<ContextSequence> read_contexts(std::istream& is, const std::string& source) {
  return read_lines(is, source, [](const json& j) {
    return ContextSequence{j.at("pattern_id").get<std::string>(), j.at("molecule_ids").get<std::vector<std::string>>()};
  });
}

std::vector<ContextSequence> read_contexts(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open context file '" + path.string() + "'");
  return read_contexts(is, path.string());
}

}  // namespace iclmol::mining
