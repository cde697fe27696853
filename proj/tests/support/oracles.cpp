#include "oracles.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

namespace oracle {

namespace {

std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_map(const LabeledGraph& g) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> m;
  for (const auto& e : g.edges()) {
    m[{std::min(e.u, e.v), std::max(e.u, e.v)}] = e.label;
  }
  return m;
}

void extend(const LabeledGraph& p, const LabeledGraph& t, std::vector<std::int64_t>& map, std::vector<bool>& used,
            std::size_t next, const std::map<std::pair<std::uint32_t, std::uint32_t>, int>& tedges,
            std::size_t& count) {
  if (next == p.node_count()) {
    for (const auto& e : p.edges()) {
      const auto a = static_cast<std::uint32_t>(map[e.u]);
      const auto b = static_cast<std::uint32_t>(map[e.v]);
      auto it = tedges.find({std::min(a, b), std::max(a, b)});
      if (it == tedges.end() || it->second != e.label) return;
    }
    ++count;
    return;
  }
  for (std::uint32_t c = 0; c < t.node_count(); ++c) {
    if (used[c] || t.node_label(c) != p.node_label(static_cast<std::uint32_t>(next))) continue;
    used[c] = true;
    map[next] = c;
    extend(p, t, map, used, next + 1, tedges, count);
    used[c] = false;
  }
}

}  // namespace

std::size_t count_monomorphisms(const LabeledGraph& pattern, const LabeledGraph& target) {
  if (pattern.node_count() > target.node_count()) return 0;
  std::vector<std::int64_t> map(pattern.node_count(), -1);
  std::vector<bool> used(target.node_count(), false);
  std::size_t count = 0;
  extend(pattern, target, map, used, 0, edge_map(target), count);
  return count;
}

bool isomorphic(const LabeledGraph& a, const LabeledGraph& b) {
  if (a.node_count() != b.node_count() || a.edge_count() != b.edge_count()) return false;
  auto la = a.node_labels(), lb = b.node_labels();
  std::sort(la.begin(), la.end());
  std::sort(lb.begin(), lb.end());
  if (la != lb) return false;
  // With equal edge counts, an edge-preserving bijection is an isomorphism.
  return count_monomorphisms(a, b) > 0;
}

std::vector<FrequentClass> frequent_subgraphs(const std::vector<LabeledGraph>& corpus, std::size_t min_support,
                                              std::size_t min_nodes, std::size_t min_non_carbon,
                                              std::size_t max_carbon) {
  std::vector<FrequentClass> classes;
  for (std::size_t gi = 0; gi < corpus.size(); ++gi) {
    const auto& g = corpus[gi];
    const auto m = g.edge_count();
    const std::uint64_t limit = std::uint64_t{1} << m;
    for (std::uint64_t mask = 1; mask < limit; ++mask) {
      // Collect the nodes touched by the chosen edges, then check connectivity.
      std::vector<std::int64_t> remap(g.node_count(), -1);
      LabeledGraph sub;
      for (std::size_t e = 0; e < m; ++e) {
        if (!(mask >> e & 1)) continue;
        for (auto n : {g.edges()[e].u, g.edges()[e].v})
          if (remap[n] < 0) remap[n] = sub.add_node(g.node_label(n));
      }
      for (std::size_t e = 0; e < m; ++e) {
        if (!(mask >> e & 1)) continue;
        const auto& ed = g.edges()[e];
        sub.add_edge(static_cast<std::uint32_t>(remap[ed.u]), static_cast<std::uint32_t>(remap[ed.v]), ed.label);
      }
      std::vector<bool> seen(sub.node_count(), false);
      std::vector<std::uint32_t> stack{0};
      seen[0] = true;
      std::size_t reached = 1;
      while (!stack.empty()) {
        const auto n = stack.back();
        stack.pop_back();
        for (const auto& nb : sub.neighbors(n))
          if (!seen[nb.node]) {
            seen[nb.node] = true;
            ++reached;
            stack.push_back(nb.node);
          }
      }
      if (reached != sub.node_count()) continue;

      const auto carbons = sub.count_label(iclmol::mol::kCarbon);
      if (sub.node_count() < min_nodes || sub.node_count() - carbons < min_non_carbon || carbons > max_carbon) continue;

      bool placed = false;
      for (auto& cls : classes) {
        if (isomorphic(cls.graph, sub)) {
          if (cls.support.back() != gi) cls.support.push_back(gi);
          placed = true;
          break;
        }
      }
      if (!placed) classes.push_back({std::move(sub), {gi}});
    }
  }
  std::erase_if(classes, [&](const FrequentClass& c) { return c.support.size() < min_support; });
  return classes;
}

LabeledGraph random_connected_graph(std::size_t n_nodes, const std::vector<int>& labels,
                                    const std::vector<int>& edge_labels, double chord_prob, std::mt19937_64& rng) {
  LabeledGraph g;
  std::uniform_int_distribution<std::size_t> pick_label(0, labels.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_edge(0, edge_labels.size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n_nodes; ++i) g.add_node(labels[pick_label(rng)]);
  for (std::uint32_t i = 1; i < n_nodes; ++i) {
    const auto parent = std::uniform_int_distribution<std::uint32_t>(0, i - 1)(rng);
    g.add_edge(parent, i, edge_labels[pick_edge(rng)]);
  }
  for (std::uint32_t i = 0; i < n_nodes; ++i)
    for (std::uint32_t j = i + 1; j < n_nodes; ++j)
      if (!g.edge_label(i, j) && u(rng) < chord_prob) g.add_edge(i, j, edge_labels[pick_edge(rng)]);
  return g;
}

}  // namespace oracle
