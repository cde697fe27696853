#pragma once

// Brute-force reference implementations used only by tests. They share no
// code with the library algorithms they check.

#include <cstdint>
#include <random>
#include <vector>

#include "iclmol/molgraph.hpp"

namespace oracle {

using iclmol::mol::LabeledGraph;

/// Number of injective, label-preserving maps pattern → target that send
/// every pattern edge onto a target edge with the same label.
std::size_t count_monomorphisms(const LabeledGraph& pattern, const LabeledGraph& target);

/// Exact isomorphism by trying every node bijection (with label pruning).
bool isomorphic(const LabeledGraph& a, const LabeledGraph& b);

struct FrequentClass {
  LabeledGraph graph;
  std::vector<std::size_t> support;  // ascending graph indices
};

/// Every connected edge-induced subgraph of every corpus graph, grouped into
/// isomorphism classes, filtered by support and the pattern constraints.
std::vector<FrequentClass> frequent_subgraphs(const std::vector<LabeledGraph>& corpus, std::size_t min_support,
                                              std::size_t min_nodes, std::size_t min_non_carbon,
                                              std::size_t max_carbon);

/// Connected random graph: spanning tree plus a few chords; labels from `labels`.
LabeledGraph random_connected_graph(std::size_t n_nodes, const std::vector<int>& labels,
                                    const std::vector<int>& edge_labels, double chord_prob, std::mt19937_64& rng);

}  // namespace oracle
