#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iclmol/molgraph.hpp"

namespace iclmol::mining {

/// One edge of a DFS code: discovery indices and labels.
struct DfsEdge {
  std::uint32_t from = 0;
  std::uint32_t to = 0;
  int from_label = 0;
  int edge_label = 0;
  int to_label = 0;

  bool forward() const noexcept { return from < to; }
  friend bool operator==(const DfsEdge&, const DfsEdge&) = default;
};

using DfsCode = std::vector<DfsEdge>;

/// gSpan order between two extensions of the same code prefix.
bool extension_less(const DfsEdge& a, const DfsEdge& b);

/// Lexicographic order over whole minimum DFS codes.
bool code_less(const DfsCode& a, const DfsCode& b);

mol::LabeledGraph graph_from_code(const DfsCode& code);
/// Canonical (minimum) DFS code of a connected graph with at least one edge.
DfsCode min_dfs_code(const mol::LabeledGraph& g);
bool is_min_code(const DfsCode& code);

struct PatternConstraints {
  std::size_t min_nodes = 2;
  std::size_t min_non_carbon = 1;
  std::size_t max_carbon = 2;
  std::size_t max_nodes = 0;  // 0 = unbounded
};

struct MiningOptions {
  std::size_t min_support = 10;
  PatternConstraints constraints;
  unsigned threads = 1;
};

struct MinedPattern {
  DfsCode code;  // minimum DFS code
  mol::LabeledGraph graph;
  std::vector<std::size_t> support;  // indices of supporting graphs, ascending
};

/// Frequent connected subgraphs satisfying the constraints, one per
/// isomorphism class, ordered by minimum DFS code. min_support must be ≥ 2.
std::vector<MinedPattern> mine_frequent(std::span<const mol::LabeledGraph> graphs, const MiningOptions& opts);

bool satisfies(const mol::LabeledGraph& g, const PatternConstraints& c);

struct Pattern {
  std::string id;
  mol::LabeledGraph graph;
  std::vector<std::string> support;  // molecule ids
};

/// Mines heavy-atom graphs of the molecules; ids are "P0000", "P0001", ...
std::vector<Pattern> mine_patterns(std::span<const mol::Molecule> molecules, const MiningOptions& opts);

struct ContextSequence {
  std::string pattern_id;
  std::vector<std::string> molecule_ids;
  friend bool operator==(const ContextSequence&, const ContextSequence&) = default;
};

struct ContextOptions {
  std::size_t k = 10;
  std::size_t max_per_pattern = 15;
  std::size_t max_extra_carbons = 6;
  std::uint64_t seed = 0;
};

/// True when m's heavy graph holds the pattern and its remaining heavy atoms
/// are at most max_extra carbons.
bool is_candidate(const mol::LabeledGraph& molecule, const mol::LabeledGraph& pattern, std::size_t max_extra);

/// Samples contexts of exactly k molecules per pattern, without reuse inside a
/// pattern. Molecules of different OOD classes never share a context.
std::vector<ContextSequence> build_contexts(std::span<const Pattern> patterns, std::span<const mol::Molecule> molecules,
                                            const ContextOptions& opts);

/// Re-checks a context against its pattern; returns the first violation.
std::optional<std::string> check_context(const ContextSequence& c, const Pattern& pattern,
                                         std::span<const mol::Molecule> molecules, std::size_t k,
                                         std::size_t max_extra = 6);

void write_patterns(std::ostream& os, std::span<const Pattern> patterns);
void write_patterns(const std::filesystem::path& path, std::span<const Pattern> patterns);
std::vector<Pattern> read_patterns(std::istream& is, const std::string& source = "<stream>");
std::vector<Pattern> read_patterns(const std::filesystem::path& path);

void write_contexts(std::ostream& os, std::span<const ContextSequence> contexts);
void write_contexts(const std::filesystem::path& path, std::span<const ContextSequence> contexts);
std::vector<ContextSequence> read_contexts(std::istream& is, const std::string& source = "<stream>");
std::vector<ContextSequence> read_contexts(const std::filesystem::path& path);

}  // namespace iclmol::mining
