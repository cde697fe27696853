#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iclmol/error.hpp"

namespace iclmol::mol {

inline constexpr int kHydrogen = 1;
inline constexpr int kCarbon = 6;
inline constexpr int kNitrogen = 7;
inline constexpr int kOxygen = 8;

/// Aromatic is its own edge label, never 1.5.
enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

struct Atom {
  int element = 0;                         // atomic number
  std::array<double, 3> position{};        // Å
};

struct Bond {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  BondOrder order = BondOrder::Single;
};

struct Molecule {
  std::string id;
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  double label_u0 = 0.0;  // eV

  /// Throws ValidationError naming this molecule.
  void validate() const;
  std::size_t heavy_atom_count() const;
};

/// Undirected graph with integer node and edge labels.
class LabeledGraph {
 public:
  struct Edge {
    std::uint32_t u = 0;
    std::uint32_t v = 0;
    int label = 0;
  };
  struct Neighbor {
    std::uint32_t node = 0;
    int label = 0;
    std::uint32_t edge = 0;  // index into edges()
  };

  std::uint32_t add_node(int label);
  /// Throws DataError on self-loops, bad endpoints or duplicate edges.
  void add_edge(std::uint32_t u, std::uint32_t v, int label);

  std::size_t node_count() const noexcept { return labels_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  int node_label(std::uint32_t n) const { return labels_[n]; }
  const std::vector<int>& node_labels() const noexcept { return labels_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::span<const Neighbor> neighbors(std::uint32_t n) const { return adjacency_[n]; }
  std::size_t degree(std::uint32_t n) const { return adjacency_[n].size(); }
  /// Label of edge u–v, if present.
  std::optional<int> edge_label(std::uint32_t u, std::uint32_t v) const;

  std::size_t count_label(int label) const;

 private:
  std::vector<int> labels_;
  std::vector<Edge> edges_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

enum class OodClass : std::uint8_t { Base, Ester, Oxime };

std::string_view to_string(OodClass c);

/// Reads one molecule per line; blank lines are skipped. Malformed lines raise
/// ParseError with the 1-based line number; invariant violations raise
/// ValidationError with the molecule id.
std::vector<Molecule> parse_dataset(const std::filesystem::path& path);
std::vector<Molecule> parse_dataset(std::istream& is, const std::string& source = "<stream>");
Molecule parse_molecule_line(std::string_view line, const std::string& source, std::size_t line_no);

/// One compact JSON object per molecule, newline-terminated.
void write_dataset(std::ostream& os, std::span<const Molecule> molecules);
void write_dataset(const std::filesystem::path& path, std::span<const Molecule> molecules);
std::string to_json_line(const Molecule& m);

/// Hydrogen-free view with densely re-indexed nodes; element labels on nodes,
/// bond orders on edges. Throws DataError when the molecule has no heavy atoms.
LabeledGraph heavy_graph(const Molecule& m);

/// Same view for a graph that is already labeled; drops label-1 nodes.
LabeledGraph strip_hydrogens(const LabeledGraph& g);

enum class MatchMode { Exists, Count, All };

struct MatchResult {
  bool found = false;
  std::size_t count = 0;
  /// embeddings[e][p] = target node that pattern node p maps to (mode All only).
  std::vector<std::vector<std::uint32_t>> embeddings;
};

/// Label-preserving subgraph monomorphisms of pattern into target, found by
/// VF2-style backtracking over a connectivity-first node order.
MatchResult subgraph_match(const LabeledGraph& pattern, const LabeledGraph& target, MatchMode mode);

inline bool contains(const LabeledGraph& target, const LabeledGraph& pattern) {
  return subgraph_match(pattern, target, MatchMode::Exists).found;
}

/// The ester motif C(=O)–O–C on heavy atoms.
const LabeledGraph& ester_pattern();

/// N–O bond of any order → Oxime; else ester motif present → Ester; else Base.
OodClass classify_ood(const Molecule& m);

}  // namespace iclmol::mol
