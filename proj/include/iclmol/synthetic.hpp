#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "iclmol/mining.hpp"

namespace iclmol::mining {

/// Label model for generated molecules:
///   label = Σ atom_energy[z] + Σ bond_energy[order] + pattern offset + N(0, noise²).
struct SyntheticTaskSpec {
  std::map<int, double> atom_energy{{6, -0.50}, {7, -0.80}, {8, -0.70}, {9, -0.50}, {16, -0.60}, {17, -0.45}};
  std::array<double, 4> bond_energy{-0.15, -0.35, -0.55, -0.25};  // single, double, triple, aromatic
  /// Offsets are drawn with magnitude in [offset_scale, 2·offset_scale] and random sign.
  double offset_scale = 1.0;
  /// Explicit per-pattern offsets; overrides the random draw when non-empty.
  std::vector<double> offsets;
  double noise = 0.02;
  std::size_t max_extra_carbons = 6;
  /// Share of patterns built around ester / N–O motifs; they form the held-out set.
  double holdout_fraction = 0.2;
  double bond_jitter = 0.03;  // Å
  std::size_t context_k = 10;
  std::size_t max_contexts_per_pattern = 15;
};

struct SyntheticCorpus {
  std::vector<mol::Molecule> molecules;
  std::vector<Pattern> patterns;
  std::vector<double> offsets;             // per pattern
  std::vector<mol::OodClass> pattern_class;  // per pattern
  std::vector<ContextSequence> contexts;
  std::vector<std::string> holdout_pattern_ids;
};

/// Context-structured corpus: each pattern core (2–5 heavy atoms, at most two
/// carbons, a heteroatom multiset unique to the pattern) is decorated with
/// 0..max_extra_carbons extra carbons and embedded in 3D with order-dependent
/// bond lengths. Held-out cores carry an ester or N–O motif, so they land in
/// the OOD splits. Requires n_patterns ≥ 2.
SyntheticCorpus gen_synthetic(std::size_t n_patterns, std::size_t molecules_per_pattern, const SyntheticTaskSpec& spec,
                              std::uint64_t seed);

/// Energy part of the label model, without offset or noise.
double additive_energy(const mol::Molecule& m, const SyntheticTaskSpec& spec);

/// Writes dataset.jsonl, patterns.jsonl, contexts.jsonl, one contexts_<split>.jsonl
/// per OOD class and holdout.json into dir.
void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace iclmol::mining
