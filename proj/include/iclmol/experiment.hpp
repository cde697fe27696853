#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iclmol/baselines.hpp"
#include "iclmol/synthetic.hpp"
#include "iclmol/training.hpp"

namespace iclmol::experiment {

/// End-to-end desk-scale run on a generated corpus: pretrain the encoder on
/// base molecules, train the sequence model on base contexts (ester contexts
/// validate), then score every readout on every split.
struct DeskConfig {
  std::size_t n_patterns = 40;
  std::size_t molecules_per_pattern = 120;
  mining::SyntheticTaskSpec spec;
  enc::EncoderConfig encoder;
  train::PretrainConfig pretrain;
  icl::IclConfig model;
  train::IclTrainConfig icl_train;
  std::uint64_t seed = 0;
  bool use_f64 = false;
  unsigned threads = 1;

  /// Encoder B=3, d=64; sequence model 4 layers of width 64.
  static DeskConfig defaults();
};

struct SplitScores {
  std::string split;
  std::size_t n_contexts = 0;
  double context_free_mev = 0.0;
  double selection_llm_mev = 0.0;
  double selection_regression_mev = 0.0;
  double full_regression_mev = 0.0;
  /// MAE (meV) of the sequence model at each context position.
  std::vector<double> position_mev;
};

struct DeskResult {
  std::vector<SplitScores> splits;  // base, ester, oxime
  SplitScores holdout;              // ester ∪ oxime
  std::vector<train::EpochMetric> pretrain_history;
  std::vector<train::EpochMetric> icl_history;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
};

DeskResult run_desk(const DeskConfig& cfg);

}  // namespace iclmol::experiment
