#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "iclmol/encoder.hpp"
#include "iclmol/icl.hpp"
#include "iclmol/mining.hpp"

namespace iclmol::train {

using num::ParamStore;
using num::Tensor;

// ---------------------------------------------------------------------------
// Schedules

enum class RampShape { Linear };

struct CurriculumState {
  std::size_t step = 0;
  std::size_t period = 600;
  RampShape ramp = RampShape::Linear;

  /// Index of the last ignored example, min(−5 + ⌊step/period⌋, k−2).
  long last_ignored(std::size_t k) const;
  /// Index of the first fully weighted example, min(⌊step/period⌋, k−1).
  long first_full(std::size_t k) const;
};

/// k weights: 0 up to last_ignored, 1 from first_full, linear in between.
std::vector<double> curriculum_weights(const CurriculumState& s, std::size_t k);

/// Uniformly permuted copy of the context.
mining::ContextSequence shuffle_context(const mining::ContextSequence& c, std::mt19937_64& rng);

/// Adaptive moment estimation with bias correction.
template <std::floating_point T>
class Adam {
 public:
  explicit Adam(const ParamStore<T>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// shadow ← decay·shadow + (1−decay)·param after every update.
template <std::floating_point T>
class Ema {
 public:
  Ema(const ParamStore<T>& params, double decay) : shadow_(params), decay_(decay) {}
  void update(const ParamStore<T>& params);
  const ParamStore<T>& shadow() const noexcept { return shadow_; }
  double decay() const noexcept { return decay_; }

 private:
  ParamStore<T> shadow_;
  double decay_;
};

/// Multiplies the rate by `factor` once `patience` epochs pass without a new
/// best metric, never going below `floor`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, std::size_t patience, double factor = 0.1, double floor = 1e-5);
  /// Records one epoch's metric; returns the rate for the next epoch.
  double observe(double metric);
  double lr() const noexcept { return lr_; }
  bool improved() const noexcept { return improved_; }
  double best() const noexcept { return best_; }

 private:
  double lr_, factor_, floor_;
  std::size_t patience_, since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

// ---------------------------------------------------------------------------
// Metrics

struct EpochMetric {
  std::size_t epoch = 0;
  std::string split;
  double mae_mev = 0.0;
  double lr = 0.0;
};

/// CSV with header epoch,split,mae_mev,lr.
void write_metrics(std::ostream& os, std::span<const EpochMetric> rows);
void write_metrics(const std::filesystem::path& path, std::span<const EpochMetric> rows);

using LabelTable = std::unordered_map<std::string, double>;
LabelTable label_table(std::span<const mol::Molecule> molecules);

// ---------------------------------------------------------------------------
// Encoder pretraining

struct PretrainConfig {
  double lr = 1e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::size_t warmup_steps = 100;
  double ema_decay = 0.999;
  /// Start the readout biases at the mean label so training need not walk there.
  bool init_bias_from_data = true;
  std::uint64_t seed = 0;
};

template <std::floating_point T>
struct PretrainResult {
  ParamStore<T> params;
  ParamStore<T> ema;
  std::vector<EpochMetric> history;
};

/// Minimizes the MAE of the summed per-block readout. Evaluation metrics on
/// `validation` use the EMA weights. Throws NumericError on a non-finite loss.
template <std::floating_point T>
PretrainResult<T> pretrain_encoder(std::span<const mol::Molecule> train, std::span<const mol::Molecule> validation,
                                   const enc::EncoderConfig& cfg, const PretrainConfig& tc, ParamStore<T> init);

/// Context-free readout predictions (eV) of molecules from their encodings.
template <std::floating_point T>
std::vector<double> readout_predictions(const enc::EncodingCache& cache, std::span<const std::string> ids,
                                        const ParamStore<T>& params, const enc::EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// In-context training

struct IclTrainConfig {
  double lr = 1e-3;
  std::size_t batch_sequences = 16;
  std::size_t epochs = 100;
  std::size_t period = 600;
  std::size_t patience = 100;
  double lr_factor = 0.1;
  double lr_floor = 1e-5;
  /// Per-sequence shift added to every standardized label of a training
  /// sequence, drawn from N(0, label_shift_std²). 0 disables it.
  double label_shift_std = 0.0;
  std::uint64_t seed = 0;
};

template <std::floating_point T>
struct IclTrainResult {
  ParamStore<T> params;  // best validation epoch
  icl::Standardizer stats;
  std::vector<EpochMetric> history;
  std::size_t best_epoch = 0;
  double best_val_mae_mev = 0.0;
};

/// Builds standardized sequences for contexts, all of the same length k.
/// With withhold_last the final label token is dropped (2k−1 tokens).
template <std::floating_point T>
icl::SequenceBatch<T> make_sequences(std::span<const mining::ContextSequence> contexts,
                                     const enc::EncodingCache& cache, const LabelTable& labels,
                                     const icl::Standardizer& stats, bool withhold_last);

/// Destandardized predictions (eV), one vector of k per context. The final
/// label of every context is never read.
template <std::floating_point T>
std::vector<std::vector<double>> predict_contexts(const ParamStore<T>& params, const icl::IclConfig& cfg,
                                                  const icl::Standardizer& stats,
                                                  std::span<const mining::ContextSequence> contexts,
                                                  const enc::EncodingCache& cache, const LabelTable& labels,
                                                  std::size_t batch = 64);

/// Mean absolute error of the last example of each context, in meV.
double last_example_mae_mev(std::span<const std::vector<double>> predictions,
                            std::span<const mining::ContextSequence> contexts, const LabelTable& labels);

/// Trains on `train` contexts, selecting the epoch with the lowest
/// last-example MAE on `validation` (training contexts when it is empty).
template <std::floating_point T>
IclTrainResult<T> train_icl(std::span<const mining::ContextSequence> train,
                            std::span<const mining::ContextSequence> validation, const enc::EncodingCache& cache,
                            const LabelTable& labels, const icl::IclConfig& cfg, const IclTrainConfig& tc);

}  // namespace iclmol::train
