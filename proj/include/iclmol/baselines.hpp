#pragma once

#include <optional>
#include <span>
#include <vector>

#include "iclmol/encoder.hpp"
#include "iclmol/icl.hpp"
#include "iclmol/mining.hpp"
#include "iclmol/training.hpp"

namespace iclmol::baselines {

using num::Tensor;

struct LinearFit {
  std::vector<double> weights;
  double intercept = 0.0;

  double predict(std::span<const double> x) const;
};

/// Minimum-norm least squares on the column-centered system, solved by SVD
/// in f64 with singular values below rcond·σ_max dropped; the intercept
/// matches the means. ridge > 0 shrinks each direction by σ²/(σ²+ridge).
/// Throws NumericError on non-finite input.
LinearFit fit_minnorm(const Tensor<double>& x, std::span<const double> y, double ridge = 0.0, double rcond = 1e-10);

enum class RegressionMode { SelectionRegression, FullRegression };

/// The trained selection layer, applied to standardized encodings.
struct SelectionMap {
  icl::Standardizer stats;
  Tensor<double> weight;  // [input_dim, model_dim]
  std::vector<double> bias;

  template <std::floating_point T>
  static SelectionMap from_model(const num::ParamStore<T>& params, const icl::Standardizer& stats);
  std::vector<double> apply(std::span<const double> encoding) const;
};

/// Fits on the first k−1 examples of the context and predicts the k-th (eV).
/// SelectionRegression needs `selection`.
double ablation_predict(const mining::ContextSequence& c, RegressionMode mode, const enc::EncodingCache& cache,
                        const train::LabelTable& labels, const SelectionMap* selection, double ridge = 0.0);

/// Pattern-pooled variant: one fit over the first k−1 examples of every
/// context of the same pattern, then a prediction for each context's last
/// example, in input order.
std::vector<double> ablation_predict_pooled(std::span<const mining::ContextSequence> contexts, RegressionMode mode,
                                            const enc::EncodingCache& cache, const train::LabelTable& labels,
                                            const SelectionMap* selection, double ridge = 0.0);

}  // namespace iclmol::baselines
