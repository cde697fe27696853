#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iclmol/num/ops.hpp"
#include "iclmol/num/params.hpp"

namespace iclmol::icl {

using num::Index;
using num::ParamStore;
using num::Tape;
using num::Tensor;
using num::Var;

struct IclConfig {
  std::size_t model_dim = 128;
  std::size_t n_layers = 12;
  std::size_t n_heads = 4;
  std::size_t max_positions = 20;
  std::size_t input_dim = 768;
  /// Standard pre-norm blocks when true; false drops every normalization layer.
  bool layer_norm = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const IclConfig& c);
void from_json(const nlohmann::json& j, IclConfig& c);

/// Per-channel encoding and label statistics, fitted on the training split.
struct Standardizer {
  std::vector<double> enc_mean;
  std::vector<double> enc_std;
  double y_mean = 0.0;
  double y_std = 1.0;

  /// Channels with (near) zero spread get unit scale.
  static Standardizer fit(const Tensor<double>& encodings, std::span<const double> labels);
  std::size_t dim() const noexcept { return enc_mean.size(); }
  void encode_in_place(std::span<double> row) const;
  double label(double y) const noexcept { return (y - y_mean) / y_std; }
  double unlabel(double z) const noexcept { return z * y_std + y_mean; }
};

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);

template <std::floating_point T>
ParamStore<T> init_icl_params(const IclConfig& cfg, std::uint64_t seed);

/// A batch of equally long, already standardized sequences.
///   encodings: [n_seq·k, input_dim], example i of sequence s at row s·k+i
///   labels:    n_seq·k values in the same order
///   n_tokens:  2k, or 2k−1 when the final label is withheld
template <std::floating_point T>
struct SequenceBatch {
  Tensor<T> encodings;
  std::vector<T> labels;
  std::size_t n_seq = 0;
  std::size_t k = 0;
  std::size_t n_tokens = 0;
};

/// Row order of the interleaved tokens [s₁, l₁, s₂, l₂, …] drawn from the
/// stacked structure rows (first n_seq·k) and label rows (next n_seq·k).
Index token_order(std::size_t n_seq, std::size_t k, std::size_t n_tokens);

template <std::floating_point T>
struct IclOutput {
  Var<T> tokens;       // [n_seq·n_tokens, model_dim] after positional embedding
  Var<T> head_all;     // [n_seq·n_tokens, 1], head applied at every position
  Var<T> predictions;  // [n_seq·k, 1], head outputs at structure positions
};

/// Linear map from the encoder stack to the model width.
template <std::floating_point T>
Var<T> select(Var<T> encodings, const std::vector<Var<T>>& bound, const ParamStore<T>& params);

template <std::floating_point T>
IclOutput<T> icl_forward(Tape<T>& tape, const std::vector<Var<T>>& bound, const ParamStore<T>& params,
                         const IclConfig& cfg, const SequenceBatch<T>& batch);

/// Σ w_i (p_i − l_i)² / Σ w_i with weights repeated for every sequence.
template <std::floating_point T>
Var<T> masked_loss(Var<T> predictions, std::span<const T> labels, std::span<const T> weights_per_position,
                   std::size_t n_seq);

/// Predictions without gradient tracking, one per example.
template <std::floating_point T>
std::vector<T> icl_predict(const ParamStore<T>& params, const IclConfig& cfg, const SequenceBatch<T>& batch);

/// Checkpoint with tensor names "select.w", …, "head.b" plus a JSON sidecar
/// {"config": …, "standardizer": …}.
template <std::floating_point T>
void save_icl(const std::filesystem::path& path, const ParamStore<T>& params, const IclConfig& cfg,
              const Standardizer& stats);
template <std::floating_point T>
ParamStore<T> load_icl(const std::filesystem::path& path, IclConfig& cfg, Standardizer& stats);

}  // namespace iclmol::icl
