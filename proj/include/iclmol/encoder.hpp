#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iclmol/molgraph.hpp"
#include "iclmol/num/ops.hpp"
#include "iclmol/num/params.hpp"

namespace iclmol::enc {

using num::Index;
using num::ParamStore;
using num::Tape;
using num::Tensor;
using num::Var;

struct EncoderConfig {
  std::size_t n_blocks = 6;
  std::size_t dim = 128;
  std::size_t n_rbf = 16;
  double local_cutoff = 3.0;   // Å, bonded pairs
  double global_cutoff = 5.0;  // Å, all pairs; 0 turns global messages off
  std::size_t n_elements = 18;  // embedding rows, indexed by atomic number

  std::size_t output_dim() const noexcept { return n_blocks * dim; }
  /// Throws DataError on an inconsistent configuration.
  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Gaussian basis exp(−γ(d−μ_k)²), μ_k evenly spaced on [0, cutoff],
/// γ = (K/cutoff)², times the envelope ½(cos(πd/cutoff)+1) for d < cutoff.
std::vector<double> rbf_expand(double dist, std::size_t n_rbf, double cutoff);

/// Precision-free graph view of one molecule: element rows and directed
/// edge lists with their basis expansions.
struct PreparedMolecule {
  std::vector<std::uint32_t> elements;
  Index local_src, local_dst;
  std::vector<double> local_rbf;  // [local edges × K]
  Index global_src, global_dst;
  std::vector<double> global_rbf;  // [global edges × K]
};

PreparedMolecule prepare(const mol::Molecule& m, const EncoderConfig& cfg);

/// Disjoint union of prepared molecules, ready for one batched forward pass.
struct GraphBatch {
  std::size_t n_molecules = 0;
  std::vector<std::uint32_t> elements;
  Index node_molecule;
  Index local_src, local_dst;
  std::vector<double> local_rbf;
  Index global_src, global_dst;
  std::vector<double> global_rbf;
  std::size_t n_rbf = 0;

  std::size_t n_nodes() const noexcept { return elements.size(); }
};

GraphBatch make_batch(std::span<const PreparedMolecule* const> molecules, std::size_t n_rbf);

/// Fresh parameters: element table, per-block message/update weights and the
/// per-block linear readout heads used for pretraining.
template <std::floating_point T>
ParamStore<T> init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed);

template <std::floating_point T>
struct EncoderOutput {
  std::vector<Var<T>> blocks;  // per block, [molecules, d]
  Var<T> encodings;            // [molecules, B·d]
  Var<T> readout;              // [molecules, 1]
};

/// Batched forward pass. `bound` comes from params.bind(tape).
template <std::floating_point T>
EncoderOutput<T> encoder_forward(Tape<T>& tape, const std::vector<Var<T>>& bound, const ParamStore<T>& params,
                                 const EncoderConfig& cfg, const GraphBatch& batch);

/// Concatenated per-block pooled vectors of one molecule, length B·d.
template <std::floating_point T>
std::vector<T> encode(const mol::Molecule& m, const ParamStore<T>& params, const EncoderConfig& cfg);

/// Σ_b (w_b · e_b + c_b) on a concatenated encoding.
template <std::floating_point T>
T pretrain_readout(std::span<const T> encoding, const ParamStore<T>& params, const EncoderConfig& cfg);

/// Encodes many molecules in chunks; row i belongs to molecules[i]. Output
/// is identical for every thread count.
template <std::floating_point T>
Tensor<double> encode_all(std::span<const mol::Molecule> molecules, const ParamStore<T>& params,
                          const EncoderConfig& cfg, unsigned threads = 1, std::size_t chunk = 64);

/// Per-molecule encodings keyed by id, stored as a checkpoint plus an index
/// JSON {"ids": [...], "dim": B·d} next to it.
class EncodingCache {
 public:
  EncodingCache() = default;
  EncodingCache(std::vector<std::string> ids, Tensor<double> rows);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  bool contains(const std::string& id) const { return row_.count(id) > 0; }
  /// Throws DataError naming the id when absent.
  std::span<const double> row(const std::string& id) const;

  void save(const std::filesystem::path& path) const;
  static EncodingCache load(const std::filesystem::path& path);
  static std::filesystem::path index_path(const std::filesystem::path& path);

 private:
  std::vector<std::string> ids_;
  std::map<std::string, std::size_t> row_;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

/// Encoder checkpoint with a JSON sidecar holding the configuration.
template <std::floating_point T>
void save_encoder(const std::filesystem::path& path, const ParamStore<T>& params, const EncoderConfig& cfg);
template <std::floating_point T>
ParamStore<T> load_encoder(const std::filesystem::path& path, EncoderConfig& cfg);

}  // namespace iclmol::enc
