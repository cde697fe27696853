#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace iclmol::report {

inline constexpr int kFormatVersion = 1;

/// Readout labels used in evaluation rows.
inline constexpr const char* kSelectionLlm = "selection+llm";
inline constexpr const char* kSelectionRegression = "selection+regression";
inline constexpr const char* kRegression = "regression";
inline constexpr const char* kEncoderReadout = "encoder-readout";

struct EvalRow {
  std::string train_set;
  std::string eval_set;
  std::string readout;
  double mae_mev = 0.0;  // last example of each context
  std::size_t n_contexts = 0;
};

struct EvalReport {
  int format_version = kFormatVersion;
  std::vector<EvalRow> rows;

  /// Throws DataError on negative or non-finite MAE, or rows naming an
  /// evaluation set outside `known_sets` (skipped when it is empty).
  void validate(std::span<const std::string> known_sets = {}) const;
};

/// Header train_set,eval_set,readout,mae_mev,n_contexts; MAE with 4 decimals.
void write_csv(std::ostream& os, const EvalReport& r);
void write_csv(const std::filesystem::path& path, const EvalReport& r);
EvalReport read_csv(std::istream& is, const std::string& source = "<stream>");

/// Fixed-width table for terminals.
void write_table(std::ostream& os, const EvalReport& r);

void to_json(nlohmann::json& j, const EvalReport& r);

/// Two decimals, as printed in tables.
std::string format_mev(double mev);

/// Mean absolute error in meV between two equally long vectors in eV.
double mae_mev(std::span<const double> predicted, std::span<const double> target);

/// Full-scale reference numbers on the real molecular corpus. They document
/// the expected shape of the results; desk-scale runs do not reproduce them.
struct ReferenceRow {
  const char* train_set;
  const char* eval_set;
  const char* readout;
  double mae_mev;
};
std::span<const ReferenceRow> reference_rows();
void write_reference_table(std::ostream& os);

}  // namespace iclmol::report
