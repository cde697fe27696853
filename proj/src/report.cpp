#include "iclmol/report.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "iclmol/error.hpp"

namespace iclmol::report {

namespace {

constexpr const char* kHeader = "train_set,eval_set,readout,mae_mev,n_contexts";

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

constexpr std::array<ReferenceRow, 13> kReference{{
    {"qm9-base", "qm9-base", kEncoderReadout, 5.68},
    {"qm9-base", "qm9-ood-ester", kEncoderReadout, 147.47},
    {"qm9-base", "qm9-ood-oxime", kEncoderReadout, 681.98},
    {"qm9", "qm9-test", kEncoderReadout, 5.90},
    {"qm9-base", "qm9-base", kSelectionLlm, 21.20},
    {"qm9-base", "qm9-ood-ester", kSelectionLlm, 29.85},
    {"qm9-base", "qm9-ood-oxime", kSelectionLlm, 97.36},
    {"qm9-base", "qm9-base", kSelectionRegression, 11.45},
    {"qm9-base", "qm9-ood-ester", kSelectionRegression, 38.12},
    {"qm9-base", "qm9-ood-oxime", kSelectionRegression, 73.04},
    {"qm9-base", "qm9-base", kRegression, 136.3},
    {"qm9-base", "qm9-ood-ester", kRegression, 135.6},
    {"qm9-base", "qm9-ood-oxime", kRegression, 99.66},
}};

}  // namespace

void EvalReport::validate(std::span<const std::string> known_sets) const {
  for (const auto& r : rows) {
    if (!std::isfinite(r.mae_mev) || r.mae_mev < 0.0)
      throw DataError("report row " + r.eval_set + "/" + r.readout + " has invalid MAE " + std::to_string(r.mae_mev));
    if (known_sets.empty()) continue;
    bool known = false;
    for (const auto& s : known_sets) known = known || s == r.eval_set;
    if (!known) throw DataError("report row names unknown evaluation set '" + r.eval_set + "'");
  }
}

void write_csv(std::ostream& os, const EvalReport& r) {
  os << kHeader << '\n';
  for (const auto& row : r.rows)
    os << row.train_set << ',' << row.eval_set << ',' << row.readout << ',' << fixed(row.mae_mev, 4) << ','
       << row.n_contexts << '\n';
}

void write_csv(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  write_csv(os, r);
}

EvalReport read_csv(std::istream& is, const std::string& source) {
  EvalReport r;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (n == 1) {
      if (line != kHeader) throw ParseError(source, n, "unexpected header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 5) throw ParseError(source, n, "expected 5 fields");
    try {
      r.rows.push_back({f[0], f[1], f[2], std::stod(f[3]), static_cast<std::size_t>(std::stoull(f[4]))});
    } catch (const std::logic_error&) {
      throw ParseError(source, n, "bad number");
    }
  }
  if (n == 0) throw ParseError(source, 1, "missing header");
  return r;
}

void write_table(std::ostream& os, const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %-14s %-22s %12s %10s\n", "train", "eval", "readout", "MAE [meV]",
                "contexts");
  os << buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-12s %-14s %-22s %12.2f %10zu\n", row.train_set.c_str(), row.eval_set.c_str(),
                  row.readout.c_str(), row.mae_mev, row.n_contexts);
    os << buf;
  }
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"format_version", r.format_version}, {"rows", nlohmann::json::array()}};
  for (const auto& row : r.rows)
    j["rows"].push_back({{"train_set", row.train_set},
                         {"eval_set", row.eval_set},
                         {"readout", row.readout},
                         {"mae_mev", row.mae_mev},
                         {"n_contexts", row.n_contexts}});
}

std::string format_mev(double mev) { return fixed(mev, 2); }

double mae_mev(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw DimensionError("mae_mev: length mismatch");
  if (predicted.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += std::abs(predicted[i] - target[i]);
  return 1000.0 * s / static_cast<double>(predicted.size());
}

std::span<const ReferenceRow> reference_rows() { return kReference; }

void write_reference_table(std::ostream& os) {
  os << "full-scale reference, not reproduced at desk scale\n";
  EvalReport r;
  for (const auto& ref : reference_rows()) r.rows.push_back({ref.train_set, ref.eval_set, ref.readout, ref.mae_mev, 0});
  write_table(os, r);
}

}  // namespace iclmol::report
