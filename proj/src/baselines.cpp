#include "iclmol/baselines.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <numeric>

namespace iclmol::baselines {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double LinearFit::predict(std::span<const double> x) const {
  if (x.size() != weights.size()) throw DimensionError("linear fit: feature length differs from weights");
  return intercept + std::inner_product(x.begin(), x.end(), weights.begin(), 0.0);
}

LinearFit fit_minnorm(const Tensor<double>& x, std::span<const double> y, double ridge, double rcond) {
  if (x.rank() != 2 || x.rows() == 0 || x.rows() != y.size()) {
    throw DimensionError("fit_minnorm: need n ≥ 1 rows matching " + std::to_string(y.size()) + " targets, got " +
                         num::shape_str(x.shape()));
  }
  for (double v : x.data())
    if (!std::isfinite(v)) throw NumericError("fit_minnorm: non-finite feature");
  for (double v : y)
    if (!std::isfinite(v)) throw NumericError("fit_minnorm: non-finite target");
  if (ridge < 0) throw DataError("fit_minnorm: ridge must be ≥ 0");

  const auto n = static_cast<Eigen::Index>(x.rows()), d = static_cast<Eigen::Index>(x.cols());
  Mat a = Eigen::Map<const Mat>(x.ptr(), n, d);
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  const Eigen::RowVectorXd x_mean = a.colwise().mean();
  const double y_mean = b.mean();
  a.rowwise() -= x_mean;
  b.array() -= y_mean;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  Eigen::BDCSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double s_max = s.size() > 0 ? s.maxCoeff() : 0.0;
  if (s_max > 0) {
    const Eigen::VectorXd utb = svd.matrixU().transpose() * b;
    Eigen::VectorXd scaled = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (s[i] <= rcond * s_max) continue;
      scaled[i] = utb[i] * s[i] / (s[i] * s[i] + ridge);
    }
    w = svd.matrixV() * scaled;
  }
  LinearFit fit;
  fit.weights.assign(w.data(), w.data() + d);
  fit.intercept = y_mean - x_mean.dot(w);
  return fit;
}

template <std::floating_point T>
SelectionMap SelectionMap::from_model(const num::ParamStore<T>& params, const icl::Standardizer& stats) {
  SelectionMap m;
  m.stats = stats;
  m.weight = params.at("select.w").template cast<double>();
  const auto b = params.at("select.b").template cast<double>();
  m.bias.assign(b.data().begin(), b.data().end());
  if (m.weight.rows() != stats.dim()) throw DimensionError("selection layer input differs from standardizer width");
  return m;
}

std::vector<double> SelectionMap::apply(std::span<const double> encoding) const {
  std::vector<double> z(encoding.begin(), encoding.end());
  stats.encode_in_place(z);
  std::vector<double> out = bias;
  const std::size_t dm = weight.cols();
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t j = 0; j < dm; ++j) out[j] += z[i] * weight.at(i, j);
  return out;
}

namespace {

std::vector<double> features(const std::string& id, RegressionMode mode, const enc::EncodingCache& cache,
                             const SelectionMap* selection) {
  const auto row = cache.row(id);
  if (mode == RegressionMode::FullRegression) return {row.begin(), row.end()};
  if (selection == nullptr) throw DataError("selection regression requires a trained selection layer");
  return selection->apply(row);
}

double label_of(const train::LabelTable& labels, const std::string& id) {
  const auto it = labels.find(id);
  if (it == labels.end()) throw DataError("no label for molecule '" + id + "'");
  return it->second;
}

LinearFit fit_rows(const std::vector<std::vector<double>>& rows, const std::vector<double>& y, double ridge) {
  Tensor<double> x({rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), x.ptr() + i * x.cols());
  return fit_minnorm(x, y, ridge);
}

}  // namespace

double ablation_predict(const mining::ContextSequence& c, RegressionMode mode, const enc::EncodingCache& cache,
                        const train::LabelTable& labels, const SelectionMap* selection, double ridge) {
  const std::size_t k = c.molecule_ids.size();
  if (k < 2) throw DataError("ablation_predict: context needs at least 2 examples");
  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    rows.push_back(features(c.molecule_ids[i], mode, cache, selection));
    y.push_back(label_of(labels, c.molecule_ids[i]));
  }
  return fit_rows(rows, y, ridge).predict(features(c.molecule_ids.back(), mode, cache, selection));
}

std::vector<double> ablation_predict_pooled(std::span<const mining::ContextSequence> contexts, RegressionMode mode,
                                            const enc::EncodingCache& cache, const train::LabelTable& labels,
                                            const SelectionMap* selection, double ridge) {
  std::map<std::string, std::vector<std::size_t>> by_pattern;
  for (std::size_t i = 0; i < contexts.size(); ++i) by_pattern[contexts[i].pattern_id].push_back(i);
  std::vector<double> out(contexts.size());
  for (const auto& [pattern, members] : by_pattern) {
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (auto ci : members) {
      const auto& ids = contexts[ci].molecule_ids;
      if (ids.size() < 2) throw DataError("ablation_predict: context needs at least 2 examples");
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        rows.push_back(features(ids[i], mode, cache, selection));
        y.push_back(label_of(labels, ids[i]));
      }
    }
    const auto fit = fit_rows(rows, y, ridge);
    for (auto ci : members) out[ci] = fit.predict(features(contexts[ci].molecule_ids.back(), mode, cache, selection));
  }
  return out;
}

template SelectionMap SelectionMap::from_model<float>(const num::ParamStore<float>&, const icl::Standardizer&);
template SelectionMap SelectionMap::from_model<double>(const num::ParamStore<double>&, const icl::Standardizer&);

}  // namespace iclmol::baselines
