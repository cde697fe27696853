#include "iclmol/num/gradcheck.hpp"

#include <algorithm>

namespace iclmol::num {

std::vector<Tensor<double>> finite_diff_grad(const Objective& f, std::vector<Tensor<double>> inputs,
                                             double h) {
  auto eval = [&](std::size_t t, std::size_t i) {
    const double v = f(inputs);
    if (!std::isfinite(v)) {
      throw NumericError("finite_diff_grad: objective is not finite (input " + std::to_string(t) +
                         ", element " + std::to_string(i) + ")");
    }
    return v;
  };
  std::vector<Tensor<double>> grads;
  grads.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor<double> g(inputs[t].shape());
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double x0 = inputs[t][i];
      inputs[t][i] = x0 + h;
      const double fp = eval(t, i);
      inputs[t][i] = x0 - h;
      const double fm = eval(t, i);
      inputs[t][i] = x0;
      g[i] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("relative_error: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

double max_relative_error(const std::vector<Tensor<double>>& a, const std::vector<Tensor<double>>& b) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: tensor count mismatch");
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

}  // namespace iclmol::num
