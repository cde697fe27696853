#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "iclmol/num/tensor.hpp"

namespace iclmol::num {

/// Scalar objective over a list of f64 tensors.
using Objective = std::function<double(const std::vector<Tensor<double>>&)>;

/// Central-difference gradient of f at inputs, one estimate per scalar.
/// Throws NumericError when f returns a non-finite value.
std::vector<Tensor<double>> finite_diff_grad(const Objective& f, std::vector<Tensor<double>> inputs,
                                             double h = 1e-6);

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂), and 0 when both are exactly zero.
double relative_error(const Tensor<double>& a, const Tensor<double>& b);

/// Largest relative_error over paired tensors.
double max_relative_error(const std::vector<Tensor<double>>& a, const std::vector<Tensor<double>>& b);

}  // namespace iclmol::num
