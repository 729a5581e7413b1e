// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mlfsl/autodiff.hpp"
#include "mlfsl/tensor.hpp"

namespace mlfsl {

// Builds a scalar loss on `tape` from variables bound to the given points.
using MultiLossFn = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> inputs)>;
using LossFn = std::function<ad::Var(ad::Tape& tape, ad::Var input)>;

struct GradientCheckOptions {
  double epsilon = 1e-5;
  // Multiplies the analytic gradient before comparison. Only used to show a
  // corrupted gradient is caught (-1 flips the sign).
  double analytic_factor = 1.0;
};

// Max over all coordinates of |analytic - central difference| / max(1, |analytic|).
double check_gradients(const MultiLossFn& f, std::span<const Tensor> points,
                       const GradientCheckOptions& options = {});

double check_gradients(const LossFn& f, const Tensor& point, double epsilon = 1e-5);

}  // namespace mlfsl
