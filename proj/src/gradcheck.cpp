// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mlfsl/errors.hpp"

namespace mlfsl {
namespace {

double evaluate(const MultiLossFn& f, std::span<const Tensor> points) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(points.size());
  for (const Tensor& p : points) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

}  // namespace

double check_gradients(const MultiLossFn& f, std::span<const Tensor> points,
                       const GradientCheckOptions& options) {
  require(options.epsilon > 0.0 && options.epsilon <= 1e-2, "epsilon must lie in (0, 1e-2]");

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& p : points) vars.push_back(tape.variable(p));
    ad::Var loss = f(tape, vars);
    tape.backward(loss);
    for (const ad::Var& v : vars) analytic.push_back(tape.grad(v));
  }

  std::vector<Tensor> probe(points.begin(), points.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double saved = probe[k][i];
      probe[k][i] = saved + options.epsilon;
      const double up = evaluate(f, probe);
      probe[k][i] = saved - options.epsilon;
      const double down = evaluate(f, probe);
      probe[k][i] = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double a = options.analytic_factor * analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

double check_gradients(const LossFn& f, const Tensor& point, double epsilon) {
  const Tensor points[] = {point};
  return check_gradients(
      [&f](ad::Tape& tape, std::span<const ad::Var> vars) { return f(tape, vars[0]); }, points,
      GradientCheckOptions{epsilon, 1.0});
}

}  // namespace mlfsl
