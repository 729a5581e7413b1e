// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mlfsl/gradcheck.hpp"

namespace mlfsl::selftest {

enum class LossUnderTest { kProto, kRelationBce, kRelationMse, kLabelPropagation, kJointNlc };

std::string loss_name(LossUnderTest loss);

// Max relative error between tape gradients and central differences for a
// loss evaluated end to end (embedding MLP, head, and for kJointNlc the count
// net with lambda = 0.01) on a random small episode drawn from `seed`.
double loss_gradient_error(LossUnderTest loss, std::uint64_t seed,
                           const GradientCheckOptions& options = {});

// Largest elementwise gap between the closed-form propagation and the
// iteration F <- alpha F S + Phi_X run to convergence, on a random graph.
struct PropagationCheck {
  double max_abs_error = 0.0;
  std::size_t iterations = 0;
  std::size_t nodes = 0;
};
PropagationCheck propagation_gap(std::uint64_t seed, std::size_t max_nodes = 60,
                                 double alpha = 0.99, std::size_t max_iterations = 10000);

// AP of the library vs. rank counting (rank_i = 1 + #{j ranked before i}).
double brute_force_average_precision(const std::vector<double>& scores,
                                     const std::vector<std::uint8_t>& truth);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Options {
  // Negates the prototypical-loss gradient inside the check; the selftest
  // must then fail.
  bool flip_proto_gradient = false;
};

std::vector<CheckResult> run(const Options& options = {});
bool all_passed(const std::vector<CheckResult>& results);
void print(const std::vector<CheckResult>& results, std::ostream& out);

}  // namespace mlfsl::selftest
