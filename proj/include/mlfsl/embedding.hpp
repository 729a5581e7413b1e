// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"
#include "mlfsl/autodiff.hpp"
#include "mlfsl/rng.hpp"
#include "mlfsl/tensor.hpp"

namespace mlfsl {

struct DenseLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [1 x out]
};

// Fully connected network with ReLU between layers and a linear output.
// Serves as the embedding f_theta, the relation module and the count net.
class Mlp {
 public:
  // Parameters as registered on one tape.
  struct Bound {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
  };

  Mlp() = default;
  // Glorot-uniform weights, zero biases.
  Mlp(std::vector<std::size_t> widths, Rng& rng);

  static Mlp zeros(std::vector<std::size_t> widths);

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  bool empty() const { return layers_.empty(); }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  // Registers every weight and bias on the tape; trainable ones become
  // gradient-tracking leaves.
  Bound bind(ad::Tape& tape, bool trainable) const;

  // Weights and biases interleaved per layer, the order used by Adam.
  std::vector<Tensor*> parameters();
  std::vector<ad::Var> bound_parameters(const Bound& bound) const;

  static ad::Var forward(const Bound& bound, ad::Var x);

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

  bool operator==(const Mlp& other) const;

 private:
  std::vector<std::size_t> widths_;
  std::vector<DenseLayer> layers_;
};

// Rows of `batch` mapped through the embedding network.
ad::Var embed(const Mlp::Bound& net, ad::Var batch);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t halve_every = 10000;  // episodes between learning-rate halvings
};

// Adam with a step-halving learning-rate schedule.
class Adam {
 public:
  explicit Adam(AdamOptions options = {});

  const AdamOptions& options() const { return options_; }
  std::size_t steps() const { return steps_; }

  // lr * 0.5^floor(episode / halve_every)
  double effective_learning_rate(std::size_t episode) const;

  // Throws NumericalError if a gradient is non-finite (parameters are left
  // untouched in that case).
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::size_t episode);

 private:
  AdamOptions options_;
  std::size_t steps_ = 0;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
};

}  // namespace mlfsl
