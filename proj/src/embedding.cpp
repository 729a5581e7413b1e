// SPDX-License-Identifier: Apache-2.0
#include "mlfsl/embedding.hpp"

#include <cmath>
#include <string>

#include "mlfsl/errors.hpp"

namespace mlfsl {

using nlohmann::json;

Mlp::Mlp(std::vector<std::size_t> widths, Rng& rng) : widths_(std::move(widths)) {
  require(widths_.size() >= 2, "an MLP needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t in = widths_[l], out = widths_[l + 1];
    require(in > 0 && out > 0, "layer widths must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w(in, out);
    for (double& v : w.data()) v = dist(rng);
    layers_.push_back(DenseLayer{std::move(w), Tensor(1, out)});
  }
}

Mlp Mlp::zeros(std::vector<std::size_t> widths) {
  require(widths.size() >= 2, "an MLP needs at least input and output widths");
  Mlp net;
  net.widths_ = std::move(widths);
  for (std::size_t l = 0; l + 1 < net.widths_.size(); ++l)
    net.layers_.push_back(DenseLayer{Tensor(net.widths_[l], net.widths_[l + 1]),
                                     Tensor(1, net.widths_[l + 1])});
  return net;
}

Mlp::Bound Mlp::bind(ad::Tape& tape, bool trainable) const {
  Bound b;
  for (const DenseLayer& layer : layers_) {
    b.weights.push_back(trainable ? tape.variable(layer.weight) : tape.constant(layer.weight));
    b.biases.push_back(trainable ? tape.variable(layer.bias) : tape.constant(layer.bias));
  }
  return b;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (DenseLayer& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<ad::Var> Mlp::bound_parameters(const Bound& bound) const {
  std::vector<ad::Var> out;
  for (std::size_t l = 0; l < bound.weights.size(); ++l) {
    out.push_back(bound.weights[l]);
    out.push_back(bound.biases[l]);
  }
  return out;
}

ad::Var Mlp::forward(const Bound& bound, ad::Var x) {
  require(!bound.weights.empty(), "forward through an empty network");
  ad::Var h = x;
  for (std::size_t l = 0; l < bound.weights.size(); ++l) {
    h = ad::add(ad::matmul(h, bound.weights[l]), bound.biases[l]);
    if (l + 1 < bound.weights.size()) h = ad::relu(h);
  }
  return h;
}

json Mlp::to_json() const {
  json layers = json::array();
  for (const DenseLayer& layer : layers_)
    layers.push_back({{"weight", layer.weight.values()}, {"bias", layer.bias.values()}});
  return {{"widths", widths_}, {"layers", std::move(layers)}};
}

Mlp Mlp::from_json(const json& j) {
  Mlp net = zeros(j.at("widths").get<std::vector<std::size_t>>());
  const json& layers = j.at("layers");
  require(layers.size() == net.layers_.size(), "checkpoint layer count does not match widths");
  for (std::size_t l = 0; l < net.layers_.size(); ++l) {
    auto w = layers[l].at("weight").get<std::vector<double>>();
    auto b = layers[l].at("bias").get<std::vector<double>>();
    DenseLayer& layer = net.layers_[l];
    layer.weight = Tensor(layer.weight.rows(), layer.weight.cols(), std::move(w));
    layer.bias = Tensor(1, layer.bias.cols(), std::move(b));
  }
  return net;
}

bool Mlp::operator==(const Mlp& other) const {
  if (widths_ != other.widths_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight.values() != other.layers_[l].weight.values()) return false;
    if (layers_[l].bias.values() != other.layers_[l].bias.values()) return false;
  }
  return true;
}

ad::Var embed(const Mlp::Bound& net, ad::Var batch) {
  require(!net.weights.empty(), "embedding network has no layers");
  require(batch.cols() == net.weights.front().rows(),
          "embedding input has " + std::to_string(batch.cols()) + " columns, network expects " +
              std::to_string(net.weights.front().rows()));
  return Mlp::forward(net, batch);
}

Adam::Adam(AdamOptions options) : options_(options) {
  require(options_.learning_rate > 0.0, "learning rate must be positive");
  require(options_.halve_every > 0, "halving period must be positive");
}

double Adam::effective_learning_rate(std::size_t episode) const {
  const auto halvings = static_cast<double>(episode / options_.halve_every);
  return options_.learning_rate * std::pow(0.5, halvings);
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                std::size_t episode) {
  require(params.size() == grads.size(), "parameter and gradient counts differ");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    require(params[k]->same_shape(grads[k]), "gradient shape differs from parameter shape");
    if (!grads[k].all_finite())
      throw NumericalError("non-finite gradient for parameter " + std::to_string(k) +
                           " at episode " + std::to_string(episode));
  }
  if (first_moment_.empty()) {
    for (Tensor* p : params) {
      first_moment_.emplace_back(p->rows(), p->cols());
      second_moment_.emplace_back(p->rows(), p->cols());
    }
  }
  require(first_moment_.size() == params.size(), "parameter set changed between Adam steps");

  ++steps_;
  const double lr = effective_learning_rate(episode);
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& m = first_moment_[k];
    Tensor& v = second_moment_[k];
    require(m.same_shape(p), "moment shape differs from parameter shape");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grads[k][i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
}

}  // namespace mlfsl
