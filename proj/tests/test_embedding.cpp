// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "mlfsl/config.hpp"
#include "mlfsl/embedding.hpp"
#include "mlfsl/errors.hpp"
#include "mlfsl/trainer.hpp"

using namespace mlfsl;

TEST_CASE("zero network maps everything to zero") {
  const Mlp net = Mlp::zeros({4, 8, 8, 3});
  ad::Tape tape;
  const Tensor x = Tensor::from_rows({{1, 2, 3, 4}, {-1, 0, 5, 2}});
  const Tensor e = embed(net.bind(tape, false), tape.constant(x)).value();
  CHECK(e.same_shape(Tensor(2, 3)));
  for (double v : e.data()) CHECK(v == 0.0);
}

TEST_CASE("identity single layer reproduces its input") {
  Mlp net = Mlp::zeros({3, 3});
  net.layers()[0].weight = Tensor::identity(3);
  ad::Tape tape;
  const Tensor x = Tensor::from_rows({{1, -2, 3}, {0.5, 0, -7}});
  CHECK(embed(net.bind(tape, false), tape.constant(x)).value().values() == x.values());
}

TEST_CASE("duplicated rows embed identically") {
  Rng rng(4);
  const Mlp net({3, 16, 16, 5}, rng);
  ad::Tape tape;
  const Tensor x = Tensor::from_rows({{0.3, -1, 2}, {0.3, -1, 2}});
  const Tensor e = embed(net.bind(tape, false), tape.constant(x)).value();
  for (std::size_t c = 0; c < 5; ++c) CHECK(e(0, c) == e(1, c));
}

TEST_CASE("embedding rejects a wrong input width") {
  Rng rng(1);
  const Mlp net({3, 4}, rng);
  ad::Tape tape;
  CHECK_THROWS_AS(embed(net.bind(tape, false), tape.constant(Tensor(2, 5))), ContractViolation);
}

TEST_CASE("glorot-uniform initialization bounds and zero biases") {
  Rng rng(2);
  const Mlp net({10, 30, 6}, rng);
  for (const auto& layer : net.layers()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    for (double w : layer.weight.data()) CHECK(std::abs(w) <= bound);
    for (double b : layer.bias.data()) CHECK(b == 0.0);
  }
}

TEST_CASE("network json round trip is lossless") {
  Rng rng(6);
  const Mlp net({5, 7, 2}, rng);
  CHECK(Mlp::from_json(nlohmann::json::parse(net.to_json().dump())) == net);
}

TEST_CASE("learning rate halves every 10000 episodes") {
  const Adam adam;
  CHECK(adam.effective_learning_rate(0) == 0.001);
  CHECK(adam.effective_learning_rate(9999) == 0.001);
  CHECK(adam.effective_learning_rate(10000) == 0.0005);
  CHECK(adam.effective_learning_rate(25000) == 0.00025);
  double prev = adam.effective_learning_rate(0);
  for (std::size_t e = 0; e < 100000; e += 997) {
    const double lr = adam.effective_learning_rate(e);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  Adam adam;
  Tensor w = Tensor::from_rows({{1.5, -2}});
  Tensor* params[] = {&w};
  const Tensor grads[] = {Tensor(1, 2)};
  for (int i = 0; i < 3; ++i) adam.step(params, grads, 0);
  CHECK(w.values() == std::vector<double>{1.5, -2});
}

TEST_CASE("one step on w^2 from w = 1 decreases |w|") {
  Adam adam;
  Tensor w = Tensor::scalar(1.0);
  Tensor* params[] = {&w};
  const Tensor grads[] = {Tensor::scalar(2.0)};
  adam.step(params, grads, 0);
  CHECK(std::abs(w.item()) < 1.0);
  CHECK(w.item() == doctest::Approx(1.0 - 0.001).epsilon(1e-9));
}

TEST_CASE("non-finite gradient aborts without touching parameters") {
  Adam adam;
  Tensor a = Tensor::scalar(1.0), b = Tensor::scalar(2.0);
  Tensor* params[] = {&a, &b};
  const Tensor grads[] = {Tensor::scalar(0.5), Tensor::scalar(std::numeric_limits<double>::quiet_NaN())};
  CHECK_THROWS_AS(adam.step(params, grads, 0), NumericalError);
  CHECK(a.item() == 1.0);
  CHECK(b.item() == 2.0);
  CHECK(adam.steps() == 0);
}

TEST_CASE("200 training episodes lower the 50-episode moving average loss") {
  RunConfig cfg;
  cfg.head = "proto";
  cfg.way = 3;
  cfg.shot = 2;
  cfg.episodes = 200;
  cfg.synth.num_classes = 10;
  cfg.synth.separation = 1.0;
  cfg.synth.noise = 0.3;
  cfg.val_fraction = 0.0;
  cfg.seed = 3;
  TrainResult r = train(cfg);
  REQUIRE(r.log.size() == 200);
  auto window = [&](std::size_t from) {
    double acc = 0.0;
    for (std::size_t e = from; e < from + 50; ++e) acc += r.log[e].loss;
    return acc / 50.0;
  };
  CHECK(window(150) < window(0));
  for (const Tensor* p : r.model.parameters()) CHECK(p->all_finite());
}
