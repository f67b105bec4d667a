#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "saq/net.hpp"
#include "test_util.hpp"

using namespace saq;

namespace {

QuantSpec default_quant() { return QuantSpec{}; }

Tensor random_input(std::vector<int> shape, RandomStream& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& x : t.values()) x = rng.normal() * scale;
  return t;
}

std::map<std::string, std::uint64_t> param_checksums(Model& m) {
  std::map<std::string, std::uint64_t> sums;
  for (auto& [name, t] : m.named_params()) sums[name] = bytes_checksum(t.values());
  return sums;
}

std::map<std::string, std::uint64_t> stat_checksums(Model& m) {
  std::map<std::string, std::uint64_t> sums;
  for (auto& [name, v] : m.named_stats()) sums[name] = bytes_checksum(*v);
  return sums;
}

}  // namespace

TEST_CASE("stock specs") {
  SUBCASE("mlp parameter count") {
    const ModelSpec m = mlp_spec(784, 64, 10);
    CHECK(m.weight_parameter_count() == 50890);
    CHECK(m.quantized_layers().size() == 2);
    CHECK(m.weighted_depth() == 2);
  }
  SUBCASE("miniconv has four searchable layers") {
    const ModelSpec m = miniconv_spec(1, 8, 4);
    CHECK(m.quantized_layers().size() == 4);
    CHECK_FALSE(m.paper_policy);
    Model model(m, default_quant(), 1);
    CHECK(model.searchable_positions() == std::vector<int>{0, 1, 2, 3});
  }
  SUBCASE("resnet depth counts") {
    const ModelSpec r20 = resnet20_spec(100);
    CHECK(r20.weighted_depth() == 20);            // main path: 19 conv + 1 linear
    CHECK(r20.weighted_layers().size() == 22);    // plus two projection shortcuts
    CHECK(r20.quantized_layers().size() == 22);
    CHECK(r20.paper_policy);
    CHECK(r20.layers[r20.quantized_layers().front()].fixed_bitwidth == 8);
    CHECK(r20.layers[r20.quantized_layers().back()].fixed_bitwidth == 8);

    const ModelSpec r18 = resnet18_spec(1000);
    CHECK(r18.weighted_depth() == 18);
    CHECK(r18.weighted_layers().size() == 21);    // three projection shortcuts
  }
  SUBCASE("spec validation rejects broken graphs") {
    ModelSpec m = miniconv_spec(1, 8, 4);
    m.layers[0].out_channels = 9;  // BN behind it expects 8 channels
    CHECK_THROWS_AS(m.validate(), ShapeError);

    ModelSpec bad = mlp_spec(16, 8, 4);
    bad.layers[0].quantized = false;
    bad.paper_policy = true;  // policy demands fixed endpoints
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("model construction") {
  SUBCASE("same seed, bit-identical parameters") {
    Model a(miniconv_spec(1, 8, 4), default_quant(), 42);
    Model b(miniconv_spec(1, 8, 4), default_quant(), 42);
    Model c(miniconv_spec(1, 8, 4), default_quant(), 43);
    CHECK(param_checksums(a) == param_checksums(b));
    CHECK(param_checksums(a) != param_checksums(c));
  }
  SUBCASE("clipping levels honor initial values") {
    QuantSpec q;
    q.alpha_w[3] = 0.5;
    Model m(mlp_spec(16, 8, 4), q, 7);
    for (auto& [name, t] : m.named_params()) {
      if (name.find("log_alpha_w.3") != std::string::npos) {
        CHECK(t.values()[0] == doctest::Approx(std::log(0.5)).epsilon(1e-15));
      } else if (name.find("log_alpha_w.4") != std::string::npos) {
        CHECK(t.values()[0] == 0.0);
      }
    }
    QuantSpec bad;
    bad.alpha_z[2] = -1.0;
    CHECK_THROWS_AS(Model(mlp_spec(16, 8, 4), bad, 7), ConfigError);
  }
  SUBCASE("active parameter set follows the config") {
    Model m(miniconv_spec(1, 8, 4), default_quant(), 3);
    // 4 weights + 2 biases + 4x2 clipping levels + 2 BN pairs
    CHECK(m.trainable_params({2, 3, 4, 5}).size() == 18);
    // full-precision run: weights and biases plus the 32-key BN sets
    CHECK(m.trainable_params({32, 32, 32, 32}).size() == 10);
    CHECK_THROWS_AS(m.trainable_params({2, 3}), ConfigError);
    CHECK_THROWS_AS(m.trainable_params({2, 3, 4, 7}), ConfigError);
  }
}

TEST_CASE("forward basics") {
  RandomStream rng(301);

  SUBCASE("shapes") {
    Model m(miniconv_spec(1, 8, 4), default_quant(), 5);
    Tensor x = random_input({2, 1, 8, 8}, rng);
    Tensor logits = m.forward(x, m.uniform_config(4), Model::Mode::eval);
    CHECK(logits.shape() == std::vector<int>{2, 4});

    Model mlp(mlp_spec(16, 8, 4), default_quant(), 5);
    CHECK(mlp.forward(random_input({3, 16}, rng), mlp.uniform_config(2),
                      Model::Mode::eval)
              .shape() == std::vector<int>{3, 4});
    CHECK_THROWS_AS(mlp.forward(random_input({3, 15}, rng), mlp.uniform_config(2),
                                Model::Mode::eval),
                    ShapeError);
  }

  SUBCASE("zero input through a bias-free quantized mlp gives zero logits") {
    Model m(mlp_spec(16, 8, 4, /*bias=*/false), default_quant(), 5);
    Tensor logits = m.forward(Tensor::zeros({2, 16}), m.uniform_config(2),
                              Model::Mode::eval);
    for (double v : logits.values()) CHECK(v == 0.0);
  }

  SUBCASE("fixed-bitwidth slots ignore their config entry") {
    ModelSpec spec = mlp_spec(16, 8, 4);
    apply_fixed_endpoint_bitwidths(spec);
    Model m(spec, default_quant(), 9);
    Tensor x = random_input({4, 16}, rng);
    Tensor a = m.forward(x, {2, 2}, Model::Mode::eval);
    Tensor b = m.forward(x, {5, 3}, Model::Mode::eval);
    CHECK(bytes_checksum(a.values()) == bytes_checksum(b.values()));
  }

  SUBCASE("eval output independent of batch composition") {
    Model m(miniconv_spec(1, 8, 3), default_quant(), 11);
    Tensor batch = random_input({4, 1, 8, 8}, rng);
    Tensor batched = m.forward(batch, m.uniform_config(3), Model::Mode::eval);
    for (int i = 0; i < 4; ++i) {
      Tensor one = Tensor::zeros({1, 1, 8, 8});
      for (int j = 0; j < 64; ++j) one.values()[j] = batch.values()[i * 64 + j];
      Tensor logits = m.forward(one, m.uniform_config(3), Model::Mode::eval);
      for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(logits.values()[k] - batched.values()[i * 3 + k]) < 1e-12);
      }
    }
  }

  SUBCASE("unknown bitwidth rejected") {
    Model m(mlp_spec(16, 8, 4), default_quant(), 5);
    CHECK_THROWS_AS(m.forward(random_input({1, 16}, rng), {2, 7}, Model::Mode::eval),
                    ConfigError);
  }
}

TEST_CASE("switchable state isolation") {
  RandomStream rng(401);
  Model m(miniconv_spec(1, 8, 4), default_quant(), 21);
  Tensor x = random_input({8, 1, 8, 8}, rng);

  const auto params_before = param_checksums(m);
  const auto stats_before = stat_checksums(m);
  m.forward(x, m.uniform_config(4), Model::Mode::train);
  const auto params_after = param_checksums(m);
  const auto stats_after = stat_checksums(m);

  CHECK(params_before == params_after);  // forward never mutates parameters
  for (const auto& [name, sum] : stats_after) {
    const bool selected = name.find(".4") != std::string::npos;
    if (selected) {
      CHECK(sum != stats_before.at(name));
    } else {
      CHECK(sum == stats_before.at(name));
    }
  }

  // frozen-stats training forward leaves every running stat untouched
  m.forward(x, m.uniform_config(2), Model::Mode::train_frozen_stats);
  CHECK(stat_checksums(m) == stats_after);
}

TEST_CASE("parameter sharing across configs") {
  RandomStream rng(501);
  // raw weights feed the quantizer here so a single-element nudge provably
  // crosses a rounding boundary at every bitwidth
  ModelSpec spec = mlp_spec(16, 8, 4);
  spec.weight_norm = false;
  Model m(spec, default_quant(), 31);
  Tensor x = random_input({2, 16}, rng);

  auto effective_flat = [&](int b) {
    m.forward(x, m.uniform_config(b), Model::Mode::eval);
    std::vector<double> flat;
    for (const Tensor& q : m.last_effective_weights()) {
      flat.insert(flat.end(), q.values().begin(), q.values().end());
    }
    return flat;
  };
  const auto at2 = effective_flat(2);
  const auto at4 = effective_flat(4);

  // nudge one shared weight; every config's quantization chain must see it
  m.weighted()[0].weight.values()[3] += 0.8;
  CHECK(effective_flat(2) != at2);
  CHECK(effective_flat(4) != at4);
}

TEST_CASE("effective-weight perturbation") {
  RandomStream rng(601);
  Model m(miniconv_spec(1, 8, 4), default_quant(), 41);
  Tensor x = random_input({4, 1, 8, 8}, rng);
  const auto config = m.uniform_config(4);

  SUBCASE("apply then remove restores forwards bit-exactly") {
    Tensor before = m.forward(x, config, Model::Mode::eval);
    std::vector<double> eps(m.perturbation_size());
    for (auto& e : eps) e = rng.normal() * 0.01;
    m.apply_perturbation(eps);
    CHECK(m.perturbed());
    Tensor during = m.forward(x, config, Model::Mode::eval);
    CHECK(bytes_checksum(before.values()) != bytes_checksum(during.values()));
    m.remove_perturbation();
    Tensor after = m.forward(x, config, Model::Mode::eval);
    CHECK(bytes_checksum(before.values()) == bytes_checksum(after.values()));
  }

  SUBCASE("zero perturbation leaves forwards unchanged") {
    Tensor before = m.forward(x, config, Model::Mode::eval);
    m.apply_perturbation(std::vector<double>(m.perturbation_size(), 0.0));
    Tensor during = m.forward(x, config, Model::Mode::eval);
    CHECK(bytes_checksum(before.values()) == bytes_checksum(during.values()));
    m.remove_perturbation();
  }

  SUBCASE("length contract") {
    CHECK_THROWS_AS(m.apply_perturbation({1.0, 2.0}), ValueError);
  }

  SUBCASE("loss delta matches the first-order model") {
    const std::vector<int> labels{0, 1, 2, 3};

    // gap between the measured loss delta and the linear model, with the
    // perturbation restricted to slots [lo, hi)
    auto first_order_gap = [&](const std::vector<int>& cfg, std::size_t lo, std::size_t hi) {
      for (Tensor& p : m.trainable_params(cfg)) p.zero_grad();
      std::vector<double> grad_flat;
      double base_loss = 0.0;
      {
        Tape tape;
        Tensor loss = softmax_cross_entropy(m.forward(x, cfg, Model::Mode::eval), labels);
        base_loss = loss.item();
        tape.backward(loss);
        for (const Tensor& q : m.last_effective_weights()) {
          const auto& g = q.grad();
          grad_flat.insert(grad_flat.end(), g.begin(), g.end());
        }
      }
      std::vector<double> eps(m.perturbation_size(), 0.0);
      for (std::size_t j = lo; j < hi; ++j) eps[j] = rng.normal();
      const double norm = l2_norm(eps);
      for (auto& e : eps) e *= 1e-4 / norm;

      m.apply_perturbation(eps);
      const double moved =
          softmax_cross_entropy(m.forward(x, cfg, Model::Mode::eval), labels).item();
      m.remove_perturbation();

      const double predicted = dot(grad_flat, eps);
      REQUIRE(std::abs(predicted) > 1e-9);
      return std::abs((moved - base_loss) - predicted) / std::abs(predicted);
    };

    // Rounding of downstream activations makes the loss locally constant in
    // upstream weight directions, so the linear model only holds where no
    // activation quantizer sits after the perturbed slots: everywhere under
    // the full-precision bypass, and in the last layer under quantization.
    const std::size_t n = m.perturbation_size();
    CHECK(first_order_gap(m.uniform_config(32), 0, n) <= 0.10);
    const std::size_t last = m.weighted().back().weight.size();
    CHECK(first_order_gap(config, n - last, n) <= 0.10);
  }
}
