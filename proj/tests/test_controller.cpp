#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "saq/controller.hpp"
#include "saq/costmodel.hpp"
#include "saq/data.hpp"
#include "saq/error.hpp"
#include "saq/net.hpp"
#include "saq/rng.hpp"
#include "saq/tensor.hpp"

using namespace saq;

namespace {

QuantSpec quant_with(std::vector<int> set) {
  QuantSpec q;
  q.bitwidth_set = std::move(set);
  return q;
}

// Class-template images: one Gaussian template per class plus pixel noise,
// so accuracy degrades smoothly as bitwidths shrink.
Dataset template_images(std::int64_t n, int classes, int hw, double noise,
                        std::uint64_t seed) {
  RandomStream rng(seed);
  std::vector<std::vector<double>> tpl(classes, std::vector<double>(hw * hw));
  for (auto& t : tpl)
    for (auto& v : t) v = rng.normal();
  Tensor x = Tensor::zeros({static_cast<int>(n), 1, hw, hw});
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.next_index(classes));
    labels[static_cast<std::size_t>(i)] = c;
    double* row = x.values().data() + i * hw * hw;
    for (int j = 0; j < hw * hw; ++j) row[j] = tpl[c][j] + noise * rng.normal();
  }
  Dataset ds;
  ds.features = x;
  ds.labels = std::move(labels);
  ds.classes = classes;
  ds.validate();
  return ds;
}

Batch whole_batch(const Dataset& d) {
  std::vector<std::int64_t> rows(static_cast<std::size_t>(d.size()));
  for (std::int64_t i = 0; i < d.size(); ++i) rows[static_cast<std::size_t>(i)] = i;
  return gather_batch(d, rows);
}

// All-zero features force identical logits for every config: the validation
// loss is exactly ln(classes), so rewards isolate the cost penalty.
Batch zero_batch(int n, std::vector<int> feature_shape, int classes) {
  feature_shape.insert(feature_shape.begin(), n);
  Batch b;
  b.x = Tensor::zeros(feature_shape);
  b.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) b.labels[static_cast<std::size_t>(i)] = i % classes;
  return b;
}

void zero_head(PolicyNet& p) {
  for (auto& [name, t] : p.named_params()) {
    if (name == "policy.head.weight" || name == "policy.head.bias") {
      std::fill(t.values().begin(), t.values().end(), 0.0);
    }
  }
}

// A huge bias on one head logit makes every step pick that action.
void saturate_head(PolicyNet& p, int action) {
  for (auto& [name, t] : p.named_params()) {
    if (name == "policy.head.bias") t.values()[static_cast<std::size_t>(action)] = 1e3;
  }
}

double prob_first_action(PolicyNet& p) {
  std::vector<int> forced(static_cast<std::size_t>(p.steps()), 0);
  return p.rollout(nullptr, &forced).step_probs[0][0];
}

std::uint64_t params_checksum(Model& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto& [name, t] : m.named_params()) h = (h ^ bytes_checksum(t.values())) * 0x100000001b3ull;
  return h;
}

std::uint64_t stats_checksum(Model& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto& [name, v] : m.named_stats()) h = (h ^ bytes_checksum(*v)) * 0x100000001b3ull;
  return h;
}

std::uint64_t policy_checksum(PolicyNet& p) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto& [name, t] : p.named_params()) h = (h ^ bytes_checksum(t.values())) * 0x100000001b3ull;
  return h;
}

// Trains a one-step two-candidate policy on a fixed-arm bandit and returns
// the probability of the first candidate after each update.
std::vector<double> bandit_trace(double alpha, std::uint64_t sample_seed, int steps) {
  PolicyNet policy({2, 5}, 1, 11);
  zero_head(policy);
  SearchState st;
  st.alpha = alpha;
  RandomStream rng(sample_seed);
  std::vector<double> trace{prob_first_action(policy)};
  for (int k = 0; k < steps; ++k) {
    BitwidthConfig cfg = sample_config(policy, rng);
    const double r = cfg.bits[0] == 2 ? 0.0 : 1.0;  // lower reward = better arm
    reinforce_step(policy, {{cfg, r}}, st);
    trace.push_back(prob_first_action(policy));
  }
  return trace;
}

}  // namespace

TEST_CASE("rollout emits valid distributions consistent with its own scalars") {
  PolicyNet policy({2, 3, 4, 5}, 3, 7);
  RandomStream rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    PolicyRollout ro = policy.rollout(&rng, nullptr);
    REQUIRE(ro.actions.size() == 3);
    REQUIRE(ro.step_probs.size() == 3);
    double logp = 0.0, ent = 0.0;
    for (int t = 0; t < 3; ++t) {
      const auto& p = ro.step_probs[static_cast<std::size_t>(t)];
      REQUIRE(p.size() == 4);
      double sum = 0.0;
      for (double v : p) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
      const int a = ro.actions[static_cast<std::size_t>(t)];
      CHECK(a >= 0);
      CHECK(a < 4);
      logp += std::log(p[static_cast<std::size_t>(a)]);
      for (double v : p) ent -= v * std::log(v);
    }
    CHECK(ro.log_prob.item() == doctest::Approx(logp).epsilon(1e-10));
    CHECK(ro.entropy.item() == doctest::Approx(ent).epsilon(1e-10));
  }

  SUBCASE("construction and rollout contracts") {
    CHECK_THROWS_AS(PolicyNet({}, 2, 1), ConfigError);
    CHECK_THROWS_AS(PolicyNet({4, 3}, 2, 1), ConfigError);
    CHECK_THROWS_AS(PolicyNet({3, 3}, 2, 1), ConfigError);
    CHECK_THROWS_AS(PolicyNet({2, 4}, 0, 1), ConfigError);
    PolicyNet p({2, 4}, 2, 1);
    RandomStream r(0);
    std::vector<int> forced{0, 1};
    CHECK_THROWS_AS(p.rollout(&r, &forced), ValueError);
    CHECK_THROWS_AS(p.rollout(nullptr, nullptr), ValueError);
    std::vector<int> wrong{0};
    CHECK_THROWS_AS(p.rollout(nullptr, &wrong), ValueError);
    std::vector<int> range{0, 2};
    CHECK_THROWS_AS(p.rollout(nullptr, &range), ValueError);
    CHECK(p.candidate_index(4) == 1);
    CHECK_THROWS_AS(p.candidate_index(3), ValueError);
  }
}

TEST_CASE("zeroed head samples every configuration uniformly") {
  PolicyNet policy({2, 3, 4, 5}, 3, 123);
  zero_head(policy);
  RandomStream rng(9);
  std::map<std::vector<int>, int> counts;
  const int n = 64000;
  for (int i = 0; i < n; ++i) {
    BitwidthConfig cfg = sample_config(policy, rng);
    // All-zero logits give exactly uniform steps: log-prob is -3 ln 4.
    CHECK(cfg.log_prob == doctest::Approx(-3.0 * std::log(4.0)).epsilon(1e-9));
    counts[cfg.bits] += 1;
  }
  CHECK(counts.size() == 64);
  // Binomial(64000, 1/64): mean 1000, sigma ~31.4; 3 sigma band.
  for (const auto& [bits, c] : counts) {
    CHECK(c >= 906);
    CHECK(c <= 1094);
  }
}

TEST_CASE("saturated head is deterministic with vanishing log-prob and entropy") {
  PolicyNet policy({2, 3, 4, 5}, 3, 5);
  saturate_head(policy, 2);
  RandomStream rng(1);
  for (int i = 0; i < 20; ++i) {
    BitwidthConfig cfg = sample_config(policy, rng);
    CHECK(cfg.bits == std::vector<int>{4, 4, 4});
    CHECK(std::fabs(cfg.log_prob) <= 1e-6);
  }
  std::vector<int> forced{2, 2, 2};
  PolicyRollout ro = policy.rollout(nullptr, &forced);
  CHECK(std::fabs(ro.entropy.item()) <= 1e-6);
  RandomStream erng(5);
  CHECK(std::fabs(policy_entropy(policy, erng)) <= 1e-6);
}

TEST_CASE("replayed log-probabilities match the sampling pass") {
  PolicyNet policy({2, 3, 4, 5}, 4, 3);
  RandomStream rng(77);
  for (int i = 0; i < 20; ++i) {
    BitwidthConfig cfg = sample_config(policy, rng);
    CHECK(replay_log_prob(policy, cfg.bits) == doctest::Approx(cfg.log_prob).epsilon(1e-12));
  }
  CHECK_THROWS_AS(replay_log_prob(policy, {2, 3}), ValueError);
  CHECK_THROWS_AS(replay_log_prob(policy, {2, 3, 4, 7}), ValueError);
}

TEST_CASE("path entropy is exact at the uniform policy") {
  PolicyNet policy({2, 3, 4, 5}, 3, 11);
  zero_head(policy);
  RandomStream rng(4);
  // Every path sees the same uniform steps, so the estimate is exact.
  CHECK(policy_entropy(policy, rng) == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("rollout scalars differentiate correctly through the recurrence") {
  PolicyNet policy({2, 5}, 2, 21);
  const std::vector<int> forced{0, 1};
  std::vector<Tensor> probe_params;
  for (auto& [name, t] : policy.named_params()) {
    if (name == "policy.head.weight" || name == "policy.head.bias" ||
        name == "policy.lstm_i.b" || name == "policy.embed") {
      probe_params.push_back(t);
    }
  }
  REQUIRE(probe_params.size() == 4);

  SUBCASE("entropy gradient") {
    saq::testutil::check_grads_fd(
        probe_params, [&] { return policy.rollout(nullptr, &forced).entropy; }, 1e-5, 1e-5);
  }
  SUBCASE("log-prob gradient") {
    saq::testutil::check_grads_fd(
        probe_params, [&] { return policy.rollout(nullptr, &forced).log_prob; }, 1e-5, 1e-5);
  }
}

TEST_CASE("reward reduces to the plain validation loss at zero radius on budget") {
  Model model(miniconv_spec(1, 8, 4), quant_with({2, 3, 4, 5}), 31);
  Dataset data = template_images(256, 4, 8, 1.0, 5);
  Batch vb = whole_batch(data);
  BitwidthConfig cfg;
  cfg.bits = {3, 3, 3, 3};
  const std::vector<int> full = expand_config(model, cfg.bits);
  const CostReport cost = total_bops(model.spec(), full);

  RewardResult rr = compute_reward(model, cfg, vb, 0.0, 1e3, cost.total_bops);
  Tensor logits = model.forward(vb.x, full, Model::Mode::eval);
  const double plain = softmax_cross_entropy(logits, vb.labels).item();
  CHECK(rr.reward == plain);
  CHECK(rr.val_loss == plain);
  CHECK(rr.penalty == 0.0);
  CHECK(rr.bops == cost.total_bops);
  CHECK(rr.valid);
}

TEST_CASE("cost penalty matches the normalized quadratic in the budget gap") {
  // Bias-free net on all-zero inputs: loss is ln(3) for every config, so the
  // reward minus ln(3) must equal beta * ((c - C) / fp)^2 exactly.
  Model model(mlp_spec(2, 6, 3, false), quant_with({2, 3, 4, 5}), 13);
  Batch zb = zero_batch(24, {2}, 3);
  const double beta = 1e4;
  const CostReport ref = total_bops(model.spec(), model.uniform_config(3));
  const double budget = ref.total_bops;

  double prev = -1.0;
  for (int b : {3, 2, 4, 5}) {  // increasing |c - C| order
    BitwidthConfig cfg;
    cfg.bits = {b, b};
    const CostReport cost = total_bops(model.spec(), expand_config(model, cfg.bits));
    RewardResult rr = compute_reward(model, cfg, zb, 0.0, beta, budget);
    CHECK(rr.val_loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    const double gap = (cost.total_bops - budget) / cost.fp_bops;
    CHECK(rr.penalty == doctest::Approx(beta * gap * gap).epsilon(1e-9));
    CHECK(rr.reward == doctest::Approx(std::log(3.0) + beta * gap * gap).epsilon(1e-9));
    CHECK(rr.penalty > prev);  // strictly larger as the gap widens
    prev = rr.penalty;
  }
}

TEST_CASE("loss-ascent radius does not decrease the reward") {
  QuantSpec q = quant_with({2, 3, 4, 5});
  RandomStream inst(900);
  int wins = 0;
  for (int t = 0; t < 40; ++t) {
    Model m(mlp_spec(2, 6, 3), q, static_cast<std::uint64_t>(100 + t));
    Dataset d = make_synthetic(SyntheticKind::gaussians, 64, 3, 0.5,
                               static_cast<std::uint64_t>(200 + t));
    Batch b = whole_batch(d);
    BitwidthConfig cfg;
    cfg.bits = {q.bitwidth_set[inst.next_index(4)], q.bitwidth_set[inst.next_index(4)]};
    const double r0 = compute_reward(m, cfg, b, 0.0, 0.0, 0.0).reward;
    const double rp = compute_reward(m, cfg, b, 0.05, 0.0, 0.0).reward;
    wins += rp >= r0;
  }
  // First-order ascent can lose to curvature on rare instances.
  CHECK(wins >= 38);
}

TEST_CASE("non-finite validation loss maps to the invalid-reward sentinel") {
  Model model(mlp_spec(2, 6, 3), quant_with({2, 3, 4, 5}), 9);
  for (auto& [name, t] : model.named_params()) {
    if (name.find("bias") != std::string::npos) {
      t.values()[0] = std::numeric_limits<double>::quiet_NaN();
      break;
    }
  }
  Dataset d = make_synthetic(SyntheticKind::gaussians, 32, 3, 0.5, 2);
  Batch b = whole_batch(d);
  BitwidthConfig cfg;
  cfg.bits = {3, 3};
  RewardResult rr = compute_reward(model, cfg, b, 0.05, 1e3, 1e6);
  CHECK(rr.reward == kInvalidReward);
  CHECK_FALSE(rr.valid);
  CHECK_FALSE(model.perturbed());
}

TEST_CASE("search contract errors") {
  PolicyNet policy({2, 5}, 1, 0);
  SearchState st;
  CHECK_THROWS_AS(reinforce_gradient(policy, {}, st), ValueError);
  CHECK_THROWS_AS(reinforce_step(policy, {}, st), ValueError);

  SearchState bad;
  bad.alpha = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SearchState{};
  bad.beta = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SearchState{};
  bad.warmup_epochs = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  Model model(mlp_spec(2, 6, 3), quant_with({2, 5}), 1);
  Dataset d = make_synthetic(SyntheticKind::gaussians, 32, 3, 0.5, 3);
  Batch b = whole_batch(d);
  BitwidthConfig cfg;
  cfg.bits = {2, 5};
  CHECK_THROWS_AS(compute_reward(model, cfg, b, -0.1, 1.0, 1.0), ValueError);
  CHECK_THROWS_AS(compute_reward(model, cfg, b, 0.1, -1.0, 1.0), ValueError);

  PolicyNet p2({2, 5}, 2, 0);
  SearchState st2;
  SamqOptions opts;
  CHECK_THROWS_AS(samq_train(model, p2, d, d, -1, st2, opts), ValueError);
  RandomStream rng(0);
  CHECK_THROWS_AS(infer_config(p2, model, b, 1e18, 0, rng), ValueError);
}

TEST_CASE("two-armed bandit: the better arm grows monotonically") {
  const std::vector<double> trace = bandit_trace(5e-3, 99, 200);
  CHECK(trace.front() == doctest::Approx(0.5).epsilon(1e-12));
  // First update self-centers the baseline and the uniform point has zero
  // entropy gradient, so the probability must not move at all.
  CHECK(trace[1] == doctest::Approx(trace[0]).epsilon(1e-12));
  int drops = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) drops += trace[i] < trace[i - 1];
  CHECK(drops == 0);
  CHECK(trace.back() > 0.9);
}

TEST_CASE("overwhelming entropy weight pins the policy near uniform") {
  for (std::uint64_t seed : {99ull, 7ull, 123ull}) {
    const std::vector<double> trace = bandit_trace(100.0, seed, 200);
    CHECK(std::fabs(trace.back() - 0.5) <= 1e-2);
  }
}

TEST_CASE("stationary policy entropy increases with the entropy weight") {
  double prev = -1.0;
  for (double alpha : {0.0, 1e-3, 1e-2, 1e-1}) {
    PolicyNet policy({2, 5}, 1, 11);
    zero_head(policy);
    SearchState st;
    st.alpha = alpha;
    RandomStream rng(99);
    for (int k = 0; k < 200; ++k) {
      BitwidthConfig cfg = sample_config(policy, rng);
      reinforce_step(policy, {{cfg, cfg.bits[0] == 2 ? 0.0 : 1.0}}, st);
    }
    RandomStream erng(5);
    const double h = policy_entropy(policy, erng);
    CHECK(h > prev);
    prev = h;
  }
}

TEST_CASE("score-function estimator is unbiased against exact enumeration") {
  PolicyNet policy({2, 5}, 2, 21);
  const double alpha = 1e-2;
  SearchState st;
  st.alpha = alpha;
  st.use_baseline = true;
  st.baseline_ready = true;  // fixed constant baseline keeps the estimator unbiased
  st.baseline = 0.5;
  std::map<std::vector<int>, double> reward{
      {{2, 2}, 0.3}, {{2, 5}, 1.1}, {{5, 2}, 0.7}, {{5, 5}, 0.2}};

  // Exact gradient of J = sum_tau pi(tau) (R(tau) - alpha H(tau)) by
  // enumerating all four trajectories under one tape.
  std::vector<double> exact;
  {
    policy.zero_grad();
    Tape tape;
    Tensor j = Tensor::zeros({1});
    for (int a0 = 0; a0 < 2; ++a0) {
      for (int a1 = 0; a1 < 2; ++a1) {
        std::vector<int> forced{a0, a1};
        PolicyRollout ro = policy.rollout(nullptr, &forced);
        std::vector<int> bits{policy.candidates()[static_cast<std::size_t>(a0)],
                              policy.candidates()[static_cast<std::size_t>(a1)]};
        j = add(j, mul(exp_op(ro.log_prob),
                       add_scalar(scale(ro.entropy, -alpha), reward[bits])));
      }
    }
    tape.backward(j);
    for (auto& [name, p] : policy.named_params()) {
      const auto& g = p.grad();
      exact.insert(exact.end(), g.begin(), g.end());
    }
  }

  const std::size_t dim = exact.size();
  std::vector<double> mean(dim, 0.0), m2(dim, 0.0);
  RandomStream rng(1234);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    BitwidthConfig cfg = sample_config(policy, rng);
    const std::vector<double> g = reinforce_gradient(policy, {{cfg, reward[cfg.bits]}}, st);
    for (std::size_t d = 0; d < dim; ++d) {
      const double delta = g[d] - mean[d];
      mean[d] += delta / (i + 1);
      m2[d] += delta * (g[d] - mean[d]);
    }
  }

  // The per-component z-scores share the four-trajectory multinomial noise,
  // so a single 3-sigma bound across all components is stable.
  int over = 0;
  double max_z = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double se = std::sqrt(m2[d] / (n - 1.0) / n);
    if (se == 0.0) {
      CHECK(std::fabs(mean[d] - exact[d]) <= 1e-12);
      continue;
    }
    const double z = std::fabs(mean[d] - exact[d]) / se;
    max_z = std::max(max_z, z);
    over += z > 3.0;
  }
  CAPTURE(max_z);
  CHECK(over == 0);
}

TEST_CASE("reward evaluation and inference leave the model untouched") {
  Model model(miniconv_spec(1, 8, 4), quant_with({2, 3, 4, 5}), 31);
  Dataset data = template_images(128, 4, 8, 1.0, 5);
  Batch vb = whole_batch(data);
  const std::uint64_t p0 = params_checksum(model);
  const std::uint64_t s0 = stats_checksum(model);

  BitwidthConfig cfg;
  cfg.bits = {3, 4, 2, 5};
  compute_reward(model, cfg, vb, 0.05, 1e3, 1e6);
  CHECK(params_checksum(model) == p0);
  CHECK(stats_checksum(model) == s0);
  CHECK_FALSE(model.perturbed());

  eval_accuracy(model, vb, expand_config(model, cfg.bits));
  PolicyNet policy({2, 3, 4, 5}, 4, 8);
  RandomStream rng(2);
  infer_config(policy, model, vb, 1e18, 3, rng);
  CHECK(params_checksum(model) == p0);
  CHECK(stats_checksum(model) == s0);
}

TEST_CASE("zero-epoch alternating search is a no-op") {
  Model model(miniconv_spec(1, 8, 4), quant_with({2, 3, 4, 5}), 31);
  PolicyNet policy({2, 3, 4, 5}, 4, 8);
  Dataset data = template_images(128, 4, 8, 1.0, 5);
  SearchState st;
  SamqOptions opts;
  const std::uint64_t p0 = params_checksum(model);
  const std::uint64_t s0 = stats_checksum(model);
  const std::uint64_t c0 = policy_checksum(policy);
  samq_train(model, policy, data, data, 0, st, opts);
  CHECK(params_checksum(model) == p0);
  CHECK(stats_checksum(model) == s0);
  CHECK(policy_checksum(policy) == c0);
  CHECK(st.epoch == 0);
  CHECK_FALSE(st.baseline_ready);
}

TEST_CASE("warmup epochs train weights but keep the policy frozen") {
  Model model(miniconv_spec(1, 8, 4), quant_with({2, 3, 4, 5}), 31);
  PolicyNet policy({2, 3, 4, 5}, 4, 8);
  Dataset data = template_images(128, 4, 8, 1.0, 5);
  SearchState st;
  st.warmup_epochs = 2;
  st.budget = 1e9;
  SamqOptions opts;
  opts.weight_opt.schedule = {ScheduleKind::constant, 0.05, {}, 0.1, 1};
  opts.weight_opt.momentum = 0.9;
  opts.weight_opt.rho = 0.1;
  opts.weight_opt.m = 64;
  opts.train_batch_size = 64;
  opts.val_batch_size = 64;
  std::vector<double> logged_rewards;
  opts.log = [&](std::int64_t, double r, double) { logged_rewards.push_back(r); };

  const std::uint64_t c0 = policy_checksum(policy);
  const std::uint64_t p0 = params_checksum(model);
  samq_train(model, policy, data, data, 2, st, opts);
  CHECK(policy_checksum(policy) == c0);
  CHECK(params_checksum(model) != p0);
  CHECK(st.epoch == 2);
  REQUIRE(logged_rewards.size() == 2);
  CHECK(std::isnan(logged_rewards[0]));
  CHECK(std::isnan(logged_rewards[1]));
}

TEST_CASE("policy search against a frozen model drives the cost toward budget") {
  // Constant loss (all-zero inputs) isolates the penalty term: the policy's
  // expected penalty must shrink by a clear factor.
  Model model(miniconv_spec(1, 8, 4), quant_with({2, 3, 4, 5}), 31);
  Dataset zeros;
  zeros.features = Tensor::zeros({256, 1, 8, 8});
  zeros.labels.resize(256);
  for (int i = 0; i < 256; ++i) zeros.labels[static_cast<std::size_t>(i)] = i % 4;
  zeros.classes = 4;
  zeros.validate();

  const CostReport ref = total_bops(model.spec(), model.uniform_config(4));
  PolicyNet policy({2, 3, 4, 5}, 4, 77);
  SearchState st;
  st.alpha = 1e-3;
  st.beta = 1e5;
  st.budget = ref.total_bops;
  st.warmup_epochs = 0;
  SamqOptions opts;
  opts.weight_opt.schedule = {ScheduleKind::constant, 0.05, {}, 0.1, 1};
  opts.reward_rho = 0.0;
  opts.val_batch_size = 32;
  opts.seed = 3;
  opts.train_weights = false;

  const auto expected_penalty = [&](std::uint64_t seed) {
    RandomStream rng(seed);
    double acc = 0.0;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
      BitwidthConfig cfg = sample_config(policy, rng);
      acc += compute_reward(model, cfg, whole_batch(zeros), 0.0, st.beta, st.budget).penalty;
    }
    return acc / n;
  };

  const double before = expected_penalty(111);
  samq_train(model, policy, zeros, zeros, 80, st, opts);
  const double after = expected_penalty(222);
  CAPTURE(before);
  CAPTURE(after);
  CHECK(after < before / 3.0);
}

TEST_CASE("expand_config pins fixed endpoint layers") {
  ModelSpec spec = miniconv_spec(1, 8, 4);
  apply_fixed_endpoint_bitwidths(spec);
  Model model(spec, quant_with({2, 3, 4, 5}), 1);
  REQUIRE(model.searchable_positions().size() == 2);
  const std::vector<int> full = expand_config(model, {3, 5});
  REQUIRE(full.size() == 4);
  CHECK(full == std::vector<int>{8, 3, 5, 8});
  CHECK_THROWS_AS(expand_config(model, {3, 5, 2}), ValueError);
}

TEST_CASE("inference selection contracts") {
  Model model(miniconv_spec(1, 8, 4), quant_with({2, 3, 4, 5}), 31);
  Dataset data = template_images(128, 4, 8, 1.0, 5);
  Batch vb = whole_batch(data);
  const CostReport fp = total_bops(model.spec(), model.uniform_config(32));

  SUBCASE("a deterministic policy returns its only config") {
    PolicyNet policy({2, 3, 4, 5}, 4, 6);
    saturate_head(policy, 1);
    RandomStream rng(3);
    BitwidthConfig a = infer_config(policy, model, vb, fp.fp_bops, 1, rng);
    CHECK(a.bits == std::vector<int>{3, 3, 3, 3});
    BitwidthConfig b = infer_config(policy, model, vb, fp.fp_bops, 7, rng);
    CHECK(b.bits == std::vector<int>{3, 3, 3, 3});
  }

  SUBCASE("a budget that only admits the cheapest config forces it") {
    PolicyNet policy({2, 5}, 4, 6);
    zero_head(policy);
    const CostReport cheapest = total_bops(model.spec(), model.uniform_config(2));
    RandomStream rng(3);
    BitwidthConfig got = infer_config(policy, model, vb, cheapest.total_bops * 1.0001, 10, rng);
    CHECK(got.bits == std::vector<int>{2, 2, 2, 2});
  }

  SUBCASE("an unsatisfiable budget raises the infeasibility error") {
    PolicyNet policy({2, 3, 4, 5}, 4, 6);
    RandomStream rng(3);
    CHECK_THROWS_AS(infer_config(policy, model, vb, 1.0, 2, rng), InfeasibleError);
    try {
      infer_config(policy, model, vb, 1.0, 2, rng);
    } catch (const InfeasibleError& e) {
      CHECK(std::string(e.what()).find("budget C=") != std::string::npos);
    }
  }
}

TEST_CASE("full alternating search lands in the brute-force top tier") {
  // Desk-scale end-to-end run: four searchable layers, four candidate
  // bitwidths, 256 total configs. The budget admits only the cheapest layer
  // assignments, so the reward ranking has a wide penalty margin around its
  // top tier; the inferred config must be feasible and rank within the top
  // 5% (12 of 256).
  QuantSpec q = quant_with({3, 4, 5, 6});
  Model model(miniconv_spec(1, 8, 4), q, 31);
  Dataset all = template_images(2048, 4, 8, 1.0, 5);
  auto [train, val] = split_half(all, 17);
  Batch vfull = whole_batch(val);
  const double fp = total_bops(model.spec(), model.uniform_config(32)).fp_bops;
  const double budget = 0.009 * fp;
  const double beta = 3e5;

  PolicyNet policy({3, 4, 5, 6}, 4, 77);
  SearchState st;
  st.alpha = 5e-3;
  st.beta = beta;
  st.budget = budget;
  st.warmup_epochs = 10;
  SamqOptions opts;
  opts.weight_opt.schedule = {ScheduleKind::constant, 0.05, {}, 0.1, 1};
  opts.weight_opt.momentum = 0.9;
  opts.weight_opt.weight_decay = 5e-4;
  opts.weight_opt.rho = 0.1;
  opts.weight_opt.m = 64;
  opts.reward_rho = 0.05;
  opts.train_batch_size = 64;
  opts.val_batch_size = 128;
  opts.seed = 3;

  samq_train(model, policy, train, val, 100, st, opts);
  SamqOptions frozen = opts;
  frozen.train_weights = false;
  samq_train(model, policy, train, val, 200, st, frozen);

  RandomStream irng(55);
  BitwidthConfig chosen = infer_config(policy, model, vfull, budget, 20, irng);
  const double chosen_cost =
      total_bops(model.spec(), expand_config(model, chosen.bits)).total_bops;
  CHECK(chosen_cost <= budget);

  std::vector<std::pair<double, std::vector<int>>> table;
  for (int a : q.bitwidth_set)
    for (int b : q.bitwidth_set)
      for (int c : q.bitwidth_set)
        for (int d : q.bitwidth_set) {
          BitwidthConfig cfg;
          cfg.bits = {a, b, c, d};
          table.push_back(
              {compute_reward(model, cfg, vfull, 0.05, beta, budget).reward, cfg.bits});
        }
  REQUIRE(table.size() == 256);
  std::sort(table.begin(), table.end());
  int rank = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].second == chosen.bits) {
      rank = static_cast<int>(i) + 1;
      break;
    }
  }
  CAPTURE(rank);
  CHECK(rank >= 1);
  CHECK(rank <= 12);
}
