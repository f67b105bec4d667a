#include "saq/controller.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "saq/probe.hpp"

namespace saq {

namespace {

constexpr double kInitRange = 0.08;

Tensor uniform_init(std::vector<int> shape, RandomStream& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-kInitRange, kInitRange);
  t.set_requires_grad(true);
  return t;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::int64_t epoch, int phase) {
  std::uint64_t h =
      seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(epoch) * 2 + phase + 1);
  h ^= h >> 29;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 32;
  return h;
}

}  // namespace

PolicyNet::PolicyNet(std::vector<int> candidates, int steps, std::uint64_t seed)
    : candidates_(std::move(candidates)), steps_(steps) {
  if (candidates_.empty()) throw ConfigError("PolicyNet: candidate bitwidth set is empty");
  for (std::size_t i = 1; i < candidates_.size(); ++i) {
    if (candidates_[i] <= candidates_[i - 1]) {
      throw ConfigError("PolicyNet: candidate bitwidths must be strictly increasing");
    }
  }
  if (steps_ < 1) throw ConfigError("PolicyNet: needs at least one searchable layer");
  const int s = static_cast<int>(candidates_.size());
  RandomStream rng(seed);
  embed_ = uniform_init({s + 1, kEmbed}, rng);
  for (int g = 0; g < 4; ++g) {
    w_x_[g] = uniform_init({kEmbed, kHidden}, rng);
    w_h_[g] = uniform_init({kHidden, kHidden}, rng);
    // Forget gate starts open (bias 1), the usual LSTM stabilizer.
    b_[g] = Tensor::full({kHidden}, g == 1 ? 1.0 : 0.0);
    b_[g].set_requires_grad(true);
  }
  head_w_ = uniform_init({kHidden, s}, rng);
  head_b_ = Tensor::zeros({s});
  head_b_.set_requires_grad(true);
}

int PolicyNet::candidate_index(int bitwidth) const {
  const auto it = std::find(candidates_.begin(), candidates_.end(), bitwidth);
  if (it == candidates_.end()) {
    throw ValueError("PolicyNet: " + std::to_string(bitwidth) + " is not a candidate bitwidth");
  }
  return static_cast<int>(it - candidates_.begin());
}

PolicyRollout PolicyNet::rollout(RandomStream* rng, const std::vector<int>* forced) {
  if ((rng == nullptr) == (forced == nullptr)) {
    throw ValueError("PolicyNet::rollout: pass exactly one of rng / forced");
  }
  const int s = static_cast<int>(candidates_.size());
  if (forced != nullptr) {
    if (static_cast<int>(forced->size()) != steps_) {
      throw ValueError("PolicyNet::rollout: forced sequence holds " +
                       std::to_string(forced->size()) + " actions for " +
                       std::to_string(steps_) + " steps");
    }
    for (int a : *forced) {
      if (a < 0 || a >= s) throw ValueError("PolicyNet::rollout: action index out of range");
    }
  }
  PolicyRollout out;
  Tensor h = Tensor::zeros({1, kHidden});
  Tensor c = Tensor::zeros({1, kHidden});
  Tensor x = embedding_row(embed_, 0);
  Tensor log_prob = Tensor::zeros({1});
  Tensor entropy = Tensor::zeros({1});
  for (int t = 0; t < steps_; ++t) {
    Tensor gi = sigmoid(add_bias(add(matmul(x, w_x_[0]), matmul(h, w_h_[0])), b_[0]));
    Tensor gf = sigmoid(add_bias(add(matmul(x, w_x_[1]), matmul(h, w_h_[1])), b_[1]));
    Tensor gc = tanh_op(add_bias(add(matmul(x, w_x_[2]), matmul(h, w_h_[2])), b_[2]));
    Tensor go = sigmoid(add_bias(add(matmul(x, w_x_[3]), matmul(h, w_h_[3])), b_[3]));
    c = add(mul(gf, c), mul(gi, gc));
    h = mul(go, tanh_op(c));
    Tensor logp = log_softmax(add_bias(matmul(h, head_w_), head_b_));
    std::vector<double> probs(s);
    for (int j = 0; j < s; ++j) probs[j] = std::exp(logp.values()[j]);
    const int a = forced != nullptr ? (*forced)[t] : static_cast<int>(rng->categorical(probs));
    out.actions.push_back(a);
    out.step_probs.push_back(std::move(probs));
    log_prob = add(log_prob, select_element(logp, a));
    // -sum_j p_j log p_j with p = exp(log p), differentiable through both.
    entropy = add(entropy, neg(sum(mul(exp_op(logp), logp))));
    x = embedding_row(embed_, 1 + a);
  }
  out.log_prob = log_prob;
  out.entropy = entropy;
  return out;
}

std::vector<std::pair<std::string, Tensor>> PolicyNet::named_params() {
  static const char* kGate[4] = {"i", "f", "g", "o"};
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("policy.embed", embed_);
  for (int g = 0; g < 4; ++g) {
    const std::string base = std::string("policy.lstm_") + kGate[g];
    out.emplace_back(base + ".w_x", w_x_[g]);
    out.emplace_back(base + ".w_h", w_h_[g]);
    out.emplace_back(base + ".b", b_[g]);
  }
  out.emplace_back("policy.head.weight", head_w_);
  out.emplace_back("policy.head.bias", head_b_);
  return out;
}

void PolicyNet::zero_grad() {
  for (auto& [name, t] : named_params()) t.zero_grad();
}

void SearchState::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("SearchState: alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("SearchState: beta must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("SearchState: warmup_epochs must be >= 0");
}

std::vector<int> expand_config(const Model& model, const std::vector<int>& bits) {
  const auto quantized = model.spec().quantized_layers();
  const auto positions = model.searchable_positions();
  if (bits.size() != positions.size()) {
    throw ValueError("expand_config: got " + std::to_string(bits.size()) + " bitwidths for " +
                     std::to_string(positions.size()) + " searchable layers");
  }
  std::vector<int> full(quantized.size(), 0);
  for (std::size_t i = 0; i < quantized.size(); ++i) {
    full[i] = model.spec().layers[quantized[i]].fixed_bitwidth;
  }
  for (std::size_t i = 0; i < positions.size(); ++i) full[positions[i]] = bits[i];
  return full;
}

BitwidthConfig sample_config(PolicyNet& policy, RandomStream& rng) {
  const PolicyRollout ro = policy.rollout(&rng, nullptr);
  BitwidthConfig out;
  out.bits.reserve(ro.actions.size());
  for (int a : ro.actions) out.bits.push_back(policy.candidates()[a]);
  out.log_prob = ro.log_prob.item();
  return out;
}

double replay_log_prob(PolicyNet& policy, const std::vector<int>& bits) {
  std::vector<int> idx(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) idx[i] = policy.candidate_index(bits[i]);
  return policy.rollout(nullptr, &idx).log_prob.item();
}

double policy_entropy(PolicyNet& policy, RandomStream& rng) {
  return policy.rollout(&rng, nullptr).entropy.item();
}

RewardResult compute_reward(Model& model, const BitwidthConfig& config, const Batch& val_batch,
                            double rho, double beta, double budget) {
  if (!(rho >= 0.0)) throw ValueError("compute_reward: rho must be >= 0");
  if (!(beta >= 0.0)) throw ValueError("compute_reward: beta must be >= 0");
  const std::vector<int> full = expand_config(model, config.bits);
  const CostReport report = total_bops(model.spec(), full);
  RewardResult out;
  out.bops = report.total_bops;
  out.penalty = constraint_penalty(report.total_bops, budget, beta, report.fp_bops);
  double loss = std::numeric_limits<double>::quiet_NaN();
  try {
    ModelSurface surface(model, val_batch, full);
    std::vector<double> theta(static_cast<std::size_t>(surface.dim()), 0.0);
    if (rho > 0.0) {
      const std::vector<double> eps = scaled_epsilon(surface.gradient(theta), rho);
      loss = surface.loss(eps);
    } else {
      loss = surface.loss(theta);
    }
  } catch (const NumericError&) {
    // Strict-finite forwards throw instead of returning NaN; restore the
    // unperturbed weights and fall through to the sentinel.
    if (model.perturbed()) model.remove_perturbation();
    loss = std::numeric_limits<double>::quiet_NaN();
  }
  out.val_loss = loss;
  if (!std::isfinite(loss) || !std::isfinite(out.penalty)) {
    out.valid = false;
    out.reward = kInvalidReward;
    return out;
  }
  out.reward = loss + out.penalty;
  return out;
}

namespace {

// Backward pass of the surrogate whose parameter gradient is the REINFORCE
// estimator; leaves the estimator in the policy's grad slots and returns the
// mean entropy-adjusted return. With self_center_first an uninitialized
// baseline is replaced by the batch mean (first-step transient only);
// otherwise an uninitialized baseline contributes zero.
double estimator_backward(PolicyNet& policy, const std::vector<RewardedSample>& samples,
                          const SearchState& state, bool self_center_first) {
  state.validate();
  if (samples.empty()) throw ValueError("reinforce: needs at least one rewarded sample");
  policy.zero_grad();
  Tape tape;
  std::vector<PolicyRollout> rollouts;
  rollouts.reserve(samples.size());
  std::vector<double> adjusted;
  adjusted.reserve(samples.size());
  for (const RewardedSample& s : samples) {
    std::vector<int> idx(s.config.bits.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      idx[i] = policy.candidate_index(s.config.bits[i]);
    }
    rollouts.push_back(policy.rollout(nullptr, &idx));
    adjusted.push_back(s.reward - state.alpha * rollouts.back().entropy.item());
  }
  double mean_adjusted = 0.0;
  for (double r : adjusted) mean_adjusted += r;
  mean_adjusted /= static_cast<double>(adjusted.size());
  double base = 0.0;
  if (state.use_baseline) {
    base = state.baseline_ready ? state.baseline : (self_center_first ? mean_adjusted : 0.0);
  }
  Tensor total = Tensor::zeros({1});
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const Tensor term = add(scale(rollouts[i].log_prob, adjusted[i] - base),
                            scale(rollouts[i].entropy, -state.alpha));
    total = add(total, term);
  }
  total = scale(total, 1.0 / static_cast<double>(rollouts.size()));
  tape.backward(total);
  return mean_adjusted;
}

// Adam with L2 weight decay folded into the gradient; moments live on the
// policy so successive steps see a continuous trajectory.
void adam_apply(PolicyNet& policy) {
  constexpr double kLr = 5e-4;
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  constexpr double kDecay = 5e-5;
  PolicyNet::AdamState& st = policy.adam();
  st.t += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.t));
  for (auto& [name, p] : policy.named_params()) {
    std::vector<double>& vals = p.values();
    const std::vector<double>& g0 = p.grad();
    std::vector<double>& m = st.m[name];
    std::vector<double>& v = st.v[name];
    if (m.empty()) m.assign(vals.size(), 0.0);
    if (v.empty()) v.assign(vals.size(), 0.0);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = g0[i] + kDecay * vals[i];
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
      vals[i] -= kLr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
    }
  }
}

}  // namespace

std::vector<double> reinforce_gradient(PolicyNet& policy,
                                       const std::vector<RewardedSample>& samples,
                                       const SearchState& state) {
  estimator_backward(policy, samples, state, false);
  std::vector<double> out;
  for (auto& [name, p] : policy.named_params()) {
    const std::vector<double>& g = p.grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

void reinforce_step(PolicyNet& policy, const std::vector<RewardedSample>& samples,
                    SearchState& state) {
  const double mean_adjusted = estimator_backward(policy, samples, state, true);
  adam_apply(policy);
  if (state.use_baseline) {
    state.baseline =
        state.baseline_ready ? 0.9 * state.baseline + 0.1 * mean_adjusted : mean_adjusted;
    state.baseline_ready = true;
  }
}

double eval_accuracy(Model& model, const Batch& batch, const std::vector<int>& config) {
  const std::int64_t n = static_cast<std::int64_t>(batch.labels.size());
  if (n == 0) throw ValueError("eval_accuracy: empty batch");
  const Tensor logits = model.forward(batch.x, config, Model::Mode::eval);
  const int classes = logits.shape()[1];
  std::int64_t correct = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    const double* row = logits.values().data() + r * classes;
    int best = 0;
    for (int j = 1; j < classes; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == batch.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

void samq_train(Model& model, PolicyNet& policy, const Dataset& train_data,
                const Dataset& val_data, std::int64_t epochs, SearchState& state,
                const SamqOptions& opts) {
  state.validate();
  if (epochs < 0) throw ValueError("samq_train: epochs must be >= 0");
  if (epochs == 0) return;
  Optimizer opt(model, opts.weight_opt);
  RandomStream sampler(opts.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
  for (std::int64_t e = 0; e < epochs; ++e) {
    double reward_sum = 0.0;
    std::int64_t reward_n = 0;
    if (state.epoch >= state.warmup_epochs) {
      const auto val_batches =
          make_batches(val_data, opts.val_batch_size, epoch_seed(opts.seed, state.epoch, 0), false);
      for (const Batch& vb : val_batches) {
        const BitwidthConfig cfg = sample_config(policy, sampler);
        const RewardResult rr =
            compute_reward(model, cfg, vb, opts.reward_rho, state.beta, state.budget);
        reinforce_step(policy, {{cfg, rr.reward}}, state);
        reward_sum += rr.reward;
        ++reward_n;
      }
    }
    double loss_sum = 0.0;
    std::int64_t loss_n = 0;
    if (opts.train_weights) {
      opt.set_schedule_step(state.epoch);
      const auto train_batches = make_batches(train_data, opts.train_batch_size,
                                              epoch_seed(opts.seed, state.epoch, 1), false);
      for (const Batch& tb : train_batches) {
        const BitwidthConfig cfg = sample_config(policy, sampler);
        loss_sum += opt.saq_step(tb, expand_config(model, cfg.bits));
        ++loss_n;
      }
    }
    state.epoch += 1;
    if (opts.log) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      opts.log(state.epoch, reward_n > 0 ? reward_sum / static_cast<double>(reward_n) : nan,
               loss_n > 0 ? loss_sum / static_cast<double>(loss_n) : nan);
    }
  }
}

BitwidthConfig infer_config(PolicyNet& policy, Model& model, const Batch& val_batch,
                            double budget, int k, RandomStream& rng) {
  if (k < 1) throw ValueError("infer_config: k must be >= 1");
  const std::int64_t cap = 100LL * k;
  std::vector<std::pair<BitwidthConfig, double>> feasible;  // (config, bops)
  std::int64_t attempts = 0;
  while (attempts < cap && static_cast<int>(feasible.size()) < k) {
    ++attempts;
    BitwidthConfig cand = sample_config(policy, rng);
    const CostReport report = total_bops(model.spec(), expand_config(model, cand.bits));
    if (report.total_bops <= budget) feasible.emplace_back(std::move(cand), report.total_bops);
  }
  if (feasible.empty()) {
    throw InfeasibleError("infer_config: no feasible configuration within budget C=" +
                          std::to_string(budget) + " bit-operations after " +
                          std::to_string(attempts) + " attempts");
  }
  std::map<std::vector<int>, double> accuracy;
  for (const auto& [cand, bops] : feasible) {
    if (accuracy.find(cand.bits) == accuracy.end()) {
      accuracy[cand.bits] = eval_accuracy(model, val_batch, expand_config(model, cand.bits));
    }
  }
  const std::pair<BitwidthConfig, double>* best = nullptr;
  for (const auto& entry : feasible) {
    if (best == nullptr) {
      best = &entry;
      continue;
    }
    const double a = accuracy[entry.first.bits];
    const double b = accuracy[best->first.bits];
    const bool better = a > b || (a == b && entry.second < best->second) ||
                        (a == b && entry.second == best->second &&
                         std::lexicographical_compare(entry.first.bits.begin(),
                                                      entry.first.bits.end(),
                                                      best->first.bits.begin(),
                                                      best->first.bits.end()));
    if (better) best = &entry;
  }
  return best->first;
}

}  // namespace saq
