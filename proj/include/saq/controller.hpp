#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "saq/costmodel.hpp"
#include "saq/data.hpp"
#include "saq/net.hpp"
#include "saq/optim.hpp"
#include "saq/rng.hpp"
#include "saq/tensor.hpp"

namespace saq {

// One autoregressive pass over the searchable layers. log_prob and entropy
// are scalar tensors; when the pass runs under an active Tape they are
// differentiable with respect to the policy parameters.
struct PolicyRollout {
  std::vector<int> actions;                     // candidate-set indices, length steps
  Tensor log_prob;                              // sum_t log pi_t(a_t)
  Tensor entropy;                               // sum_t H(pi_t) along the realized path
  std::vector<std::vector<double>> step_probs;  // per-step distributions (values only)
};

// Autoregressive bitwidth policy: an LSTM cell with hidden size 64 stepped
// once per searchable layer, a learned input embedding per candidate bitwidth
// plus a start embedding consumed by the first step, and a linear head
// mapping the hidden state to logits over the candidate set. Each step's
// softmax is a valid distribution; the decision at step t feeds step t+1.
class PolicyNet {
 public:
  static constexpr int kHidden = 64;
  static constexpr int kEmbed = 16;

  // candidates: strictly increasing bitwidths the policy chooses from;
  // steps: number of searchable layers (sequence length).
  PolicyNet(std::vector<int> candidates, int steps, std::uint64_t seed);

  const std::vector<int>& candidates() const { return candidates_; }
  int steps() const { return steps_; }
  int candidate_index(int bitwidth) const;  // ValueError if not a candidate

  // Exactly one of rng / forced must be non-null: sample fresh actions, or
  // replay a fixed action sequence (the gradient path for REINFORCE).
  PolicyRollout rollout(RandomStream* rng, const std::vector<int>* forced);

  // Trainable parameters with stable checkpoint names.
  std::vector<std::pair<std::string, Tensor>> named_params();
  void zero_grad();

  // Adam moment buffers, keyed like named_params (checkpoint surface).
  struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    std::int64_t t = 0;
  };
  AdamState& adam() { return adam_; }

 private:
  std::vector<int> candidates_;
  int steps_ = 0;
  Tensor embed_;                 // [candidates+1, kEmbed]; row 0 = start embedding
  Tensor w_x_[4], w_h_[4], b_[4];  // gate order: input, forget, cell, output
  Tensor head_w_;                // [kHidden, candidates]
  Tensor head_b_;                // [candidates]
  AdamState adam_;
};

// A sampled per-searchable-layer bitwidth assignment. Fixed-bitwidth layers
// are excluded from the sequence; log_prob is the exact joint log-probability
// under the policy that sampled it.
struct BitwidthConfig {
  std::vector<int> bits;
  double log_prob = 0.0;
};

// REINFORCE loop state. alpha weighs the entropy bonus, beta and budget set
// the cost penalty (dimensionless: BOPs are normalized by the model's
// full-precision BOPs inside compute_reward), and baseline is an exponential
// moving average (decay 0.9) of the entropy-adjusted returns seen by
// reinforce_step. use_baseline = false selects the raw score-function
// estimator.
struct SearchState {
  double alpha = 5e-3;
  double beta = 1e-4;
  double budget = 0.0;  // absolute bit-operations
  double baseline = 0.0;
  bool baseline_ready = false;
  bool use_baseline = true;
  std::int64_t warmup_epochs = 10;
  std::int64_t epoch = 0;

  void validate() const;  // alpha, beta >= 0; warmup_epochs >= 0
};

// Full per-quantized-layer config from per-searchable-layer bits; fixed
// endpoint layers keep their pinned bitwidth.
std::vector<int> expand_config(const Model& model, const std::vector<int>& bits);

// Samples one configuration (no gradients recorded); log_prob is exact.
BitwidthConfig sample_config(PolicyNet& policy, RandomStream& rng);

// Joint log-probability of a bitwidth sequence, recomputed by replay.
double replay_log_prob(PolicyNet& policy, const std::vector<int>& bits);

// Sum over steps of the per-step categorical entropy along one sampled
// trajectory's realized conditioning. Exact sequence entropy is intractable
// for long autoregressive policies; this realized-path sum is an unbiased
// estimate of it (chain rule), and is exact for path-independent policies.
double policy_entropy(PolicyNet& policy, RandomStream& rng);

// Reward for configs whose validation loss comes back non-finite: large
// enough to dominate any finite desk-scale loss plus penalty, so invalid
// configs are strongly discouraged without poisoning the run.
inline constexpr double kInvalidReward = 1e12;

struct RewardResult {
  double reward = 0.0;  // perturbed validation loss + cost penalty (lower is better)
  double val_loss = 0.0;
  double penalty = 0.0;
  double bops = 0.0;
  bool valid = true;    // false when the loss evaluation was non-finite
};

// Ascends the validation loss at the quantized weights by radius rho
// (epsilon-tilde = rho * g / ||g||; rho = 0 disables the perturbation),
// evaluates the perturbed loss, and adds beta * ((c - C) / fp_bops)^2.
// Eval-mode forwards only, so batch-norm statistics stay untouched.
RewardResult compute_reward(Model& model, const BitwidthConfig& config,
                            const Batch& val_batch, double rho, double beta, double budget);

struct RewardedSample {
  BitwidthConfig config;
  double reward = 0.0;
};

// Mean score-function gradient over the samples, concatenated in
// named_params order, with no parameter update. Per sample:
//   (R - alpha * H(tau) - baseline) * grad log pi(tau) - alpha * grad H(tau).
// Subtracting the realized-path entropy from the return keeps the estimator
// exactly unbiased for grad(E[R] - alpha * E[H]): the expectation of the
// missing score term E[H * grad log pi] is restored by the first product.
// The baseline comes from state and is not updated here.
std::vector<double> reinforce_gradient(PolicyNet& policy,
                                       const std::vector<RewardedSample>& samples,
                                       const SearchState& state);

// One Adam update (lr 5e-4, beta1 0.9, beta2 0.999, eps 1e-8, L2 weight
// decay 5e-5 added to the gradient) of the policy parameters on the
// reinforce_gradient estimator, then folds the batch's mean entropy-adjusted
// return into the exponential-moving-average baseline (decay 0.9; the first
// batch initializes it).
void reinforce_step(PolicyNet& policy, const std::vector<RewardedSample>& samples,
                    SearchState& state);

// Top-1 accuracy of an eval-mode forward under the given config.
double eval_accuracy(Model& model, const Batch& batch, const std::vector<int>& config);

struct SamqOptions {
  OptimConfig weight_opt;        // weight-phase optimizer; its rho drives epsilon-hat
  double reward_rho = 0.05;      // epsilon-tilde radius inside the reward
  std::int64_t train_batch_size = 128;
  std::int64_t val_batch_size = 256;
  std::uint64_t seed = 0;        // batch shuffling and policy sampling
  bool train_weights = true;     // off: policy search against a frozen model
  // Called once per epoch with (epoch, mean reward, mean train loss); the
  // reward is NaN during warmup, the loss is NaN when weights are frozen.
  std::function<void(std::int64_t, double, double)> log;
};

// Alternating search. Each epoch runs a policy phase over validation batches
// (sample one config per batch, reward it, one REINFORCE update) followed by
// a weight phase over training batches (fresh config per batch, two-pass
// sharpness-aware update on the shared weights). The first
// state.warmup_epochs epochs skip the policy phase, so the generator stays
// frozen while the switchable weight sets are initialized. state.epoch
// persists across calls and also positions the weight-phase lr schedule.
void samq_train(Model& model, PolicyNet& policy, const Dataset& train_data,
                const Dataset& val_data, std::int64_t epochs, SearchState& state,
                const SamqOptions& opts);

// Rejection-samples the policy until k configs satisfy c(b) <= budget
// (cap 100*k attempts; zero feasible -> infeasibility error naming the
// budget; fewer than k -> the collected set is used). Returns the feasible
// config with the highest validation accuracy; ties break toward lower BOPs,
// then lexicographically smaller bits.
BitwidthConfig infer_config(PolicyNet& policy, Model& model, const Batch& val_batch,
                            double budget, int k, RandomStream& rng);

}  // namespace saq
