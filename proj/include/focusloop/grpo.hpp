#pragma once

#include "focusloop/agar.hpp"
#include "focusloop/focus.hpp"
#include "focusloop/synthenv.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace focusloop::grpo {

struct GrpoParams {
    double clip_epsilon = 0.2;
    double kl_beta = 0.0;
    int group_size = 8;
};

/// Per-token ratios pi/pi_old of one rollout, its mask and its advantage.
struct RolloutTokens {
    std::vector<double> ratios;
    agar::TokenMask mask;
    double advantage = 0.0;
};

/// (1/G) sum_i (1/sum_t m_it) sum_t m_it min(p A, clip(p, 1-eps, 1+eps) A) - beta kl.
/// Throws EmptyGroup, NoTrainableTokens, InvalidArgument (length mismatch,
/// non-positive ratio).
double surrogate_objective(std::span<const RolloutTokens> group, const GrpoParams& params, double kl_term = 0.0);

/// Softmax policy over a finite state/action table.
class TabularPolicy {
public:
    TabularPolicy(int num_states, int num_actions);

    int num_states() const noexcept { return states_; }
    int num_actions() const noexcept { return actions_; }

    double logit(int s, int a) const { return logits_[index(s, a)]; }
    void set_logit(int s, int a, double v) { logits_[index(s, a)] = v; }
    std::span<const double> logits() const noexcept { return logits_; }
    std::span<double> logits() noexcept { return logits_; }

    std::vector<double> probs(int s) const;
    double log_prob(int s, int a) const;
    int sample(int s, std::mt19937_64& rng) const;
    int greedy(int s) const;

    nlohmann::json to_json() const;
    static TabularPolicy from_json(const nlohmann::json& j);

    friend bool operator==(const TabularPolicy&, const TabularPolicy&) = default;

private:
    std::size_t index(int s, int a) const;

    int states_;
    int actions_;
    std::vector<double> logits_;
};

/// One position of a sampled rollout. Text tokens carry the decision taken
/// and its log-probability under the sampling policy.
struct PolicyToken {
    agar::TokenKind kind = agar::TokenKind::Text;
    int state = -1;
    int action = -1;
    double old_log_prob = 0.0;
};

struct PolicyRollout {
    std::vector<PolicyToken> tokens;
    double advantage = 0.0;
};

using RolloutGroup = std::vector<PolicyRollout>;

/// Exact discrete KL(pi(.|s) || ref(.|s)).
double state_kl(const TabularPolicy& policy, const TabularPolicy& ref, int s);

/// Mean over groups of surrogate_objective, with the KL term averaged with the
/// same masked per-rollout weighting. `ref` may be null when kl_beta is 0.
double batch_objective(const TabularPolicy& policy, std::span<const RolloutGroup> batch, const GrpoParams& params,
                       const TabularPolicy* ref = nullptr);

/// Analytic gradient of batch_objective with respect to the logits (same
/// layout as TabularPolicy::logits), pi_old frozen in the tokens.
std::vector<double> surrogate_gradient(const TabularPolicy& policy, std::span<const RolloutGroup> batch,
                                       const GrpoParams& params, const TabularPolicy* ref = nullptr);

// Cold start -------------------------------------------------------------------

struct Demonstration {
    int state = 0;
    int action = 0;
};

struct ColdStartResult {
    TabularPolicy policy;
    /// Mean NLL before training and after every epoch.
    std::vector<double> nll;
};

double mean_nll(const TabularPolicy& policy, std::span<const Demonstration> demos);

/// Full-batch gradient descent on the mean negative log-likelihood.
/// Throws EmptyDemonstrations.
ColdStartResult cold_start_fit(const TabularPolicy& policy, std::span<const Demonstration> demos, int epochs,
                               double lr);

// Synthetic environment binding ------------------------------------------------

enum Action : int { kAnswer = 0, kZoomTarget = 1, kZoomElsewhere = 2, kNumActions = 3 };

/// States are (resolution level, zoom depth, target-located flag).
class SynthStateSpace {
public:
    SynthStateSpace(const synth::SynthEnvConfig& env, int max_depth);

    int num_states() const noexcept { return static_cast<int>(levels_.size()) * (max_depth_ + 1) * 2; }
    int max_depth() const noexcept { return max_depth_; }
    int index(int level, const synth::SynthState& state) const;
    const std::vector<int>& levels() const noexcept { return levels_; }
    TabularPolicy make_policy() const { return TabularPolicy(num_states(), kNumActions); }

private:
    std::vector<int> levels_;
    int max_depth_;
};

/// Table that answers whenever the target is readable and zooms on it
/// otherwise, with every other action `margin` logits below. Readability uses
/// `target_size`.
TabularPolicy expert_table(const SynthStateSpace& space, const synth::SynthEnvConfig& env, int target_size,
                           double margin = 40.0);

/// (state, action) pairs along scripted-expert episodes, levels cycled,
/// truncated to exactly `count` pairs.
std::vector<Demonstration> expert_demonstrations(int count, std::uint64_t seed, const synth::SynthEnvConfig& env,
                                                 const SynthStateSpace& space);

struct RolloutResult {
    PolicyRollout rollout;
    agar::RolloutOutcome outcome;
    int zoom_calls = 0;
};

/// Samples one episode of the tabular policy on a task. Each decision is one
/// text token; each zoom appends `vision_tokens_per_zoom` vision tokens.
/// Exceeding `max_tool_calls` ends the rollout with an invalid format.
RolloutResult sample_rollout(const TabularPolicy& policy, const synth::SynthTask& task,
                             const synth::SynthEnvConfig& env, const SynthStateSpace& space, int max_tool_calls,
                             std::mt19937_64& rng, int vision_tokens_per_zoom = 2);

enum class RewardKind { Agar, Baseline };

struct TrainConfig {
    GrpoParams grpo;
    agar::AdvantageParams advantage;
    agar::AgarParams agar;
    RewardKind reward = RewardKind::Agar;
    int iterations = 500;
    std::uint64_t seed = 42;
    double lr = 0.05;
    int tasks_per_iteration = 14;
    int updates_per_iteration = 1;
    int max_tool_calls = 6;
    int vision_tokens_per_zoom = 2;
    synth::SynthEnvConfig env;
};

struct TrainLogEntry {
    int iter = 0;
    double mean_reward = 0.0;
    double accuracy = 0.0;
    double mean_zoom_calls = 0.0;
    double direct_rate_legible = 0.0;

    nlohmann::json to_json() const;
};

struct TrainResult {
    TabularPolicy policy;
    std::vector<TrainLogEntry> log;
};

/// GRPO on the synthetic environment. The KL reference is the initial policy.
/// Throws Divergence when the objective becomes non-finite.
TrainResult train_grpo(const TabularPolicy& policy, const TrainConfig& config);

struct LevelStats {
    int level = 0;
    int n = 0;
    double accuracy = 0.0;
    double mean_zoom_calls = 0.0;
    double direct_rate = 0.0;
};

struct PolicyEval {
    std::vector<LevelStats> levels;
    /// Over tasks legible at the root / illegible at the root.
    double legible_direct_rate = 0.0;
    double illegible_zoom_rate = 0.0;
    double accuracy = 0.0;
};

PolicyEval evaluate_policy(const TabularPolicy& policy, const synth::SynthEnvConfig& env, int max_tool_calls,
                           int tasks_per_level, std::uint64_t seed);

/// Adapts a trained tabular policy to the focus-engine protocol for one task:
/// decisions are sampled from the table, zoom boxes are placed on (or away
/// from) the task's target in the current view.
class TabularFocusPolicy final : public focus::Policy {
public:
    TabularFocusPolicy(TabularPolicy policy, synth::SynthTask task, synth::SynthEnvConfig env, int max_depth,
                       std::uint64_t seed);

    std::string next_turn(const focus::TurnContext& ctx) override;

private:
    TabularPolicy policy_;
    synth::SynthTask task_;
    synth::SynthEnvConfig env_;
    SynthStateSpace space_;
    std::uint64_t seed_;
};

}  // namespace focusloop::grpo
