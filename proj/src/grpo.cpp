#include "focusloop/grpo.hpp"

#include "focusloop/error.hpp"
#include "focusloop/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace focusloop::grpo {

using agar::TokenKind;

// Objective ----------------------------------------------------------------

namespace {

double clipped_term(double p, double adv, double eps) {
    return std::min(p * adv, std::clamp(p, 1.0 - eps, 1.0 + eps) * adv);
}

// d/dp of clipped_term: the unclipped branch is selected whenever it is the
// minimum (ties included), otherwise the term is flat.
double clipped_slope(double p, double adv, double eps) {
    if (adv >= 0.0) return p <= 1.0 + eps ? adv : 0.0;
    return p >= 1.0 - eps ? adv : 0.0;
}

std::size_t count_trainable(const agar::TokenMask& mask) {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

}  // namespace

double surrogate_objective(std::span<const RolloutTokens> group, const GrpoParams& params, double kl_term) {
    if (group.empty()) throw Error(ErrorCode::EmptyGroup, "surrogate objective of an empty group");
    if (!(params.clip_epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "clip epsilon must be positive");
    double total = 0.0;
    for (const auto& r : group) {
        if (r.ratios.size() != r.mask.size()) {
            throw Error(ErrorCode::InvalidArgument, "ratios and mask differ in length");
        }
        const std::size_t n = count_trainable(r.mask);
        if (n == 0) throw Error(ErrorCode::NoTrainableTokens, "rollout has no text tokens");
        double sum = 0.0;
        for (std::size_t t = 0; t < r.ratios.size(); ++t) {
            if (!(r.ratios[t] > 0.0)) throw Error(ErrorCode::InvalidArgument, "probability ratios must be positive");
            if (r.mask[t]) sum += clipped_term(r.ratios[t], r.advantage, params.clip_epsilon);
        }
        total += sum / static_cast<double>(n);
    }
    return total / static_cast<double>(group.size()) - params.kl_beta * kl_term;
}

// Tabular policy -------------------------------------------------------------

TabularPolicy::TabularPolicy(int num_states, int num_actions)
    : states_(num_states), actions_(num_actions),
      logits_(static_cast<std::size_t>(std::max(num_states, 0)) * static_cast<std::size_t>(std::max(num_actions, 0))) {
    if (num_states < 1 || num_actions < 1) {
        throw Error(ErrorCode::InvalidArgument, "tabular policy needs at least one state and one action");
    }
}

std::size_t TabularPolicy::index(int s, int a) const {
    if (s < 0 || s >= states_ || a < 0 || a >= actions_) {
        throw Error(ErrorCode::IndexOutOfRange, "state/action outside the table");
    }
    return static_cast<std::size_t>(s) * static_cast<std::size_t>(actions_) + static_cast<std::size_t>(a);
}

std::vector<double> TabularPolicy::probs(int s) const {
    const std::size_t base = index(s, 0);
    const double m = *std::max_element(logits_.begin() + static_cast<std::ptrdiff_t>(base),
                                       logits_.begin() + static_cast<std::ptrdiff_t>(base + actions_));
    std::vector<double> p(static_cast<std::size_t>(actions_));
    double z = 0.0;
    for (int a = 0; a < actions_; ++a) {
        p[static_cast<std::size_t>(a)] = std::exp(logits_[base + static_cast<std::size_t>(a)] - m);
        z += p[static_cast<std::size_t>(a)];
    }
    for (double& v : p) v /= z;
    return p;
}

double TabularPolicy::log_prob(int s, int a) const {
    const std::size_t base = index(s, 0);
    double m = -std::numeric_limits<double>::infinity();
    for (int b = 0; b < actions_; ++b) m = std::max(m, logits_[base + static_cast<std::size_t>(b)]);
    double z = 0.0;
    for (int b = 0; b < actions_; ++b) z += std::exp(logits_[base + static_cast<std::size_t>(b)] - m);
    return logits_[index(s, a)] - m - std::log(z);
}

int TabularPolicy::sample(int s, std::mt19937_64& rng) const {
    const auto p = probs(s);
    const double u = uniform01(rng);
    double acc = 0.0;
    for (int a = 0; a < actions_; ++a) {
        acc += p[static_cast<std::size_t>(a)];
        if (u < acc) return a;
    }
    return actions_ - 1;
}

int TabularPolicy::greedy(int s) const {
    const auto p = probs(s);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

nlohmann::json TabularPolicy::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (int s = 0; s < states_; ++s) {
        const auto begin = logits_.begin() + static_cast<std::ptrdiff_t>(index(s, 0));
        rows.push_back(std::vector<double>(begin, begin + actions_));
    }
    return {{"num_states", states_}, {"num_actions", actions_}, {"logits", rows}};
}

TabularPolicy TabularPolicy::from_json(const nlohmann::json& j) {
    try {
        TabularPolicy p(j.at("num_states").get<int>(), j.at("num_actions").get<int>());
        const auto& rows = j.at("logits");
        if (!rows.is_array() || static_cast<int>(rows.size()) != p.states_) {
            throw Error(ErrorCode::SchemaError, "logits must have one row per state");
        }
        for (int s = 0; s < p.states_; ++s) {
            const auto row = rows[static_cast<std::size_t>(s)].get<std::vector<double>>();
            if (static_cast<int>(row.size()) != p.actions_) throw Error(ErrorCode::SchemaError, "logit row size");
            for (int a = 0; a < p.actions_; ++a) p.set_logit(s, a, row[static_cast<std::size_t>(a)]);
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("bad policy file: ") + e.what());
    }
}

// Batched objective and gradient ----------------------------------------------

double state_kl(const TabularPolicy& policy, const TabularPolicy& ref, int s) {
    const auto p = policy.probs(s);
    double kl = 0.0;
    for (int a = 0; a < policy.num_actions(); ++a) {
        const double pa = p[static_cast<std::size_t>(a)];
        if (pa > 0.0) kl += pa * (std::log(pa) - ref.log_prob(s, a));
    }
    return kl;
}

namespace {

void check_batch(std::span<const RolloutGroup> batch, const GrpoParams& params, const TabularPolicy* ref) {
    if (batch.empty()) throw Error(ErrorCode::EmptyGroup, "empty batch");
    if (params.kl_beta > 0.0 && !ref) throw Error(ErrorCode::InvalidArgument, "KL penalty needs a reference policy");
}

std::size_t trainable_tokens(const PolicyRollout& r) {
    std::size_t n = 0;
    for (const auto& t : r.tokens) n += t.kind == TokenKind::Text ? 1 : 0;
    if (n == 0) throw Error(ErrorCode::NoTrainableTokens, "rollout has no text tokens");
    return n;
}

}  // namespace

double batch_objective(const TabularPolicy& policy, std::span<const RolloutGroup> batch, const GrpoParams& params,
                       const TabularPolicy* ref) {
    check_batch(batch, params, ref);
    double total = 0.0;
    for (const auto& group : batch) {
        if (group.empty()) throw Error(ErrorCode::EmptyGroup, "empty rollout group");
        std::vector<RolloutTokens> tokens;
        tokens.reserve(group.size());
        double kl = 0.0;
        for (const auto& rollout : group) {
            RolloutTokens rt;
            rt.advantage = rollout.advantage;
            double kl_sum = 0.0;
            for (const auto& tok : rollout.tokens) {
                const bool text = tok.kind == TokenKind::Text;
                rt.mask.push_back(text);
                rt.ratios.push_back(text ? std::exp(policy.log_prob(tok.state, tok.action) - tok.old_log_prob) : 1.0);
                if (text && params.kl_beta > 0.0) kl_sum += state_kl(policy, *ref, tok.state);
            }
            kl += kl_sum / static_cast<double>(trainable_tokens(rollout));
            tokens.push_back(std::move(rt));
        }
        total += surrogate_objective(tokens, params, kl / static_cast<double>(group.size()));
    }
    return total / static_cast<double>(batch.size());
}

std::vector<double> surrogate_gradient(const TabularPolicy& policy, std::span<const RolloutGroup> batch,
                                       const GrpoParams& params, const TabularPolicy* ref) {
    check_batch(batch, params, ref);
    const int A = policy.num_actions();
    std::vector<double> grad(policy.logits().size(), 0.0);
    auto row = [&](int s) { return grad.begin() + static_cast<std::ptrdiff_t>(s) * A; };

    const double batch_weight = 1.0 / static_cast<double>(batch.size());
    for (const auto& group : batch) {
        if (group.empty()) throw Error(ErrorCode::EmptyGroup, "empty rollout group");
        const double group_weight = batch_weight / static_cast<double>(group.size());
        for (const auto& rollout : group) {
            const double w = group_weight / static_cast<double>(trainable_tokens(rollout));
            for (const auto& tok : rollout.tokens) {
                if (tok.kind != TokenKind::Text) continue;
                const auto pi = policy.probs(tok.state);
                const double ratio = std::exp(std::log(pi[static_cast<std::size_t>(tok.action)]) - tok.old_log_prob);
                const double slope = clipped_slope(ratio, rollout.advantage, params.clip_epsilon);
                auto g = row(tok.state);
                if (slope != 0.0) {
                    // d ratio / d z_j = ratio * (1[j == a] - pi_j)
                    for (int j = 0; j < A; ++j) {
                        const double onehot = j == tok.action ? 1.0 : 0.0;
                        g[j] += w * slope * ratio * (onehot - pi[static_cast<std::size_t>(j)]);
                    }
                }
                if (params.kl_beta > 0.0) {
                    // d KL / d z_j = pi_j (log(pi_j / ref_j) - KL)
                    const double kl = state_kl(policy, *ref, tok.state);
                    for (int j = 0; j < A; ++j) {
                        const double pj = pi[static_cast<std::size_t>(j)];
                        g[j] -= w * params.kl_beta * pj * (std::log(pj) - ref->log_prob(tok.state, j) - kl);
                    }
                }
            }
        }
    }
    return grad;
}

// Cold start -------------------------------------------------------------------

double mean_nll(const TabularPolicy& policy, std::span<const Demonstration> demos) {
    if (demos.empty()) throw Error(ErrorCode::EmptyDemonstrations, "no demonstrations");
    double nll = 0.0;
    for (const auto& d : demos) nll -= policy.log_prob(d.state, d.action);
    return nll / static_cast<double>(demos.size());
}

ColdStartResult cold_start_fit(const TabularPolicy& policy, std::span<const Demonstration> demos, int epochs,
                               double lr) {
    if (demos.empty()) throw Error(ErrorCode::EmptyDemonstrations, "no demonstrations");
    if (epochs < 0 || !(lr > 0.0)) throw Error(ErrorCode::InvalidArgument, "epochs >= 0 and lr > 0 required");
    ColdStartResult result{policy, {mean_nll(policy, demos)}};
    TabularPolicy& p = result.policy;
    const int A = p.num_actions();
    const double w = 1.0 / static_cast<double>(demos.size());
    std::vector<double> grad(p.logits().size());
    for (int e = 0; e < epochs; ++e) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const auto& d : demos) {
            const auto pi = p.probs(d.state);
            for (int j = 0; j < A; ++j) {
                grad[static_cast<std::size_t>(d.state) * static_cast<std::size_t>(A) + static_cast<std::size_t>(j)] +=
                    w * (pi[static_cast<std::size_t>(j)] - (j == d.action ? 1.0 : 0.0));
            }
        }
        auto logits = p.logits();
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] -= lr * grad[i];
        result.nll.push_back(mean_nll(p, demos));
    }
    return result;
}

// Synthetic environment binding ------------------------------------------------

SynthStateSpace::SynthStateSpace(const synth::SynthEnvConfig& env, int max_depth)
    : levels_(env.levels), max_depth_(max_depth) {
    if (levels_.empty() || max_depth < 0) throw Error(ErrorCode::InvalidArgument, "empty state space");
}

int SynthStateSpace::index(int level, const synth::SynthState& state) const {
    const auto it = std::find(levels_.begin(), levels_.end(), level);
    if (it == levels_.end()) throw Error(ErrorCode::UnknownResolution, "level " + std::to_string(level));
    if (state.depth < 0 || state.depth > max_depth_) throw Error(ErrorCode::IndexOutOfRange, "zoom depth");
    const int li = static_cast<int>(it - levels_.begin());
    return (li * (max_depth_ + 1) + state.depth) * 2 + (state.located ? 1 : 0);
}

namespace {

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> key) { return make_rng(key)(); }

std::string wrong_label(const synth::SynthTask& task, const synth::SynthEnvConfig& env) {
    const auto it = std::find(env.labels.begin(), env.labels.end(), task.gold);
    const auto idx = static_cast<std::size_t>(it - env.labels.begin());
    return env.labels[(idx + 1) % env.labels.size()];
}

synth::GridRegion elsewhere_cell(const synth::SynthTask& task, const synth::SynthEnvConfig& env) {
    const int x = (task.target.x + env.grid / 2) % env.grid;
    const int y = (task.target.y + env.grid / 2) % env.grid;
    return {x, y, x + 1, y + 1};
}

}  // namespace

TabularPolicy expert_table(const SynthStateSpace& space, const synth::SynthEnvConfig& env, int target_size,
                           double margin) {
    TabularPolicy p = space.make_policy();
    for (int level : space.levels()) {
        for (int depth = 0; depth <= space.max_depth(); ++depth) {
            for (bool located : {false, true}) {
                const synth::SynthState st{depth, located};
                const bool ready = located && synth::legible(level, depth, target_size, env);
                const int s = space.index(level, st);
                p.set_logit(s, ready ? kAnswer : kZoomTarget, margin);
            }
        }
    }
    return p;
}

std::vector<Demonstration> expert_demonstrations(int count, std::uint64_t seed, const synth::SynthEnvConfig& env,
                                                 const SynthStateSpace& space) {
    std::vector<Demonstration> demos;
    for (std::uint64_t j = 0; static_cast<int>(demos.size()) < count; ++j) {
        const int level = env.levels[j % env.levels.size()];
        const auto task = synth::make_task(derive_seed({seed, j, 0xdeULL}), level, env);
        synth::SynthState state;
        for (const auto& action : synth::scripted_expert(task, env)) {
            if (static_cast<int>(demos.size()) == count) break;
            const bool answer = std::holds_alternative<synth::AnswerAction>(action);
            demos.push_back({space.index(level, state), answer ? kAnswer : kZoomTarget});
            auto next = synth::env_step(task, state, action, env);
            if (auto* s = std::get_if<synth::SynthState>(&next)) state = *s;
        }
    }
    return demos;
}

RolloutResult sample_rollout(const TabularPolicy& policy, const synth::SynthTask& task,
                             const synth::SynthEnvConfig& env, const SynthStateSpace& space, int max_tool_calls,
                             std::mt19937_64& rng, int vision_tokens_per_zoom) {
    RolloutResult out;
    synth::SynthState state;
    const synth::GridRegion target_cell{task.target.x, task.target.y, task.target.x + 1, task.target.y + 1};
    for (;;) {
        const int s = space.index(task.level, state);
        const int a = policy.sample(s, rng);
        out.rollout.tokens.push_back({TokenKind::Text, s, a, policy.log_prob(s, a)});
        if (a == kAnswer) {
            const std::string label = synth::readable(task, state, env) ? task.gold : wrong_label(task, env);
            const auto term = std::get<synth::TerminalObservation>(
                synth::env_step(task, state, synth::AnswerAction{label}, env, &rng));
            out.outcome = agar::RolloutOutcome::of(term.correct,
                                                   out.zoom_calls == 0 ? agar::Shape::Direct : agar::Shape::ZoomIn);
            return out;
        }
        if (out.zoom_calls >= max_tool_calls) {
            out.outcome = agar::RolloutOutcome::of(false, agar::Shape::Invalid);
            return out;
        }
        const auto region = a == kZoomTarget ? target_cell : elsewhere_cell(task, env);
        state = std::get<synth::SynthState>(synth::env_step(task, state, synth::ZoomAction{region}, env));
        ++out.zoom_calls;
        for (int v = 0; v < vision_tokens_per_zoom; ++v) out.rollout.tokens.push_back({TokenKind::Vision, -1, -1, 0.0});
    }
}

nlohmann::json TrainLogEntry::to_json() const {
    return {{"iter", iter},
            {"mean_reward", mean_reward},
            {"accuracy", accuracy},
            {"mean_zoom_calls", mean_zoom_calls},
            {"direct_rate_legible", direct_rate_legible}};
}

TrainResult train_grpo(const TabularPolicy& policy, const TrainConfig& cfg) {
    if (!(cfg.grpo.clip_epsilon > 0.0 && cfg.grpo.clip_epsilon < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "clip_epsilon must lie in (0, 1)");
    }
    if (cfg.grpo.kl_beta < 0.0 || cfg.grpo.group_size < 1 || cfg.iterations < 0 || cfg.tasks_per_iteration < 1 ||
        cfg.updates_per_iteration < 1 || !(cfg.lr > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "invalid training configuration");
    }
    const SynthStateSpace space(cfg.env, cfg.max_tool_calls);
    if (policy.num_states() != space.num_states() || policy.num_actions() != kNumActions) {
        throw Error(ErrorCode::InvalidArgument, "policy does not match the synthetic state/action space");
    }

    TrainResult result{policy, {}};
    const TabularPolicy reference = policy;
    TabularPolicy& current = result.policy;
    const int G = cfg.grpo.group_size;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<RolloutGroup> batch;
        double reward_sum = 0.0, correct = 0.0, zooms = 0.0;
        int legible_n = 0, legible_direct = 0;

        for (int j = 0; j < cfg.tasks_per_iteration; ++j) {
            const int level = cfg.env.levels[static_cast<std::size_t>(j) % cfg.env.levels.size()];
            const auto task = synth::make_task(
                derive_seed({cfg.seed, static_cast<std::uint64_t>(iter), static_cast<std::uint64_t>(j)}), level,
                cfg.env);
            std::vector<RolloutResult> results;
            std::vector<agar::RolloutOutcome> outcomes;
            for (int i = 0; i < G; ++i) {
                auto rng = make_rng({cfg.seed, static_cast<std::uint64_t>(iter), static_cast<std::uint64_t>(j),
                                     static_cast<std::uint64_t>(i)});
                results.push_back(sample_rollout(current, task, cfg.env, space, cfg.max_tool_calls, rng,
                                                 cfg.vision_tokens_per_zoom));
                outcomes.push_back(results.back().outcome);
            }
            const int g = agar::group_signal(outcomes);
            std::vector<double> rewards;
            for (const auto& o : outcomes) {
                rewards.push_back(cfg.reward == RewardKind::Agar ? agar::agar_reward(o, g, cfg.agar)
                                                                 : agar::baseline_reward(o));
            }
            const auto adv = agar::group_advantages(rewards, cfg.advantage);

            const bool root_legible = synth::legible(task.level, 0, task.target_size, cfg.env);
            std::size_t longest = 0;
            for (const auto& r : results) longest = std::max(longest, r.rollout.tokens.size());
            RolloutGroup group;
            for (int i = 0; i < G; ++i) {
                auto& r = results[static_cast<std::size_t>(i)];
                r.rollout.advantage = adv[static_cast<std::size_t>(i)];
                r.rollout.tokens.resize(longest, PolicyToken{TokenKind::Padding, -1, -1, 0.0});
                group.push_back(std::move(r.rollout));
                reward_sum += rewards[static_cast<std::size_t>(i)];
                correct += r.outcome.correct ? 1.0 : 0.0;
                zooms += r.zoom_calls;
                if (root_legible) {
                    ++legible_n;
                    legible_direct += r.outcome.shape == agar::Shape::Direct ? 1 : 0;
                }
            }
            batch.push_back(std::move(group));
        }

        const TabularPolicy* ref = cfg.grpo.kl_beta > 0.0 ? &reference : nullptr;
        for (int u = 0; u < cfg.updates_per_iteration; ++u) {
            const double objective = batch_objective(current, batch, cfg.grpo, ref);
            const auto grad = surrogate_gradient(current, batch, cfg.grpo, ref);
            if (!std::isfinite(objective) ||
                !std::all_of(grad.begin(), grad.end(), [](double v) { return std::isfinite(v); })) {
                throw Error(ErrorCode::Divergence, "objective diverged at iteration " + std::to_string(iter));
            }
            auto logits = current.logits();
            for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += cfg.lr * grad[k];
        }

        const double n = static_cast<double>(cfg.tasks_per_iteration) * G;
        result.log.push_back({iter, reward_sum / n, correct / n, zooms / n,
                              legible_n ? static_cast<double>(legible_direct) / legible_n : 0.0});
    }
    return result;
}

PolicyEval evaluate_policy(const TabularPolicy& policy, const synth::SynthEnvConfig& env, int max_tool_calls,
                           int tasks_per_level, std::uint64_t seed) {
    if (tasks_per_level < 1) throw Error(ErrorCode::InvalidArgument, "tasks_per_level must be positive");
    const SynthStateSpace space(env, max_tool_calls);
    PolicyEval eval;
    int legible_n = 0, legible_direct = 0, illegible_n = 0, illegible_zoom = 0, correct_total = 0, total = 0;
    for (int level : env.levels) {
        LevelStats stats;
        stats.level = level;
        int correct = 0, direct = 0, zoom_sum = 0;
        for (int t = 0; t < tasks_per_level; ++t) {
            const auto task = synth::make_task(
                derive_seed({seed, static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(t), 0xe7ULL}), level,
                env);
            auto rng = make_rng({seed, static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(t)});
            const auto r = sample_rollout(policy, task, env, space, max_tool_calls, rng);
            correct += r.outcome.correct ? 1 : 0;
            direct += r.outcome.shape == agar::Shape::Direct ? 1 : 0;
            zoom_sum += r.zoom_calls;
            if (synth::legible(level, 0, task.target_size, env)) {
                ++legible_n;
                legible_direct += r.outcome.shape == agar::Shape::Direct ? 1 : 0;
            } else {
                ++illegible_n;
                illegible_zoom += r.zoom_calls > 0 ? 1 : 0;
            }
        }
        stats.n = tasks_per_level;
        stats.accuracy = static_cast<double>(correct) / tasks_per_level;
        stats.mean_zoom_calls = static_cast<double>(zoom_sum) / tasks_per_level;
        stats.direct_rate = static_cast<double>(direct) / tasks_per_level;
        correct_total += correct;
        total += tasks_per_level;
        eval.levels.push_back(stats);
    }
    eval.legible_direct_rate = legible_n ? static_cast<double>(legible_direct) / legible_n : 0.0;
    eval.illegible_zoom_rate = illegible_n ? static_cast<double>(illegible_zoom) / illegible_n : 0.0;
    eval.accuracy = static_cast<double>(correct_total) / total;
    return eval;
}

// Focus-engine adapter ----------------------------------------------------------

TabularFocusPolicy::TabularFocusPolicy(TabularPolicy policy, synth::SynthTask task, synth::SynthEnvConfig env,
                                       int max_depth, std::uint64_t seed)
    : policy_(std::move(policy)), task_(std::move(task)), env_(std::move(env)), space_(env_, max_depth),
      seed_(seed) {
    if (policy_.num_states() != space_.num_states() || policy_.num_actions() != kNumActions) {
        throw Error(ErrorCode::InvalidArgument, "policy does not match the synthetic state/action space");
    }
}

namespace {

// Grid cells touched by a root-frame box.
synth::GridRegion to_grid(const ExactBox& root, const synth::SynthTask& task, const synth::SynthEnvConfig& env) {
    const ExactBox scaled{root.x1 * env.grid / task.level, root.y1 * env.grid / task.level,
                          root.x2 * env.grid / task.level, root.y2 * env.grid / task.level};
    const Region cells = scaled.enclosing();
    return {std::clamp(cells.x1, 0, env.grid - 1), std::clamp(cells.y1, 0, env.grid - 1),
            std::clamp(cells.x2, 1, env.grid), std::clamp(cells.y2, 1, env.grid)};
}

Region place_box(int view_w, int view_h, int cx, int cy) {
    const int w = std::max(1, view_w / 2);
    const int h = std::max(1, view_h / 2);
    const int x1 = std::clamp(cx - w / 2, 0, view_w - w);
    const int y1 = std::clamp(cy - h / 2, 0, view_h - h);
    return {x1, y1, x1 + w, y1 + h};
}

}  // namespace

std::string TabularFocusPolicy::next_turn(const focus::TurnContext& ctx) {
    const auto chain = focus::frame_chain(ctx.history);
    synth::SynthState state;
    std::size_t k = 0;
    int view_w = ctx.root.width();
    int view_h = ctx.root.height();
    for (std::size_t i = 0; i < ctx.history.size(); ++i) {
        if (ctx.history[i].kind() != StepKind::Observation) continue;
        const Region& region = ctx.history[i - 1].as<ToolCallStep>().region;
        const auto root = to_root_frame_exact(ExactBox::of(region), std::span(chain).first(k));
        state = std::get<synth::SynthState>(
            synth::env_step(task_, state, synth::ZoomAction{to_grid(root, task_, env_)}, env_));
        const auto& obs = ctx.history[i].as<ObservationStep>();
        view_w = obs.image.width();
        view_h = obs.image.height();
        ++k;
    }
    state.depth = std::min(state.depth, space_.max_depth());

    auto rng = make_rng({seed_, static_cast<std::uint64_t>(k), 0xf0cULL});
    const int action = policy_.sample(space_.index(task_.level, state), rng);
    if (action == kAnswer) {
        const bool ok = synth::readable(task_, state, env_);
        const std::string label = ok ? task_.gold : wrong_label(task_, env_);
        return std::string("<think>") + (ok ? "The marked target is legible." : "I will answer with my best guess.") +
               "</think>\n<answer>" + label + "</answer>";
    }

    const auto cell = synth::cell_pixels(task_, {task_.target.x, task_.target.y, task_.target.x + 1, task_.target.y + 1},
                                         env_);
    const ExactBox in_view = from_root_frame_exact(ExactBox{cell.x1, cell.y1, cell.x2, cell.y2}, chain);
    const Rational cx = (in_view.x1 + in_view.x2) / 2;
    const Rational cy = (in_view.y1 + in_view.y2) / 2;
    Region box;
    if (action == kZoomTarget) {
        box = place_box(view_w, view_h, static_cast<int>(boost::rational_cast<double>(cx)),
                        static_cast<int>(boost::rational_cast<double>(cy)));
    } else {
        // First view corner whose footprint misses the target cell.
        const std::array<std::pair<int, int>, 4> corners{{{0, 0}, {view_w, 0}, {0, view_h}, {view_w, view_h}}};
        box = place_box(view_w, view_h, 0, 0);
        for (const auto& [x, y] : corners) {
            const Region candidate = place_box(view_w, view_h, x, y);
            const auto root = to_root_frame_exact(ExactBox::of(candidate), chain);
            if (!to_grid(root, task_, env_).contains(task_.target)) {
                box = candidate;
                break;
            }
        }
    }
    return "<think>The target is too small to read here; zooming in.</think>\n<tool_call>" +
           protocol::tool_call_payload(box) + "</tool_call>";
}

}  // namespace focusloop::grpo
