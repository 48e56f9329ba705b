#pragma once

#include "focusloop/grpo.hpp"
#include "focusloop/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace testing {

struct GradientInstance {
    focusloop::grpo::TabularPolicy policy{1, 2};
    focusloop::grpo::TabularPolicy ref{1, 2};
    std::vector<focusloop::grpo::RolloutGroup> batch;
    focusloop::grpo::GrpoParams params;
};

/// Small random tabular problem whose ratios stay clear of the clip kinks,
/// so central differences are meaningful.
inline GradientInstance random_gradient_instance(std::mt19937_64& rng) {
    using namespace focusloop;
    using namespace focusloop::grpo;
    const int S = 1 + static_cast<int>(uniform_index(rng, 4));
    const int A = 2 + static_cast<int>(uniform_index(rng, 3));
    GradientInstance inst;
    inst.policy = TabularPolicy(S, A);
    inst.ref = TabularPolicy(S, A);
    for (auto& v : inst.policy.logits()) v = uniform01(rng) * 2 - 1;
    for (auto& v : inst.ref.logits()) v = uniform01(rng) * 2 - 1;
    inst.params.clip_epsilon = 0.1 + 0.2 * uniform01(rng);
    inst.params.kl_beta = uniform_index(rng, 2) ? 0.0 : 0.5 * uniform01(rng);
    const double lo = 1 - inst.params.clip_epsilon, hi = 1 + inst.params.clip_epsilon;

    const int groups = 1 + static_cast<int>(uniform_index(rng, 2));
    for (int gi = 0; gi < groups; ++gi) {
        RolloutGroup group;
        const int G = 1 + static_cast<int>(uniform_index(rng, 4));
        for (int i = 0; i < G; ++i) {
            PolicyRollout r;
            r.advantage = uniform01(rng) * 4 - 2;
            const int T = 1 + static_cast<int>(uniform_index(rng, 5));
            for (int t = 0; t < T; ++t) {
                PolicyToken tok;
                tok.state = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(S)));
                tok.action = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(A)));
                const double lp = inst.policy.log_prob(tok.state, tok.action);
                double ratio;
                do {
                    ratio = 0.5 + uniform01(rng);
                } while (std::abs(ratio - lo) < 1e-3 || std::abs(ratio - hi) < 1e-3);
                tok.old_log_prob = lp - std::log(ratio);
                r.tokens.push_back(tok);
                if (uniform_index(rng, 3) == 0) {
                    PolicyToken other;
                    other.kind = uniform_index(rng, 2) ? agar::TokenKind::Vision : agar::TokenKind::Padding;
                    r.tokens.push_back(other);
                }
            }
            group.push_back(std::move(r));
        }
        inst.batch.push_back(std::move(group));
    }
    return inst;
}

/// Central differences of batch_objective with step h.
inline std::vector<double> numeric_gradient(const GradientInstance& inst, double h = 1e-5) {
    using namespace focusloop::grpo;
    TabularPolicy p = inst.policy;
    std::vector<double> g(p.logits().size());
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double orig = p.logits()[k];
        p.logits()[k] = orig + h;
        const double up = batch_objective(p, inst.batch, inst.params, &inst.ref);
        p.logits()[k] = orig - h;
        const double down = batch_objective(p, inst.batch, inst.params, &inst.ref);
        p.logits()[k] = orig;
        g[k] = (up - down) / (2 * h);
    }
    return g;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return diff / std::max(scale, 1e-6);
}

}  // namespace testing
