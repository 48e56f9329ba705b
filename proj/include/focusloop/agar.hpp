#pragma once

#include "focusloop/protocol.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace focusloop::agar {

using protocol::Shape;

/// Per-rollout indicators: c (correct), f (format valid), d/z via shape.
struct RolloutOutcome {
    bool correct = false;
    bool format_valid = false;
    Shape shape = Shape::Invalid;

    /// Builds an outcome whose f is implied by the shape.
    static RolloutOutcome of(bool correct, Shape shape) {
        return {correct, shape != Shape::Invalid, shape};
    }
    bool consistent() const noexcept { return format_valid == (shape != Shape::Invalid); }
};

struct AgarParams {
    double delta = 0.2;  // zoom discount when the group solved the task directly
    double gamma = 0.1;  // format bonus for incorrect but well-formed output
};

struct AdvantageParams {
    double epsilon = 1e-6;
};

/// 1 iff some rollout is correct and Direct. Throws EmptyGroup.
int group_signal(std::span<const RolloutOutcome> outcomes);

/// r = c (d + z (1 - delta g)) + (1 - c) gamma f. Throws InvalidArgument for an
/// outcome whose format flag contradicts its shape.
double agar_reward(const RolloutOutcome& outcome, int g, const AgarParams& params = {});

/// Correctness-plus-format ablation: 0.9 c + 0.1 f.
double baseline_reward(const RolloutOutcome& outcome);

/// (r_i - mean) / (population stddev + epsilon). Throws EmptyGroup.
std::vector<double> group_advantages(std::span<const double> rewards, const AdvantageParams& params = {});

enum class TokenKind { Text, Vision, Padding };

using TokenMask = std::vector<bool>;

/// True exactly at text positions. Throws EmptyInput for an empty list and
/// NoTrainableTokens when no position is text.
TokenMask token_mask(std::span<const TokenKind> kinds);

/// Answer matcher used for c. Default: trimmed, case-insensitive equality;
/// single-letter multiple-choice golds are compared with punctuation removed.
using AnswerMatcher = std::function<bool(std::string_view candidate, std::string_view gold)>;
bool default_match(std::string_view candidate, std::string_view gold);

/// Indicators for a finished rollout: shape from classify_format, c from the
/// matcher applied to the final answer (recovered leniently even when the
/// format is invalid).
RolloutOutcome outcome_of(const std::vector<protocol::Segment>& segments, std::string_view gold,
                          const AnswerMatcher& match = default_match);

/// Writes every valid (c, shape, g) combination with both rewards as CSV.
void write_reward_table_csv(std::ostream& out, const AgarParams& params = {});

}  // namespace focusloop::agar
