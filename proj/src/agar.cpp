#include "focusloop/agar.hpp"

#include "focusloop/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ostream>

namespace focusloop::agar {

int group_signal(std::span<const RolloutOutcome> outcomes) {
    if (outcomes.empty()) throw Error(ErrorCode::EmptyGroup, "group signal of an empty group");
    return std::any_of(outcomes.begin(), outcomes.end(),
                       [](const RolloutOutcome& o) { return o.correct && o.shape == Shape::Direct; })
               ? 1
               : 0;
}

double agar_reward(const RolloutOutcome& o, int g, const AgarParams& p) {
    if (!o.consistent()) throw Error(ErrorCode::InvalidArgument, "format flag contradicts shape");
    if (g != 0 && g != 1) throw Error(ErrorCode::InvalidArgument, "group signal must be 0 or 1");
    const double c = o.correct ? 1.0 : 0.0;
    const double f = o.format_valid ? 1.0 : 0.0;
    const double d = o.shape == Shape::Direct ? 1.0 : 0.0;
    const double z = o.shape == Shape::ZoomIn ? 1.0 : 0.0;
    return c * (d * 1.0 + z * (1.0 - p.delta * g)) + (1.0 - c) * (p.gamma * f);
}

double baseline_reward(const RolloutOutcome& o) {
    return 0.9 * (o.correct ? 1.0 : 0.0) + 0.1 * (o.format_valid ? 1.0 : 0.0);
}

std::vector<double> group_advantages(std::span<const double> rewards, const AdvantageParams& params) {
    if (rewards.empty()) throw Error(ErrorCode::EmptyGroup, "advantages of an empty group");
    if (!(params.epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
    // A flat group carries no signal; the rounded mean could still leave residue.
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; }))
        return std::vector<double>(rewards.size(), 0.0);
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sigma = std::sqrt(var / n);

    std::vector<double> adv;
    adv.reserve(rewards.size());
    for (double r : rewards) adv.push_back((r - mean) / (sigma + params.epsilon));
    return adv;
}

TokenMask token_mask(std::span<const TokenKind> kinds) {
    if (kinds.empty()) throw Error(ErrorCode::EmptyInput, "token list is empty");
    TokenMask mask(kinds.size());
    bool any = false;
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        mask[i] = kinds[i] == TokenKind::Text;
        any = any || mask[i];
    }
    if (!any) throw Error(ErrorCode::NoTrainableTokens, "no text tokens to train on");
    return mask;
}

namespace {

std::string normalize(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string strip_punct(const std::string& s) {
    std::string out;
    for (unsigned char c : s) {
        if (!std::ispunct(c) && !std::isspace(c)) out.push_back(static_cast<char>(c));
    }
    return out;
}

}  // namespace

bool default_match(std::string_view candidate, std::string_view gold) {
    const std::string c = normalize(candidate);
    const std::string g = normalize(gold);
    if (c == g) return true;
    const std::string letter = strip_punct(g);
    if (letter.size() == 1 && std::isalpha(static_cast<unsigned char>(letter[0]))) {
        return strip_punct(c) == letter;
    }
    return false;
}

RolloutOutcome outcome_of(const std::vector<protocol::Segment>& segments, std::string_view gold,
                          const AnswerMatcher& match) {
    const auto verdict = protocol::classify_format(segments);
    RolloutOutcome o{false, verdict.valid, verdict.shape};
    for (auto it = segments.rbegin(); it != segments.rend(); ++it) {
        if (it->kind == protocol::SegmentKind::Answer) {
            o.correct = match(it->text, gold);
            break;
        }
    }
    return o;
}

void write_reward_table_csv(std::ostream& out, const AgarParams& params) {
    out << "correct,format_valid,shape,g,agar_reward,baseline_reward\n";
    for (int c = 0; c <= 1; ++c) {
        for (Shape shape : {Shape::Direct, Shape::ZoomIn, Shape::Invalid}) {
            for (int g = 0; g <= 1; ++g) {
                const auto o = RolloutOutcome::of(c == 1, shape);
                out << c << ',' << (o.format_valid ? 1 : 0) << ',' << protocol::to_string(shape) << ',' << g << ','
                    << agar_reward(o, g, params) << ',' << baseline_reward(o) << '\n';
            }
        }
    }
}

}  // namespace focusloop::agar
