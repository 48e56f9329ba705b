#include "focusloop/agar.hpp"
#include "focusloop/error.hpp"
#include "focusloop/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

using namespace focusloop;
using namespace focusloop::agar;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected a structured error");
    return ErrorCode::InvalidArgument;
}

// Independent piecewise statement of the reward table.
double reward_oracle(bool c, Shape shape, int g) {
    if (c) {
        if (shape == Shape::Direct) return 1.0;
        if (shape == Shape::ZoomIn) return g ? 0.8 : 1.0;
        return 0.0;
    }
    return shape == Shape::Invalid ? 0.0 : 0.1;
}

std::vector<double> advantages_by_hand(const std::vector<double>& r, double eps) {
    double mean = 0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    double var = 0;
    for (double v : r) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(r.size()));
    std::vector<double> out;
    for (double v : r) out.push_back((v - mean) / (sd + eps));
    return out;
}

}  // namespace

TEST_CASE("group signal") {
    const std::vector<RolloutOutcome> a{RolloutOutcome::of(true, Shape::Direct), RolloutOutcome::of(true, Shape::ZoomIn)};
    CHECK(group_signal(a) == 1);
    const std::vector<RolloutOutcome> b{RolloutOutcome::of(true, Shape::ZoomIn), RolloutOutcome::of(false, Shape::Direct)};
    CHECK(group_signal(b) == 0);
    CHECK(code_of([] { group_signal(std::vector<RolloutOutcome>{}); }) == ErrorCode::EmptyGroup);
}

TEST_CASE("reward spot values") {
    CHECK(agar_reward(RolloutOutcome::of(true, Shape::Direct), 1) == doctest::Approx(1.0));
    CHECK(agar_reward(RolloutOutcome::of(true, Shape::ZoomIn), 1) == doctest::Approx(0.8));
    CHECK(agar_reward(RolloutOutcome::of(false, Shape::ZoomIn), 1) == doctest::Approx(0.1));
    CHECK(agar_reward(RolloutOutcome::of(false, Shape::Direct), 0) == doctest::Approx(0.1));
    CHECK(agar_reward(RolloutOutcome::of(true, Shape::ZoomIn), 0) == doctest::Approx(1.0));
    CHECK(agar_reward(RolloutOutcome::of(false, Shape::Invalid), 1) == 0.0);
    CHECK(agar_reward(RolloutOutcome::of(true, Shape::Invalid), 1) == 0.0);
    CHECK(code_of([] { agar_reward(RolloutOutcome{true, false, Shape::Direct}, 1); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { agar_reward(RolloutOutcome{true, true, Shape::Invalid}, 1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("reward truth table matches the piecewise oracle") {
    for (bool c : {false, true})
        for (Shape s : {Shape::Direct, Shape::ZoomIn, Shape::Invalid})
            for (int g : {0, 1}) {
                CAPTURE(c);
                CAPTURE(g);
                CHECK(agar_reward(RolloutOutcome::of(c, s), g) == doctest::Approx(reward_oracle(c, s, g)).epsilon(1e-12));
            }
    const double cd = agar_reward(RolloutOutcome::of(true, Shape::Direct), 1);
    const double cz = agar_reward(RolloutOutcome::of(true, Shape::ZoomIn), 1);
    const double wv = agar_reward(RolloutOutcome::of(false, Shape::Direct), 1);
    const double wi = agar_reward(RolloutOutcome::of(false, Shape::Invalid), 1);
    CHECK(cd > cz);
    CHECK(cz > wv);
    CHECK(wv > wi);
}

TEST_CASE("baseline reward") {
    CHECK(baseline_reward(RolloutOutcome::of(true, Shape::Direct)) == doctest::Approx(1.0));
    CHECK(baseline_reward(RolloutOutcome::of(true, Shape::ZoomIn)) == doctest::Approx(1.0));
    CHECK(baseline_reward(RolloutOutcome::of(false, Shape::ZoomIn)) == doctest::Approx(0.1));
    CHECK(baseline_reward(RolloutOutcome::of(true, Shape::Invalid)) == doctest::Approx(0.9));
}

TEST_CASE("advantage examples") {
    const std::vector<double> r{1.0, 0.8, 0.1, 0.1};
    const auto a = group_advantages(r);
    const auto oracle = advantages_by_hand(r, 1e-6);
    const double expected[] = {1.2309, 0.7385, -0.9847, -0.9847};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
        CHECK(std::abs(a[i] - expected[i]) < 1e-4);
    }
    CHECK(group_advantages(std::vector<double>{0.5, 0.5, 0.5}) == std::vector<double>{0, 0, 0});
    CHECK(group_advantages(std::vector<double>{1.0}) == std::vector<double>{0});
    CHECK(code_of([] { group_advantages(std::vector<double>{}); }) == ErrorCode::EmptyGroup);
}

TEST_CASE("advantage properties on random groups") {
    auto rng = make_rng({31});
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 15);
        std::vector<double> r(n);
        for (auto& v : r) v = uniform01(rng) * 2 - 0.5;
        const auto a = group_advantages(r);
        const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
        REQUIRE(std::abs(mean) < 1e-9);
        double var = 0;
        for (double v : a) var += v * v;
        REQUIRE(std::abs(std::sqrt(var / static_cast<double>(n)) - 1.0) < 1e-3);

        const double shift = uniform01(rng) * 10 - 5;
        std::vector<double> shifted(r);
        for (auto& v : shifted) v += shift;
        const auto b = group_advantages(shifted);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(std::abs(a[i] - b[i]) < 1e-9);

        REQUIRE(std::max_element(a.begin(), a.end()) - a.begin() == std::max_element(r.begin(), r.end()) - r.begin());
    }
}

TEST_CASE("token mask") {
    using K = TokenKind;
    CHECK(token_mask(std::vector<K>{K::Text, K::Vision, K::Text, K::Padding}) == TokenMask{true, false, true, false});
    CHECK(token_mask(std::vector<K>{K::Text, K::Text}) == TokenMask{true, true});
    CHECK(code_of([] { token_mask(std::vector<K>{K::Vision, K::Vision}); }) == ErrorCode::NoTrainableTokens);
    CHECK(code_of([] { token_mask(std::vector<K>{}); }) == ErrorCode::EmptyInput);
}

TEST_CASE("answer matching") {
    CHECK(default_match(" Www.Proweld.co.uk ", "www.proweld.co.uk"));
    CHECK(default_match("(B)", "B"));
    CHECK(default_match("b.", "B"));
    CHECK_FALSE(default_match("C", "B"));
    CHECK_FALSE(default_match("blue", "red"));
}

TEST_CASE("outcome_of keeps correctness and format independent") {
    const auto direct = outcome_of({protocol::Segment::think("t"), protocol::Segment::answer("red")}, "red");
    CHECK(direct.correct);
    CHECK(direct.shape == Shape::Direct);
    CHECK(direct.format_valid);

    const auto invalid = outcome_of({protocol::Segment::answer("red"), protocol::Segment::think("t")}, "red");
    CHECK(invalid.correct);
    CHECK(invalid.shape == Shape::Invalid);
    CHECK_FALSE(invalid.format_valid);
    CHECK(agar_reward(invalid, 0) == 0.0);
}

TEST_CASE("reward table CSV lists every combination") {
    std::ostringstream out;
    write_reward_table_csv(out);
    const std::string csv = out.str();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
}
