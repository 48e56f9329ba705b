#include "focusloop/error.hpp"
#include "focusloop/geometry.hpp"
#include "focusloop/image.hpp"
#include "focusloop/trajectory.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace focusloop;

namespace {

Trajectory answered_tcoa() {
    Trajectory t;
    t.image = ImageRef::descriptor("root", 200, 100);
    t.query = "what is written on the door?";
    t.steps = {StepRecord::think("find the door"), StepRecord::tool_call({0, 0, 50, 50}),
               StepRecord::observation(ImageRef::descriptor("root#zoom1", 100, 100), 16,
                                       FrameTransform::zoom({0, 0, 50, 50}, 2)),
               StepRecord::answer("exit")};
    t.terminal = Terminal::answered("exit");
    return t;
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected a structured error");
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("rebuild_history returns the step prefix") {
    Trajectory t = answered_tcoa();
    CHECK(rebuild_history(t, 1).empty());
    const auto h4 = rebuild_history(t, 4);
    REQUIRE(h4.size() == 3);
    CHECK(h4[0].kind() == StepKind::Think);
    CHECK(h4[1].kind() == StepKind::ToolCall);
    CHECK(h4[2].kind() == StepKind::Observation);
    CHECK(rebuild_history(t, 5).size() == 4);
    CHECK(code_of([&] { rebuild_history(t, t.steps.size() + 2); }) == ErrorCode::IndexOutOfRange);
    CHECK(code_of([&] { rebuild_history(t, 0); }) == ErrorCode::IndexOutOfRange);
}

TEST_CASE("rebuild_history with three steps and i=1 is empty") {
    Trajectory t;
    t.steps = {StepRecord::think("a"), StepRecord::think("b"), StepRecord::think("c")};
    t.terminal = Terminal::step_limit();
    CHECK(rebuild_history(t, 1).empty());
}

TEST_CASE("history prefix and remaining steps partition the trajectory") {
    auto rng = make_rng({11});
    for (int trial = 0; trial < 200; ++trial) {
        Trajectory t;
        t.steps = testing::random_steps(rng, trial % 2 == 0);
        t.terminal = trial % 2 == 0 ? Terminal::answered("final") : Terminal::step_limit();
        validate(t);
        for (std::size_t i = 1; i <= t.steps.size() + 1; ++i) {
            auto joined = rebuild_history(t, i);
            joined.insert(joined.end(), t.steps.begin() + static_cast<std::ptrdiff_t>(i - 1), t.steps.end());
            REQUIRE(joined == t.steps);
        }
    }
}

TEST_CASE("ledger_of counts zooms and added tokens") {
    Trajectory direct;
    direct.steps = {StepRecord::think("easy"), StepRecord::answer("x")};
    direct.terminal = Terminal::answered("x");
    const TokenLedger l0 = ledger_of(direct, 256);
    CHECK(l0.zoom_calls == 0);
    CHECK(l0.added_visual_tokens == 0);
    CHECK(l0.base_visual_tokens == 256);
    CHECK(l0.total_visual_tokens() == 256);
    CHECK(l0.text_tokens == 2);

    const Region r{0, 0, 10, 10};
    std::vector<StepRecord> two = {
        StepRecord::tool_call(r), StepRecord::observation(ImageRef::descriptor("a", 20, 20), 100, {}),
        StepRecord::tool_call(r), StepRecord::observation(ImageRef::descriptor("b", 20, 20), 150, {})};
    const TokenLedger l2 = ledger_of(two, 0);
    CHECK(l2.added_visual_tokens == 250);
    CHECK(l2.zoom_calls == 2);

    std::vector<StepRecord> bad = {StepRecord::observation(ImageRef::descriptor("a", 2, 2), 1, {}),
                                   StepRecord::answer("x")};
    CHECK(code_of([&] { ledger_of(bad, 0); }) == ErrorCode::MalformedTrajectory);
}

TEST_CASE("ledger_of is additive over concatenation") {
    auto rng = make_rng({12});
    for (int trial = 0; trial < 200; ++trial) {
        auto a = testing::random_steps(rng, false);
        auto b = testing::random_steps(rng, trial % 3 == 0);
        auto ab = a;
        ab.insert(ab.end(), b.begin(), b.end());
        const auto la = ledger_of(a, 0), lb = ledger_of(b, 0), lab = ledger_of(ab, 0);
        REQUIRE(lab.zoom_calls == la.zoom_calls + lb.zoom_calls);
        REQUIRE(lab.added_visual_tokens == la.added_visual_tokens + lb.added_visual_tokens);
    }
}

TEST_CASE("validate rejects malformed step orders") {
    auto bad = [](std::vector<StepRecord> steps, Terminal term) {
        Trajectory t;
        t.steps = std::move(steps);
        t.terminal = std::move(term);
        return code_of([&] { validate(t); });
    };
    const Region r{0, 0, 4, 4};
    const auto obs = StepRecord::observation(ImageRef::descriptor("o", 8, 8), 1, {});
    CHECK(bad({StepRecord::think("a"), obs}, Terminal::step_limit()) == ErrorCode::MalformedTrajectory);
    CHECK(bad({StepRecord::answer("a"), StepRecord::answer("b")}, Terminal::answered("b")) ==
          ErrorCode::MalformedTrajectory);
    CHECK(bad({StepRecord::answer("a"), StepRecord::think("b")}, Terminal::answered("a")) ==
          ErrorCode::MalformedTrajectory);
    CHECK(bad({StepRecord::tool_call(r), obs}, Terminal::answered("a")) == ErrorCode::MalformedTrajectory);
}

TEST_CASE("trajectory JSONL round trip") {
    Trajectory t = answered_tcoa();
    t.image = t.image.with_path("imgs/root.ppm");
    t.warnings = {"clamped region"};
    const std::string line = to_jsonl_line(t);
    CHECK(line.find('\n') == std::string::npos);
    CHECK(trajectory_from_jsonl_line(line) == t);

    auto j = nlohmann::json::parse(line);
    CHECK(j["steps"][0]["kind"] == "think");
    CHECK(j["steps"][1]["kind"] == "tool_call");
    CHECK(j["steps"][2]["kind"] == "observation");
    CHECK(j["steps"][3]["kind"] == "answer");
    CHECK(j["image"]["path"] == "imgs/root.ppm");
    CHECK(j["image"]["width"] == 200);
}

TEST_CASE("strict JSON rejects unknown fields; lenient ignores them") {
    auto j = to_json(answered_tcoa());
    j["extra"] = 1;
    CHECK(code_of([&] { trajectory_from_json(j); }) == ErrorCode::SchemaError);
    CHECK(trajectory_from_json(j, false) == answered_tcoa());

    auto k = to_json(answered_tcoa());
    k["steps"][0]["mood"] = "curious";
    CHECK(code_of([&] { trajectory_from_json(k); }) == ErrorCode::SchemaError);
    CHECK(code_of([&] { trajectory_from_jsonl_line("{not json"); }) == ErrorCode::SchemaError);
}

TEST_CASE("random trajectories survive JSONL") {
    auto rng = make_rng({13});
    for (int trial = 0; trial < 100; ++trial) {
        Trajectory t;
        t.image = ImageRef::descriptor("img" + std::to_string(trial), 640, 480);
        t.query = "q";
        t.steps = testing::random_steps(rng, true);
        t.terminal = Terminal::answered("final");
        REQUIRE(trajectory_from_jsonl_line(to_jsonl_line(t)) == t);
    }
}

TEST_CASE("count_text_tokens splits on whitespace") {
    CHECK(count_text_tokens("") == 0);
    CHECK(count_text_tokens("  one two\tthree\n") == 3);
}

TEST_CASE("frame transforms are exact") {
    const auto z = FrameTransform::zoom({100, 100, 300, 200}, 2);
    const ExactBox child = z.to_child(ExactBox::of({100, 100, 300, 200}));
    CHECK(child.to_region() == Region{0, 0, 400, 200});
    CHECK(z.to_parent(child).to_region() == Region{100, 100, 300, 200});

    const ExactBox half{Rational(1, 2), 0, 3, 3};
    CHECK_FALSE(half.is_integral());
    CHECK(half.enclosing() == Region{0, 0, 3, 3});
    CHECK(code_of([&] { half.to_region(); }) == ErrorCode::InvalidRegion);
}

TEST_CASE("PPM files round trip") {
    testing::TempDir dir("ppm");
    const auto img = testing::patterned_image("p", 13, 7);
    const auto path = dir.path / "p.ppm";
    write_ppm(path, img);
    const auto hdr = read_ppm_header(path);
    CHECK(hdr.width == 13);
    CHECK(hdr.height == 7);
    const auto back = read_ppm(path, "p");
    REQUIRE(back.width() == 13);
    CHECK(back.path() == path.string());
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 13; ++x) REQUIRE(back.pixel(x, y) == img.pixel(x, y));
    CHECK(code_of([&] { read_ppm(dir.path / "missing.ppm"); }) == ErrorCode::IoError);
}

TEST_CASE("resize_long_side keeps aspect") {
    const auto img = testing::patterned_image("r", 100, 50);
    const auto small = resize_long_side(img, 40);
    CHECK(small.width() == 40);
    CHECK(small.height() == 20);
    CHECK(small.pixel(39, 19) == img.pixel(97, 47));
}
