#include "focusloop/dataforge.hpp"
#include "focusloop/error.hpp"
#include "focusloop/focus.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <sstream>

using namespace focusloop;
using namespace focusloop::forge;

namespace {

const std::vector<int> kLevels{224, 336, 448, 672, 1024, 1920, 2560};

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected a structured error");
    return ErrorCode::InvalidArgument;
}

OracleAnswer yes(const std::string& answer) { return {true, answer, 0.9, "clearly " + answer}; }
OracleAnswer no() { return {false, "", std::nullopt, "too small"}; }

Oracle from_sequence(std::vector<bool> answerable, const std::string& gold) {
    auto k = std::make_shared<std::size_t>(0);
    return [answerable, gold, k](const ImageRef&, const std::string&) {
        const bool a = answerable[(*k)++ % answerable.size()];
        return a ? yes(gold) : no();
    };
}

/// Records every string and region handed to the search tools.
class SpyToolset final : public AgentToolset {
public:
    std::vector<std::string> seen;
    int verify_calls = 0;
    int accept_on = 2;
    Region first_box{0, 0, 10, 10};

    Region locate(const ImageRef& image, const std::string& description, const std::optional<Region>&) override {
        seen.push_back(description);
        seen.push_back(image.id());
        return first_box;
    }
    OracleAnswer understand(const ImageRef& image, const std::string& query) override {
        seen.push_back(query);
        seen.push_back(image.id());
        return verify_calls + 1 >= accept_on ? yes("red") : OracleAnswer{true, "blue", std::nullopt, "maybe blue"};
    }
    Region adjust_bbox(const Region& region, const ImageRef& image, const std::string& instruction) override {
        seen.push_back(instruction);
        seen.push_back(image.id());
        return {region.x1, region.y1, region.x1 + region.width() / 2, region.y1 + region.height() / 2};
    }
    VerifyResult verify(const std::string& candidate, const std::string& gold) override {
        ++verify_calls;
        if (candidate == gold) return {true, {}};
        return {false, "look at the upper left"};
    }
};

Trajectory answered(int zooms) {
    Trajectory t;
    t.image = ImageRef::descriptor("img", 100, 100);
    t.query = "q";
    for (int i = 0; i < zooms; ++i) {
        t.steps.push_back(StepRecord::think("step " + std::to_string(i)));
        t.steps.push_back(StepRecord::think("still looking"));
        t.steps.push_back(StepRecord::tool_call({i, i, i + 10, i + 10}));
        t.steps.push_back(StepRecord::observation(ImageRef::descriptor("z", 20, 20), 1, {}));
    }
    t.steps.push_back(StepRecord::think("done"));
    t.steps.push_back(StepRecord::answer("red"));
    t.terminal = Terminal::answered("red");
    return t;
}

}  // namespace

TEST_CASE("probe: consistent oracle is direct everywhere") {
    const auto img = testing::patterned_image("src", 64, 64);
    const std::vector<Oracle> oracles{[](const ImageRef&, const std::string&) { return yes("red"); }};
    const auto res = probe_answerability(oracles, img, "colour?", "red", kLevels);
    CHECK(res.repeats == 5);
    for (const auto& p : res.levels) CHECK(p.category == ProbeCategory::DirectAnswerable);
    CHECK(res.at(448).reasoning == "clearly red");
    CHECK(code_of([&] { res.at(500); }) == ErrorCode::UnknownResolution);
}

TEST_CASE("probe: resolution threshold oracle") {
    const auto img = testing::patterned_image("src", 300, 200);
    std::atomic<int> calls{0};
    const std::vector<Oracle> oracles{[&](const ImageRef& view, const std::string&) {
        ++calls;
        return std::max(view.width(), view.height()) >= 1024 ? yes("red") : no();
    }};
    const auto res = probe_answerability(oracles, img, "colour?", "red", kLevels);
    for (const auto& p : res.levels)
        CHECK(p.category == (p.level >= 1024 ? ProbeCategory::DirectAnswerable : ProbeCategory::NeedsZoom));
    CHECK(calls == 35);
}

TEST_CASE("probe: alternating oracle is discarded") {
    const auto img = testing::patterned_image("src", 64, 64);
    const std::vector<Oracle> oracles{from_sequence({true, false}, "red")};
    const auto res = probe_answerability(oracles, img, "colour?", "red", kLevels);
    for (const auto& p : res.levels) {
        CHECK(p.category == ProbeCategory::Discarded);
        CHECK_FALSE(p.reason.empty());
    }
}

TEST_CASE("probe: wrong answers, failures and disagreeing oracles") {
    const auto img = testing::patterned_image("src", 64, 64);
    const std::vector<int> one{224};
    const std::vector<Oracle> wrong{[](const ImageRef&, const std::string&) { return yes("blue"); }};
    CHECK(probe_answerability(wrong, img, "q", "red", one).at(224).category == ProbeCategory::NeedsZoom);

    const std::vector<Oracle> broken{[](const ImageRef&, const std::string&) -> OracleAnswer {
        throw std::runtime_error("endpoint down");
    }};
    const auto b = probe_answerability(broken, img, "q", "red", one).at(224);
    CHECK(b.category == ProbeCategory::Discarded);
    CHECK(b.reason.find("oracle failure") != std::string::npos);

    const std::vector<Oracle> pair{[](const ImageRef&, const std::string&) { return yes("red"); },
                                   [](const ImageRef&, const std::string&) { return no(); }};
    CHECK(probe_answerability(pair, img, "q", "red", one).at(224).category == ProbeCategory::Discarded);

    const std::vector<Oracle> none;
    CHECK(code_of([&] { probe_answerability(none, img, "q", "red", one); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { probe_answerability(wrong, img, "q", "red", std::vector<int>{}); }) ==
          ErrorCode::InvalidArgument);
    CHECK(code_of([&] { probe_answerability(wrong, img, "q", "red", one, 0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("probe is invariant to the order of repeats") {
    const auto img = testing::patterned_image("src", 64, 64);
    auto rng = make_rng({51});
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<bool> seq(5);
        for (std::size_t i = 0; i < 5; ++i) seq[i] = uniform_index(rng, 3) != 0;
        const std::vector<Oracle> a{from_sequence(seq, "red")};
        std::vector<bool> perm = seq;
        std::shuffle(perm.begin(), perm.end(), rng);
        const std::vector<Oracle> b{from_sequence(perm, "red")};
        const std::vector<int> one{336};
        REQUIRE(probe_answerability(a, img, "q", "red", one).at(336).category ==
                probe_answerability(b, img, "q", "red", one).at(336).category);
    }
}

TEST_CASE("agent search: target found on the second step") {
    const auto img = testing::patterned_image("root", 200, 200);
    SpyToolset tools;
    tools.first_box = {0, 0, 100, 100};
    const auto out = agent_search(tools, img, "What colour is the sign?", "red", 4);
    REQUIRE(std::holds_alternative<Trajectory>(out));
    const auto& t = std::get<Trajectory>(out);
    CHECK(t.terminal == Terminal::answered("red"));
    CHECK(ledger_of(t, 0).zoom_calls == 2);
    validate(t);
    CHECK(t.steps[1].as<ToolCallStep>().region == Region{0, 0, 100, 100});
    CHECK(t.steps[5].as<ToolCallStep>().region == Region{0, 0, 100, 100});
    const auto& obs = t.steps[6].as<ObservationStep>();
    CHECK(obs.image.width() == 200);
    CHECK(to_root_frame({0, 0, 200, 200}, focus::frame_chain(t.steps)) == Region{0, 0, 50, 50});
    CHECK(std::find(tools.seen.begin(), tools.seen.end(), "look at the upper left") != tools.seen.end());
}

TEST_CASE("agent search never shows the gold answer to the search tools") {
    const auto img = testing::patterned_image("root", 128, 128);
    const std::string gold = "GOLD-7f3a";
    SpyToolset tools;
    tools.accept_on = 100;
    (void)agent_search(tools, img, "Which label is shown?", gold, 5);
    CHECK(tools.verify_calls == 5);
    CHECK_FALSE(tools.seen.empty());
    for (const auto& s : tools.seen) CHECK(s.find(gold) == std::string::npos);
}

TEST_CASE("agent search failures") {
    const auto img = testing::patterned_image("root", 128, 128);
    SpyToolset rejecting;
    rejecting.accept_on = 1000;
    const auto out = agent_search(rejecting, img, "q", "red", 3);
    REQUIRE(std::holds_alternative<SearchFailure>(out));
    const auto& f = std::get<SearchFailure>(out);
    CHECK(f.kind == FailureKind::StepLimit);
    CHECK(ledger_of(f.partial, 0).zoom_calls == 3);

    SpyToolset outside;
    outside.first_box = {100, 100, 300, 300};
    const auto out2 = agent_search(outside, img, "q", "red", 3);
    REQUIRE(std::holds_alternative<SearchFailure>(out2));
    CHECK(std::get<SearchFailure>(out2).kind == FailureKind::ToolError);

    SpyToolset lenient;
    lenient.first_box = {100, 100, 300, 300};
    const auto out3 = agent_search(lenient, img, "q", "red", 3, protocol::ParseMode::Lenient);
    REQUIRE(std::holds_alternative<Trajectory>(out3));
    CHECK(std::get<Trajectory>(out3).warnings.size() == 1);

    CHECK(code_of([&] { agent_search(rejecting, img, "q", "red", 0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("a flaky tool is retried once") {
    class Flaky final : public AgentToolset {
    public:
        int fails_left;
        explicit Flaky(int n) : fails_left(n) {}
        Region locate(const ImageRef&, const std::string&, const std::optional<Region>&) override {
            if (fails_left-- > 0) throw std::runtime_error("transient");
            return {0, 0, 8, 8};
        }
        OracleAnswer understand(const ImageRef&, const std::string&) override { return yes("red"); }
        Region adjust_bbox(const Region& r, const ImageRef&, const std::string&) override { return r; }
        VerifyResult verify(const std::string& c, const std::string& g) override { return {c == g, {}}; }
    };
    const auto img = testing::patterned_image("root", 32, 32);
    Flaky once(1);
    CHECK(std::holds_alternative<Trajectory>(agent_search(once, img, "q", "red", 2)));
    Flaky twice(2);
    const auto out = agent_search(twice, img, "q", "red", 2);
    REQUIRE(std::holds_alternative<SearchFailure>(out));
    CHECK(std::get<SearchFailure>(out).kind == FailureKind::ToolError);
}

TEST_CASE("summarize_trajectory") {
    const std::string two = summarize_trajectory(answered(2));
    const auto segs = protocol::parse_output(two);
    CHECK(protocol::classify_format(segs).shape == protocol::Shape::ZoomIn);
    std::vector<Region> calls;
    for (const auto& s : segs)
        if (s.kind == protocol::SegmentKind::ToolCall) calls.push_back(s.call.region());
    CHECK(calls == std::vector<Region>{{0, 0, 10, 10}, {1, 1, 11, 11}});
    CHECK(segs[0] == protocol::Segment::think("step 0 still looking"));

    const std::string zero = summarize_trajectory(answered(0));
    CHECK(protocol::classify_format(protocol::parse_output(zero)).shape == protocol::Shape::Direct);

    const auto upper = summarize_trajectory(answered(1), [](const std::string& s) {
        std::string u = s;
        std::transform(u.begin(), u.end(), u.begin(), ::toupper);
        return u;
    });
    CHECK(upper.find("<think>STEP 0 STILL LOOKING</think>") != std::string::npos);

    Trajectory bare;
    bare.steps = {StepRecord::tool_call({0, 0, 5, 5}), StepRecord::observation(ImageRef::descriptor("z", 10, 10), 1, {}),
                  StepRecord::answer("red")};
    bare.terminal = Terminal::answered("red");
    CHECK(protocol::classify_format(protocol::parse_output(summarize_trajectory(bare))).valid);

    Trajectory stopped = answered(1);
    stopped.steps.pop_back();
    stopped.terminal = Terminal::step_limit();
    CHECK(code_of([&] { summarize_trajectory(stopped); }) == ErrorCode::NotAnswered);
}

TEST_CASE("corpus counts direct and zoom records") {
    std::vector<CorpusInput> inputs;
    for (int i = 0; i < 20; ++i) {
        CorpusInput in;
        in.id = "s" + std::to_string(i);
        in.image = testing::patterned_image(in.id, 400, 300);
        in.query = "colour?";
        in.gold = "red";
        const bool zoom = i % 2 == 1;
        in.probe.levels.push_back({224, zoom ? ProbeCategory::NeedsZoom : ProbeCategory::DirectAnswerable, {}, {}});
        if (zoom) in.searches.emplace(224, answered(1 + i % 3));
        inputs.push_back(std::move(in));
    }
    const auto corpus = build_sft_corpus(inputs);
    CHECK(corpus.records.size() == 20);
    CHECK(corpus.stats.direct == 10);
    CHECK(corpus.stats.zoom == 10);
    CHECK(corpus.stats.zoom_fraction() == 0.5);
    CHECK(corpus.records[0].image.width() == 224);
    CHECK(corpus.records[0].response == "<think>The detail is readable at this resolution.</think>\n<answer>red</answer>");

    std::ostringstream out;
    write_corpus_jsonl(out, corpus);
    std::istringstream lines(out.str());
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.size() == 5);
        CHECK((j["category"] == "direct" || j["category"] == "zoom"));
        CHECK(protocol::classify_format(protocol::parse_output(j["response"].get<std::string>())).valid);
        ++n;
    }
    CHECK(n == 20);
    const auto sj = corpus.stats.to_json();
    CHECK(sj["total"] == 20);
    CHECK(sj["zoom_fraction"] == 0.5);
}

TEST_CASE("all discarded is an empty corpus") {
    CorpusInput in;
    in.probe.levels.push_back({224, ProbeCategory::Discarded, "disagreement", {}});
    in.probe.levels.push_back({336, ProbeCategory::NeedsZoom, {}, {}});
    const std::vector<CorpusInput> inputs{in};
    CHECK(code_of([&] { build_sft_corpus(inputs); }) == ErrorCode::EmptyCorpus);
}

TEST_CASE("synthetic batch: turn histogram and zoom need by resolution") {
    synth::SynthEnvConfig env;
    env.target_size_min = 1;
    env.target_size_max = 16;
    std::vector<CorpusInput> inputs;
    std::map<int, int> expected_hist;
    for (std::uint64_t i = 0; i < 30; ++i) {
        const auto task = synth::make_task(1000 + i, 2560, env);
        CorpusInput in;
        in.id = synth::task_id(task);
        in.image = synth::render_task(task, env);
        in.query = synth::task_query(task);
        in.gold = task.gold;
        const std::vector<Oracle> oracles{synth_oracle(task, env)};
        in.probe = probe_answerability(oracles, in.image, in.query, in.gold, env.levels, 3);
        for (int level : env.levels) {
            int need = 0;
            while (task.target_size * level * (1 << need) < env.threshold * env.reference_level) ++need;
            ++expected_hist[need + 1];
            const auto& p = in.probe.at(level);
            REQUIRE(p.category == (need == 0 ? ProbeCategory::DirectAnswerable : ProbeCategory::NeedsZoom));
            if (need == 0) continue;
            synth::SynthTask at = task;
            at.level = level;
            SynthToolset tools(at, env);
            auto out = agent_search(tools, resize_long_side(in.image, level), in.query, in.gold, 8);
            REQUIRE(std::holds_alternative<Trajectory>(out));
            in.searches.emplace(level, std::get<Trajectory>(std::move(out)));
        }
        inputs.push_back(std::move(in));
    }
    const auto corpus = build_sft_corpus(inputs);
    CHECK(corpus.stats.turn_histogram == expected_hist);
    double prev = 1.0;
    for (int level : env.levels) {
        const double f = corpus.stats.per_resolution.at(level).zoom_fraction();
        CHECK(f <= prev);
        prev = f;
    }
    CHECK(corpus.stats.per_resolution.at(224).zoom_fraction() > corpus.stats.per_resolution.at(2560).zoom_fraction());
}
