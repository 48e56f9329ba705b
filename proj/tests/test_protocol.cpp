#include "focusloop/error.hpp"
#include "focusloop/protocol.hpp"
#include "focusloop/rng.hpp"

#include <doctest.h>

using namespace focusloop;
using namespace focusloop::protocol;

namespace {

const std::string kDoorTurn =
    "<think>I should locate the door first.</think><tool_call>{\"name\":\"image_zoom_in_tool\",\"arguments\":"
    "{\"bbox_2d\":[10,20,110,220]}}</tool_call>";

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected a structured error");
    return ErrorCode::InvalidArgument;
}

std::string random_text(std::mt19937_64& rng) {
    static const std::string alphabet = "abcdefg XYZ0123456789.,:;!?<>/{}[]\"'\n\t-";
    std::string s;
    const std::size_t n = 1 + uniform_index(rng, 24);
    for (std::size_t i = 0; i < n; ++i) s += alphabet[uniform_index(rng, alphabet.size())];
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s.empty() ? "x" : s;
}

}  // namespace

TEST_CASE("parses a think and zoom turn") {
    const auto segs = parse_output(kDoorTurn);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].kind == SegmentKind::Think);
    CHECK(segs[0].text == "I should locate the door first.");
    REQUIRE(segs[1].kind == SegmentKind::ToolCall);
    CHECK(segs[1].call.name == "image_zoom_in_tool");
    CHECK(segs[1].call.bbox_2d == std::array<int, 4>{10, 20, 110, 220});
    CHECK(segs[1].call.region() == Region{10, 20, 110, 220});
}

TEST_CASE("answer text is trimmed") {
    const auto segs = parse_output("<answer> www.proweld.co.uk </answer>");
    REQUIRE(segs.size() == 1);
    CHECK(segs[0] == Segment::answer("www.proweld.co.uk"));
}

TEST_CASE("empty input is rejected") {
    CHECK(code_of([] { parse_output(""); }) == ErrorCode::EmptyInput);
    CHECK(code_of([] { parse_output("", ParseMode::Lenient); }) == ErrorCode::EmptyInput);
}

TEST_CASE("strict mode rejects drift that lenient mode tolerates") {
    const std::string stray = "Sure! <think>a</think><answer>b</answer>";
    CHECK(code_of([&] { parse_output(stray); }) == ErrorCode::ParseError);
    CHECK(parse_output(stray, ParseMode::Lenient) ==
          std::vector<Segment>{Segment::think("a"), Segment::answer("b")});

    const std::string open = "<think>a</think><answer>b";
    CHECK(code_of([&] { parse_output(open); }) == ErrorCode::ParseError);
    CHECK(parse_output(open, ParseMode::Lenient).back() == Segment::answer("b"));

    const std::string spaced =
        "<tool_call>{\"name\": \"image_zoom_in_tool\", \"arguments\": {\"bbox_2d\": [1, 2, 3, 4]}}</tool_call>";
    CHECK(parse_output(spaced)[0].call.region() == Region{1, 2, 3, 4});

    const std::string extra_key =
        "<tool_call>{\"name\":\"image_zoom_in_tool\",\"arguments\":{\"bbox_2d\":[1,2,3,4]},\"x\":1}</tool_call>";
    CHECK(code_of([&] { parse_output(extra_key); }) == ErrorCode::ParseError);

    const std::string two_boxes =
        "<tool_call>{\"name\":\"image_zoom_in_tool\",\"arguments\":{\"bbox_2d\":[1,2,3,4,5,6,7,8]}}</tool_call>";
    CHECK(code_of([&] { parse_output(two_boxes); }) == ErrorCode::ParseError);

    const std::string garbage_call = "<think>t</think><tool_call>zoom please</tool_call><answer>a</answer>";
    CHECK(code_of([&] { parse_output(garbage_call); }) == ErrorCode::ParseError);
    const auto lenient = parse_output(garbage_call, ParseMode::Lenient);
    REQUIRE(lenient.size() == 3);
    CHECK_FALSE(lenient[1].call.parseable);
    CHECK(lenient[1].call.raw == "zoom please");

    CHECK(code_of([] { parse_output("<answer>a</answer><think>b</think>"); }) == ErrorCode::ParseError);
    CHECK(code_of([] { parse_output("<think>a<answer>b</answer></think>"); }) == ErrorCode::ParseError);
    CHECK(code_of([] { parse_output("<foo>a</foo>"); }) == ErrorCode::ParseError);
}

TEST_CASE("classify_format") {
    const auto t = Segment::think("t");
    const auto a = Segment::answer("a");
    const auto c = Segment::tool_call({0, 0, 1, 1});
    CHECK(classify_format({t, a}) == FormatVerdict{true, Shape::Direct});
    CHECK(classify_format({a}) == FormatVerdict{true, Shape::Direct});
    CHECK(classify_format({t, c, t, a}) == FormatVerdict{true, Shape::ZoomIn});
    CHECK(classify_format({t, c, c, t, a}) == FormatVerdict{true, Shape::ZoomIn});
    CHECK(classify_format({a, t}) == FormatVerdict{false, Shape::Invalid});
    CHECK(classify_format({c, a}) == FormatVerdict{false, Shape::Invalid});
    CHECK(classify_format({t, c}) == FormatVerdict{false, Shape::Invalid});
    CHECK(classify_format({}) == FormatVerdict{false, Shape::Invalid});
    CHECK(classify_format({t, a, a}) == FormatVerdict{false, Shape::Invalid});
}

TEST_CASE("direct verdicts never contain tool calls") {
    auto rng = make_rng({21});
    const std::array<Segment, 3> pool{Segment::think("t"), Segment::tool_call({0, 0, 1, 1}), Segment::answer("a")};
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<Segment> segs;
        const auto n = uniform_index(rng, 6);
        for (std::uint64_t i = 0; i < n; ++i) segs.push_back(pool[uniform_index(rng, 3)]);
        const auto v = classify_format(segs);
        REQUIRE(v == classify_format(segs));
        REQUIRE(v.valid == (v.shape != Shape::Invalid));
        if (v.shape == Shape::Direct) {
            for (const auto& s : segs) REQUIRE(s.kind != SegmentKind::ToolCall);
        }
    }
}

TEST_CASE("serialize_segments") {
    CHECK(serialize_segments({Segment::think("x"), Segment::answer("y")}) == "<think>x</think>\n<answer>y</answer>");
    CHECK(code_of([] { serialize_segments({}); }) == ErrorCode::EmptySegments);
    CHECK(code_of([] { serialize_segments({Segment::think(" x")}); }) == ErrorCode::InvalidSegment);
    CHECK(code_of([] { serialize_segments({Segment::answer("a</answer>")}); }) == ErrorCode::InvalidSegment);

    const auto door = parse_output(kDoorTurn);
    CHECK(parse_output(serialize_segments(door)) == door);
    CHECK(tool_call_payload({10, 20, 110, 220}) ==
          "{\"name\":\"image_zoom_in_tool\",\"arguments\":{\"bbox_2d\":[10,20,110,220]}}");
}

TEST_CASE("random segment lists round trip") {
    auto rng = make_rng({22});
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<Segment> segs;
        const auto n = 1 + uniform_index(rng, 6);
        for (std::uint64_t i = 0; i < n; ++i) {
            if (uniform_index(rng, 2)) {
                segs.push_back(Segment::think(random_text(rng)));
            } else {
                const int x = static_cast<int>(uniform_index(rng, 5000)) - 100;
                const int y = static_cast<int>(uniform_index(rng, 5000)) - 100;
                segs.push_back(Segment::tool_call({x, y, x + 1 + static_cast<int>(uniform_index(rng, 900)),
                                                   y + 1 + static_cast<int>(uniform_index(rng, 900))}));
            }
        }
        if (uniform_index(rng, 2)) segs.push_back(Segment::answer(random_text(rng)));
        REQUIRE(parse_output(serialize_segments(segs)) == segs);
    }
}

TEST_CASE("random bytes never escape as anything but structured errors") {
    auto rng = make_rng({23});
    const std::string seeds[] = {kDoorTurn, "<answer>x</answer>", "<think>a</think>"};
    for (int trial = 0; trial < 3000; ++trial) {
        std::string s;
        if (trial % 2 == 0) {
            const auto n = uniform_index(rng, 64);
            for (std::uint64_t i = 0; i < n; ++i) s += static_cast<char>(rng() & 0xff);
        } else {
            s = seeds[trial % 3];
            for (int k = 0; k < 3; ++k) {
                if (s.empty()) break;
                s[uniform_index(rng, s.size())] = static_cast<char>(rng() & 0xff);
            }
        }
        for (auto mode : {ParseMode::Strict, ParseMode::Lenient}) {
            try {
                const auto segs = parse_output(s, mode);
                (void)classify_format(segs);
            } catch (const Error&) {
            }
        }
        (void)extract_answer(s);
    }
}

TEST_CASE("extract_answer recovers the last answer") {
    CHECK(extract_answer("junk <answer>A</answer> more <answer> B </answer>") == "B");
    CHECK_FALSE(extract_answer("no tags here").has_value());
}
