#include "focusloop/protocol.hpp"

#include "focusloop/error.hpp"

#include <json.hpp>

#include <array>
#include <cctype>
#include <climits>
#include <cmath>

namespace focusloop::protocol {

using nlohmann::json;

namespace {

struct TagSpec {
    SegmentKind kind;
    std::string_view open;
    std::string_view close;
};

constexpr std::array<TagSpec, 3> kTags{{
    {SegmentKind::Think, "<think>", "</think>"},
    {SegmentKind::ToolCall, "<tool_call>", "</tool_call>"},
    {SegmentKind::Answer, "<answer>", "</answer>"},
}};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

bool contains_any_tag(std::string_view s) {
    for (const auto& t : kTags) {
        if (s.find(t.open) != std::string_view::npos || s.find(t.close) != std::string_view::npos) return true;
    }
    return false;
}

const TagSpec* open_tag_at(std::string_view text, std::size_t pos) {
    for (const auto& t : kTags) {
        if (text.compare(pos, t.open.size(), t.open) == 0) return &t;
    }
    return nullptr;
}

std::size_t next_open_tag(std::string_view text, std::size_t from) {
    std::size_t best = std::string_view::npos;
    for (const auto& t : kTags) best = std::min(best, text.find(t.open, from));
    return best;
}

[[noreturn]] void fail(std::size_t offset, const std::string& what) {
    throw Error(ErrorCode::ParseError, what + " at offset " + std::to_string(offset));
}

bool exact_keys(const json& obj, std::initializer_list<const char*> keys) {
    if (!obj.is_object() || obj.size() != keys.size()) return false;
    for (const char* k : keys) {
        if (!obj.contains(k)) return false;
    }
    return true;
}

// Strict decoding of the wire payload; returns false with `why` on mismatch.
bool decode_strict(const json& j, ToolInvocation& call, std::string& why) {
    if (!exact_keys(j, {"name", "arguments"})) {
        why = "tool call must have exactly 'name' and 'arguments'";
        return false;
    }
    if (!j["name"].is_string() || j["name"].get<std::string>() != kZoomToolName) {
        why = "unknown tool name";
        return false;
    }
    const json& args = j["arguments"];
    if (!exact_keys(args, {"bbox_2d"})) {
        why = "arguments must have exactly 'bbox_2d'";
        return false;
    }
    const json& box = args["bbox_2d"];
    if (!box.is_array() || box.size() != 4) {
        why = "bbox_2d must hold 4 integers";
        return false;
    }
    for (std::size_t i = 0; i < 4; ++i) {
        const json& v = box[i];
        if (!v.is_number_integer()) {
            why = "bbox_2d must hold 4 integers";
            return false;
        }
        const auto wide = v.is_number_unsigned() ? static_cast<long long>(std::min<unsigned long long>(
                                                       v.get<unsigned long long>(), LLONG_MAX))
                                                 : v.get<long long>();
        if (wide < INT_MIN || wide > INT_MAX) {
            why = "bbox_2d value out of range";
            return false;
        }
        call.bbox_2d[i] = static_cast<int>(wide);
    }
    call.name = j["name"].get<std::string>();
    return true;
}

// Accepts extra keys, stringified arguments, float coordinates, other names.
bool decode_lenient(const json& j, ToolInvocation& call) {
    if (!j.is_object() || !j.contains("name") || !j["name"].is_string()) return false;
    json args = j.contains("arguments") ? j["arguments"] : json();
    if (args.is_string()) {
        args = json::parse(args.get<std::string>(), nullptr, false);
    }
    if (!args.is_object() || !args.contains("bbox_2d")) return false;
    const json& box = args["bbox_2d"];
    if (!box.is_array() || box.size() != 4) return false;
    for (std::size_t i = 0; i < 4; ++i) {
        if (!box[i].is_number()) return false;
        const double v = std::round(box[i].get<double>());
        if (!(v >= INT_MIN && v <= INT_MAX)) return false;
        call.bbox_2d[i] = static_cast<int>(v);
    }
    call.name = j["name"].get<std::string>();
    return true;
}

ToolInvocation decode_call(std::string_view content, ParseMode mode, std::size_t offset) {
    ToolInvocation call;
    call.raw = std::string(trim(content));
    const json j = json::parse(content.begin(), content.end(), nullptr, false);
    if (mode == ParseMode::Strict) {
        if (j.is_discarded()) fail(offset, "malformed tool-call JSON");
        std::string why;
        if (!decode_strict(j, call, why)) fail(offset, why);
        return call;
    }
    if (j.is_discarded() || !decode_lenient(j, call)) {
        call.parseable = false;
        call.name.clear();
        call.bbox_2d = {};
    }
    return call;
}

}  // namespace

std::string_view to_string(Shape shape) noexcept {
    switch (shape) {
        case Shape::Direct: return "direct";
        case Shape::ZoomIn: return "zoom_in";
        case Shape::Invalid: return "invalid";
    }
    return "invalid";
}

std::vector<Segment> parse_output(std::string_view text, ParseMode mode) {
    if (trim(text).empty()) throw Error(ErrorCode::EmptyInput, "model output is empty");
    const bool strict = mode == ParseMode::Strict;

    std::vector<Segment> segments;
    std::size_t pos = 0;
    while (pos < text.size()) {
        if (is_space(text[pos])) {
            ++pos;
            continue;
        }
        const TagSpec* tag = open_tag_at(text, pos);
        if (!tag) {
            if (strict) fail(pos, "text outside tags");
            pos = next_open_tag(text, pos);
            continue;
        }
        const std::size_t content_begin = pos + tag->open.size();
        std::size_t close = text.find(tag->close, content_begin);
        std::size_t next_pos = 0;
        if (close == std::string_view::npos) {
            if (strict) fail(pos, "unterminated " + std::string(tag->open));
            close = text.size();
            next_pos = text.size();
        } else {
            next_pos = close + tag->close.size();
        }
        const std::string_view content = text.substr(content_begin, close - content_begin);
        if (strict && contains_any_tag(content)) fail(content_begin, "nested tag inside " + std::string(tag->open));

        Segment seg;
        seg.kind = tag->kind;
        if (tag->kind == SegmentKind::ToolCall) {
            seg.call = decode_call(content, mode, content_begin);
        } else {
            seg.text = std::string(trim(content));
        }
        segments.push_back(std::move(seg));
        pos = next_pos;
    }

    if (segments.empty()) throw Error(ErrorCode::ParseError, "no tagged blocks in model output");
    if (strict) {
        for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
            if (segments[i].kind == SegmentKind::Answer) {
                throw Error(ErrorCode::ParseError, "<answer> must be the final block");
            }
        }
    }
    return segments;
}

FormatVerdict classify_format(const std::vector<Segment>& segments) {
    const FormatVerdict invalid{false, Shape::Invalid};
    if (segments.empty() || segments.back().kind != SegmentKind::Answer) return invalid;

    std::size_t calls = 0;
    for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
        const Segment& s = segments[i];
        if (s.kind == SegmentKind::Answer) return invalid;
        if (s.kind == SegmentKind::ToolCall) {
            if (!s.call.parseable || i == 0) return invalid;
            const SegmentKind prev = segments[i - 1].kind;
            if (prev != SegmentKind::Think && prev != SegmentKind::ToolCall) return invalid;
            ++calls;
        }
    }
    return calls == 0 ? FormatVerdict{true, Shape::Direct} : FormatVerdict{true, Shape::ZoomIn};
}

std::string tool_call_payload(const Region& r) {
    return R"({"name":")" + std::string(kZoomToolName) + R"(","arguments":{"bbox_2d":[)" +
           std::to_string(r.x1) + "," + std::to_string(r.y1) + "," + std::to_string(r.x2) + "," +
           std::to_string(r.y2) + "]}}";
}

std::string serialize_segments(const std::vector<Segment>& segments) {
    if (segments.empty()) throw Error(ErrorCode::EmptySegments, "nothing to serialize");
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const Segment& s = segments[i];
        if (i > 0) out += '\n';
        if (s.kind == SegmentKind::ToolCall) {
            if (!s.call.parseable || s.call.name != kZoomToolName) {
                throw Error(ErrorCode::InvalidSegment, "segment " + std::to_string(i) + " is not a zoom call");
            }
            out += "<tool_call>" + tool_call_payload(s.call.region()) + "</tool_call>";
            continue;
        }
        if (trim(s.text) != s.text || contains_any_tag(s.text)) {
            throw Error(ErrorCode::InvalidSegment, "segment " + std::to_string(i) + " text is untrimmed or holds tags");
        }
        const auto& tag = s.kind == SegmentKind::Think ? kTags[0] : kTags[2];
        out += std::string(tag.open) + s.text + std::string(tag.close);
    }
    return out;
}

std::optional<std::string> extract_answer(std::string_view text) {
    try {
        const auto segments = parse_output(text, ParseMode::Lenient);
        for (auto it = segments.rbegin(); it != segments.rend(); ++it) {
            if (it->kind == SegmentKind::Answer) return it->text;
        }
    } catch (const Error&) {
    }
    return std::nullopt;
}

}  // namespace focusloop::protocol
