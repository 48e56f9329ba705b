#pragma once

#include "focusloop/geometry.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace focusloop::protocol {

inline constexpr std::string_view kZoomToolName = "image_zoom_in_tool";

enum class ParseMode { Strict, Lenient };

struct ToolInvocation {
    std::string name;
    std::array<int, 4> bbox_2d{};
    /// False only for lenient-mode calls whose payload could not be decoded.
    bool parseable = true;
    /// Payload text as it appeared between the tags (trimmed).
    std::string raw;

    Region region() const { return {bbox_2d[0], bbox_2d[1], bbox_2d[2], bbox_2d[3]}; }

    friend bool operator==(const ToolInvocation& a, const ToolInvocation& b) {
        if (a.parseable != b.parseable) return false;
        if (!a.parseable) return a.raw == b.raw;
        return a.name == b.name && a.bbox_2d == b.bbox_2d;
    }
};

enum class SegmentKind { Think, ToolCall, Answer };

struct Segment {
    SegmentKind kind = SegmentKind::Think;
    std::string text;     // Think / Answer
    ToolInvocation call;  // ToolCall

    static Segment think(std::string text) { return {SegmentKind::Think, std::move(text), {}}; }
    static Segment answer(std::string text) { return {SegmentKind::Answer, std::move(text), {}}; }
    static Segment tool_call(const Region& r) {
        return {SegmentKind::ToolCall, {}, {std::string(kZoomToolName), r.as_array(), true, {}}};
    }

    friend bool operator==(const Segment& a, const Segment& b) {
        if (a.kind != b.kind) return false;
        return a.kind == SegmentKind::ToolCall ? a.call == b.call : a.text == b.text;
    }
};

enum class Shape { Direct, ZoomIn, Invalid };

std::string_view to_string(Shape shape) noexcept;

struct FormatVerdict {
    bool valid = false;
    Shape shape = Shape::Invalid;

    friend bool operator==(const FormatVerdict&, const FormatVerdict&) = default;
};

/// Parses one model turn made of <think>, <tool_call> and <answer> blocks.
///
/// Whitespace between blocks is always allowed. Strict mode rejects any
/// other text outside tags, unknown or nested tags, unterminated blocks,
/// tool-call payloads that are not exactly
/// {"name": "image_zoom_in_tool", "arguments": {"bbox_2d": [x1, y1, x2, y2]}},
/// and an <answer> that is not the final block. Lenient mode skips stray text,
/// closes an unterminated final block at end of input and keeps undecodable
/// tool calls as segments with `parseable == false`.
///
/// Think/Answer text is trimmed. Throws EmptyInput or ParseError.
std::vector<Segment> parse_output(std::string_view text, ParseMode mode = ParseMode::Strict);

/// Total: Direct is (Think)* Answer; ZoomIn has at least one decodable
/// ToolCall, every run of ToolCalls directly preceded by a Think, and a single
/// final Answer; anything else is Invalid.
FormatVerdict classify_format(const std::vector<Segment>& segments);

/// Inverse of parse_output. Blocks are joined by '\n'. Throws EmptySegments
/// or InvalidSegment (untrimmed text, embedded tags, undecodable call).
std::string serialize_segments(const std::vector<Segment>& segments);

/// The canonical tool-call payload, keys in wire order.
std::string tool_call_payload(const Region& region);

/// Last <answer> text recoverable in lenient mode, if any.
std::optional<std::string> extract_answer(std::string_view text);

}  // namespace focusloop::protocol
