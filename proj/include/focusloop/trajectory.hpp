#pragma once

#include "focusloop/geometry.hpp"
#include "focusloop/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace focusloop {

enum class StepKind { Think, ToolCall, Observation, Answer };

std::string_view to_string(StepKind kind) noexcept;

struct ThinkStep {
    std::string text;
    friend bool operator==(const ThinkStep&, const ThinkStep&) = default;
};

/// One zoom request. The region is expressed in the frame of the most
/// recent observation (root when there is none).
struct ToolCallStep {
    Region region;
    friend bool operator==(const ToolCallStep&, const ToolCallStep&) = default;
};

struct ObservationStep {
    ImageRef image;
    std::int64_t added_visual_tokens = 0;
    /// Root-to-this-view transform after the zoom.
    FrameTransform frame;
    friend bool operator==(const ObservationStep&, const ObservationStep&) = default;
};

struct AnswerStep {
    std::string text;
    friend bool operator==(const AnswerStep&, const AnswerStep&) = default;
};

/// A reasoning step; exactly the payload for its kind is present.
class StepRecord {
public:
    using Payload = std::variant<ThinkStep, ToolCallStep, ObservationStep, AnswerStep>;

    explicit StepRecord(Payload payload) : payload_(std::move(payload)) {}

    static StepRecord think(std::string text) { return StepRecord(ThinkStep{std::move(text)}); }
    static StepRecord tool_call(Region region) { return StepRecord(ToolCallStep{region}); }
    static StepRecord observation(ImageRef image, std::int64_t tokens, FrameTransform frame) {
        return StepRecord(ObservationStep{std::move(image), tokens, frame});
    }
    static StepRecord answer(std::string text) { return StepRecord(AnswerStep{std::move(text)}); }

    StepKind kind() const noexcept { return static_cast<StepKind>(payload_.index()); }
    const Payload& payload() const noexcept { return payload_; }

    template <class T>
    const T& as() const {
        return std::get<T>(payload_);
    }

    friend bool operator==(const StepRecord&, const StepRecord&) = default;

private:
    Payload payload_;
};

enum class TerminalKind { Answered, StepLimit, Error };

struct Terminal {
    TerminalKind kind = TerminalKind::Error;
    /// The answer for Answered, the reason for Error, empty otherwise.
    std::string detail;

    static Terminal answered(std::string answer) { return {TerminalKind::Answered, std::move(answer)}; }
    static Terminal step_limit() { return {TerminalKind::StepLimit, {}}; }
    static Terminal error(std::string reason) { return {TerminalKind::Error, std::move(reason)}; }

    friend bool operator==(const Terminal&, const Terminal&) = default;
};

struct Trajectory {
    ImageRef image = ImageRef::descriptor("unset", 1, 1);
    std::string query;
    std::vector<StepRecord> steps;
    Terminal terminal;
    /// Lenient-mode recoveries (clamped regions, skipped calls).
    std::vector<std::string> warnings;

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct TokenLedger {
    std::int64_t base_visual_tokens = 0;
    std::int64_t added_visual_tokens = 0;
    std::int64_t zoom_calls = 0;
    std::int64_t text_tokens = 0;

    std::int64_t total_visual_tokens() const noexcept { return base_visual_tokens + added_visual_tokens; }
    friend bool operator==(const TokenLedger&, const TokenLedger&) = default;
};

/// Throws MalformedTrajectory on: Observation not directly after a ToolCall,
/// more than one Answer, Answer not last, Answered terminal without Answer.
void validate_steps(const std::vector<StepRecord>& steps);
void validate(const Trajectory& traj);

/// Steps strictly before the 1-based step index `i` (the history h_i).
/// Valid for 1 <= i <= steps.size() + 1.
std::vector<StepRecord> rebuild_history(const Trajectory& traj, std::size_t i);

TokenLedger ledger_of(const std::vector<StepRecord>& steps, std::int64_t base_tokens);
TokenLedger ledger_of(const Trajectory& traj, std::int64_t base_tokens);

/// Whitespace-delimited word count; the text-token model.
std::int64_t count_text_tokens(std::string_view text);

// JSONL schema ---------------------------------------------------------------

nlohmann::json image_to_json(const ImageRef& image);
ImageRef image_from_json(const nlohmann::json& j, bool strict = true);

nlohmann::json to_json(const Trajectory& traj);
/// In strict mode unknown fields are rejected with SchemaError.
Trajectory trajectory_from_json(const nlohmann::json& j, bool strict = true);

/// Compact single-line JSON, invalid UTF-8 replaced.
std::string dump_line(const nlohmann::json& j);
std::string to_jsonl_line(const Trajectory& traj);
Trajectory trajectory_from_jsonl_line(const std::string& line, bool strict = true);

}  // namespace focusloop
