#include "focusloop/trajectory.hpp"

#include "focusloop/error.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace focusloop {

using nlohmann::json;

std::string_view to_string(StepKind kind) noexcept {
    switch (kind) {
        case StepKind::Think: return "think";
        case StepKind::ToolCall: return "tool_call";
        case StepKind::Observation: return "observation";
        case StepKind::Answer: return "answer";
    }
    return "unknown";
}

void validate_steps(const std::vector<StepRecord>& steps) {
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const StepKind k = steps[i].kind();
        if (k == StepKind::Observation && (i == 0 || steps[i - 1].kind() != StepKind::ToolCall)) {
            throw Error(ErrorCode::MalformedTrajectory,
                        "observation at step " + std::to_string(i + 1) + " does not follow a tool call");
        }
        if (k == StepKind::Answer && i + 1 != steps.size()) {
            throw Error(ErrorCode::MalformedTrajectory, "answer at step " + std::to_string(i + 1) + " is not last");
        }
    }
}

void validate(const Trajectory& traj) {
    validate_steps(traj.steps);
    const bool has_answer = !traj.steps.empty() && traj.steps.back().kind() == StepKind::Answer;
    if (traj.terminal.kind == TerminalKind::Answered) {
        if (!has_answer) throw Error(ErrorCode::MalformedTrajectory, "answered terminal without an answer step");
        if (traj.steps.back().as<AnswerStep>().text != traj.terminal.detail) {
            throw Error(ErrorCode::MalformedTrajectory, "terminal answer differs from answer step");
        }
    } else if (has_answer) {
        throw Error(ErrorCode::MalformedTrajectory, "answer step present but terminal is not answered");
    }
}

std::vector<StepRecord> rebuild_history(const Trajectory& traj, std::size_t i) {
    if (i < 1 || i > traj.steps.size() + 1) {
        throw Error(ErrorCode::IndexOutOfRange, "step index " + std::to_string(i) + " outside [1, " +
                                                    std::to_string(traj.steps.size() + 1) + "]");
    }
    return {traj.steps.begin(), traj.steps.begin() + static_cast<std::ptrdiff_t>(i - 1)};
}

std::int64_t count_text_tokens(std::string_view text) {
    std::int64_t n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

TokenLedger ledger_of(const std::vector<StepRecord>& steps, std::int64_t base_tokens) {
    validate_steps(steps);
    TokenLedger ledger;
    ledger.base_visual_tokens = base_tokens;
    for (const auto& step : steps) {
        switch (step.kind()) {
            case StepKind::Think: ledger.text_tokens += count_text_tokens(step.as<ThinkStep>().text); break;
            case StepKind::Answer: ledger.text_tokens += count_text_tokens(step.as<AnswerStep>().text); break;
            case StepKind::ToolCall: ++ledger.zoom_calls; break;
            case StepKind::Observation: ledger.added_visual_tokens += step.as<ObservationStep>().added_visual_tokens; break;
        }
    }
    return ledger;
}

TokenLedger ledger_of(const Trajectory& traj, std::int64_t base_tokens) {
    return ledger_of(traj.steps, base_tokens);
}

// JSON ------------------------------------------------------------------------

namespace {

void require_object(const json& j, const char* what) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaError, std::string(what) + " must be an object");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, bool strict, const char* what) {
    if (!strict) return;
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            throw Error(ErrorCode::SchemaError, std::string("unknown field '") + key + "' in " + what);
        }
    }
}

const json& field(const json& j, const char* key, const char* what) {
    auto it = j.find(key);
    if (it == j.end()) throw Error(ErrorCode::SchemaError, std::string("missing '") + key + "' in " + what);
    return *it;
}

template <class T>
T get_as(const json& j, const char* key, const char* what) {
    try {
        return field(j, key, what).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("bad '") + key + "' in " + what + ": " + e.what());
    }
}

Rational rational_from_string(const std::string& s) {
    try {
        const auto slash = s.find('/');
        if (slash == std::string::npos) return Rational(std::stoll(s));
        return Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
    } catch (const std::exception&) {
        throw Error(ErrorCode::SchemaError, "bad rational '" + s + "'");
    }
}

json frame_to_json(const FrameTransform& f) {
    return {{"scale", to_string(f.scale)}, {"offset_x", to_string(f.offset_x)}, {"offset_y", to_string(f.offset_y)}};
}

FrameTransform frame_from_json(const json& j, bool strict) {
    require_object(j, "frame");
    check_keys(j, {"scale", "offset_x", "offset_y"}, strict, "frame");
    FrameTransform f;
    f.scale = rational_from_string(get_as<std::string>(j, "scale", "frame"));
    f.offset_x = rational_from_string(get_as<std::string>(j, "offset_x", "frame"));
    f.offset_y = rational_from_string(get_as<std::string>(j, "offset_y", "frame"));
    if (f.scale <= 0) throw Error(ErrorCode::SchemaError, "frame scale must be positive");
    return f;
}

json step_to_json(const StepRecord& step) {
    json j;
    j["kind"] = std::string(to_string(step.kind()));
    switch (step.kind()) {
        case StepKind::Think: j["text"] = step.as<ThinkStep>().text; break;
        case StepKind::Answer: j["text"] = step.as<AnswerStep>().text; break;
        case StepKind::ToolCall: j["bbox_2d"] = step.as<ToolCallStep>().region.as_array(); break;
        case StepKind::Observation: {
            const auto& obs = step.as<ObservationStep>();
            j["image"] = image_to_json(obs.image);
            j["added_visual_tokens"] = obs.added_visual_tokens;
            j["frame"] = frame_to_json(obs.frame);
            break;
        }
    }
    return j;
}

StepRecord step_from_json(const json& j, bool strict) {
    require_object(j, "step");
    const auto kind = get_as<std::string>(j, "kind", "step");
    if (kind == "think") {
        check_keys(j, {"kind", "text"}, strict, "think step");
        return StepRecord::think(get_as<std::string>(j, "text", "think step"));
    }
    if (kind == "answer") {
        check_keys(j, {"kind", "text"}, strict, "answer step");
        return StepRecord::answer(get_as<std::string>(j, "text", "answer step"));
    }
    if (kind == "tool_call") {
        check_keys(j, {"kind", "bbox_2d"}, strict, "tool_call step");
        const auto box = get_as<std::vector<int>>(j, "bbox_2d", "tool_call step");
        if (box.size() != 4) throw Error(ErrorCode::SchemaError, "bbox_2d must have 4 integers");
        return StepRecord::tool_call({box[0], box[1], box[2], box[3]});
    }
    if (kind == "observation") {
        check_keys(j, {"kind", "image", "added_visual_tokens", "frame"}, strict, "observation step");
        return StepRecord::observation(image_from_json(field(j, "image", "observation step"), strict),
                                       get_as<std::int64_t>(j, "added_visual_tokens", "observation step"),
                                       frame_from_json(field(j, "frame", "observation step"), strict));
    }
    throw Error(ErrorCode::SchemaError, "unknown step kind '" + kind + "'");
}

json terminal_to_json(const Terminal& t) {
    switch (t.kind) {
        case TerminalKind::Answered: return {{"kind", "answered"}, {"answer", t.detail}};
        case TerminalKind::StepLimit: return {{"kind", "step_limit"}};
        case TerminalKind::Error: return {{"kind", "error"}, {"reason", t.detail}};
    }
    return {};
}

Terminal terminal_from_json(const json& j, bool strict) {
    require_object(j, "terminal");
    const auto kind = get_as<std::string>(j, "kind", "terminal");
    if (kind == "answered") {
        check_keys(j, {"kind", "answer"}, strict, "terminal");
        return Terminal::answered(get_as<std::string>(j, "answer", "terminal"));
    }
    if (kind == "step_limit") {
        check_keys(j, {"kind"}, strict, "terminal");
        return Terminal::step_limit();
    }
    if (kind == "error") {
        check_keys(j, {"kind", "reason"}, strict, "terminal");
        return Terminal::error(get_as<std::string>(j, "reason", "terminal"));
    }
    throw Error(ErrorCode::SchemaError, "unknown terminal kind '" + kind + "'");
}

}  // namespace

json image_to_json(const ImageRef& image) {
    json j = {{"id", image.id()}, {"width", image.width()}, {"height", image.height()}};
    j["path"] = image.path() ? json(*image.path()) : json(nullptr);
    return j;
}

ImageRef image_from_json(const json& j, bool strict) {
    require_object(j, "image");
    check_keys(j, {"id", "width", "height", "path"}, strict, "image");
    auto id = get_as<std::string>(j, "id", "image");
    const int w = get_as<int>(j, "width", "image");
    const int h = get_as<int>(j, "height", "image");
    auto it = j.find("path");
    if (it != j.end() && !it->is_null()) {
        return ImageRef::from_path(std::move(id), w, h, get_as<std::string>(j, "path", "image"));
    }
    return ImageRef::descriptor(std::move(id), w, h);
}

json to_json(const Trajectory& traj) {
    json steps = json::array();
    for (const auto& s : traj.steps) steps.push_back(step_to_json(s));
    return {{"image", image_to_json(traj.image)},
            {"query", traj.query},
            {"steps", std::move(steps)},
            {"terminal", terminal_to_json(traj.terminal)},
            {"warnings", traj.warnings}};
}

Trajectory trajectory_from_json(const json& j, bool strict) {
    require_object(j, "trajectory");
    check_keys(j, {"image", "query", "steps", "terminal", "warnings"}, strict, "trajectory");
    Trajectory traj;
    traj.image = image_from_json(field(j, "image", "trajectory"), strict);
    traj.query = get_as<std::string>(j, "query", "trajectory");
    const json& steps = field(j, "steps", "trajectory");
    if (!steps.is_array()) throw Error(ErrorCode::SchemaError, "steps must be an array");
    for (const auto& s : steps) traj.steps.push_back(step_from_json(s, strict));
    traj.terminal = terminal_from_json(field(j, "terminal", "trajectory"), strict);
    if (j.contains("warnings")) traj.warnings = get_as<std::vector<std::string>>(j, "warnings", "trajectory");
    validate(traj);
    return traj;
}

std::string dump_line(const json& j) {
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::string to_jsonl_line(const Trajectory& traj) { return dump_line(to_json(traj)); }

Trajectory trajectory_from_jsonl_line(const std::string& line, bool strict) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("invalid JSON: ") + e.what());
    }
    return trajectory_from_json(j, strict);
}

}  // namespace focusloop
