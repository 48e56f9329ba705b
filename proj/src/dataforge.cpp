#include "focusloop/dataforge.hpp"

#include "focusloop/error.hpp"
#include "focusloop/focus.hpp"

#include <algorithm>
#include <ostream>

namespace focusloop::forge {

std::string_view to_string(ProbeCategory c) noexcept {
    switch (c) {
        case ProbeCategory::DirectAnswerable: return "direct_answerable";
        case ProbeCategory::NeedsZoom: return "needs_zoom";
        case ProbeCategory::Discarded: return "discarded";
    }
    return "discarded";
}

const LevelProbe& ProbeResult::at(int level) const {
    for (const auto& l : levels) {
        if (l.level == level) return l;
    }
    throw Error(ErrorCode::UnknownResolution, "level " + std::to_string(level) + " was not probed");
}

ProbeResult probe_answerability(std::span<const Oracle> oracles, const ImageRef& image, const std::string& query,
                                const std::string& gold, std::span<const int> levels, int repeats,
                                const agar::AnswerMatcher& match) {
    if (oracles.empty()) throw Error(ErrorCode::InvalidArgument, "at least one oracle is required");
    if (levels.empty()) throw Error(ErrorCode::InvalidArgument, "no levels to probe");
    if (repeats < 1) throw Error(ErrorCode::InvalidArgument, "repeats must be >= 1");

    ProbeResult result;
    result.repeats = repeats;
    for (int level : levels) {
        if (level < 1) throw Error(ErrorCode::InvalidDimension, "probe level must be positive");
        LevelProbe probe;
        probe.level = level;
        const ImageRef view = resize_long_side(image, level);
        int direct = 0, total = 0;
        bool failed = false;
        for (std::size_t o = 0; o < oracles.size() && !failed; ++o) {
            for (int r = 0; r < repeats; ++r) {
                OracleAnswer a;
                try {
                    a = oracles[o](view, query);
                } catch (const std::exception& e) {
                    probe.reason = std::string("oracle failure: ") + e.what();
                    failed = true;
                    break;
                }
                if (total == 0) probe.reasoning = a.reasoning;
                direct += a.answerable && match(a.answer, gold) ? 1 : 0;
                ++total;
            }
        }
        if (failed) {
            probe.category = ProbeCategory::Discarded;
        } else if (direct == total) {
            probe.category = ProbeCategory::DirectAnswerable;
        } else if (direct == 0) {
            probe.category = ProbeCategory::NeedsZoom;
        } else {
            probe.category = ProbeCategory::Discarded;
            probe.reason = "inconsistent judgments: " + std::to_string(direct) + "/" + std::to_string(total) +
                           " direct";
        }
        result.levels.push_back(std::move(probe));
    }
    return result;
}

// Agent search ------------------------------------------------------------------

namespace {

template <class F>
auto with_retry(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::exception&) {
        return f();
    }
}

}  // namespace

SearchOutcome agent_search(AgentToolset& tools, const ImageRef& image, const std::string& query,
                           const std::string& gold, int max_steps, protocol::ParseMode mode) {
    if (max_steps < 1) throw Error(ErrorCode::InvalidArgument, "max_steps must be >= 1");

    Trajectory traj;
    traj.image = image;
    traj.query = query;
    ImageRef view = image;
    FrameTransform frame = FrameTransform::identity();
    std::string feedback;

    auto fail = [&](FailureKind kind, std::string detail) -> SearchOutcome {
        traj.terminal = kind == FailureKind::StepLimit ? Terminal::step_limit() : Terminal::error(detail);
        return SearchFailure{kind, std::move(detail), std::move(traj)};
    };

    for (int step = 1; step <= max_steps; ++step) {
        Region region;
        OracleAnswer seen;
        VerifyResult verdict;
        try {
            if (step == 1) {
                region = with_retry([&] { return tools.locate(view, query, std::nullopt); });
            } else {
                const Region whole{0, 0, view.width(), view.height()};
                region = with_retry([&] { return tools.adjust_bbox(whole, view, feedback); });
            }
        } catch (const std::exception& e) {
            return fail(FailureKind::ToolError, std::string(step == 1 ? "locate" : "adjust_bbox") + ": " + e.what());
        }
        if (!region.valid_in(view.width(), view.height())) {
            auto clamped = mode == protocol::ParseMode::Lenient
                               ? focus::clamp_region(region, view.width(), view.height())
                               : std::nullopt;
            if (!clamped) return fail(FailureKind::ToolError, "tool returned invalid region " + region.to_string());
            traj.warnings.push_back("clamped region " + region.to_string() + " to " + clamped->to_string());
            region = *clamped;
        }

        traj.steps.push_back(StepRecord::think(step == 1 ? "Locate the region relevant to the question."
                                                         : "Refine the region: " + feedback));
        ImageRef zoomed = focus::crop_zoom(view, region).renamed(image.id() + "#zoom" + std::to_string(step));
        frame = FrameTransform::compose(frame, FrameTransform::zoom(region, focus::kZoomFactor));
        traj.steps.push_back(StepRecord::tool_call(region));
        traj.steps.push_back(
            StepRecord::observation(zoomed, focus::count_visual_tokens(zoomed.width(), zoomed.height()), frame));
        view = std::move(zoomed);

        try {
            seen = with_retry([&] { return tools.understand(view, query); });
            verdict = with_retry([&] { return tools.verify(seen.answer, gold); });
        } catch (const std::exception& e) {
            return fail(FailureKind::ToolError, e.what());
        }
        if (!seen.reasoning.empty()) traj.steps.push_back(StepRecord::think(seen.reasoning));
        if (verdict.accept) {
            traj.steps.push_back(StepRecord::answer(seen.answer));
            traj.terminal = Terminal::answered(seen.answer);
            return traj;
        }
        feedback = verdict.feedback.empty() ? "the answer was rejected" : verdict.feedback;
    }
    return fail(FailureKind::StepLimit, "no accepted answer after " + std::to_string(max_steps) + " steps");
}

// SFT records --------------------------------------------------------------------

namespace {

std::string trimmed(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string summarize_trajectory(const Trajectory& traj, const Rewriter& rewriter) {
    if (traj.terminal.kind != TerminalKind::Answered) {
        throw Error(ErrorCode::NotAnswered, "only answered trajectories can be summarized");
    }
    std::vector<protocol::Segment> segments;
    std::string thought;
    auto flush = [&](bool needed) {
        std::string text = trimmed(rewriter(thought));
        thought.clear();
        if (text.empty() && needed) text = "I need a closer look.";
        if (!text.empty()) segments.push_back(protocol::Segment::think(std::move(text)));
    };
    for (const auto& step : traj.steps) {
        switch (step.kind()) {
            case StepKind::Think:
                if (!thought.empty()) thought += ' ';
                thought += step.as<ThinkStep>().text;
                break;
            case StepKind::ToolCall: {
                const bool after_call = !segments.empty() && segments.back().kind == protocol::SegmentKind::ToolCall;
                if (!thought.empty() || !after_call) flush(true);
                segments.push_back(protocol::Segment::tool_call(step.as<ToolCallStep>().region));
                break;
            }
            case StepKind::Observation: break;
            case StepKind::Answer:
                flush(false);
                segments.push_back(protocol::Segment::answer(trimmed(step.as<AnswerStep>().text)));
                break;
        }
    }
    return protocol::serialize_segments(segments);
}

nlohmann::json SftRecord::to_json() const {
    return {{"image", image_to_json(image)},
            {"query", query},
            {"response", response},
            {"category", category},
            {"resolution", resolution}};
}

nlohmann::json CorpusStats::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& [level, c] : per_resolution) {
        per.push_back({{"resolution", level}, {"direct", c.direct}, {"zoom", c.zoom}, {"zoom_fraction", c.zoom_fraction()}});
    }
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [turns, n] : turn_histogram) hist[std::to_string(turns)] = n;
    return {{"total", direct + zoom},
            {"direct", direct},
            {"zoom", zoom},
            {"zoom_fraction", zoom_fraction()},
            {"discarded", discarded},
            {"unresolved", unresolved},
            {"per_resolution", per},
            {"turn_histogram", hist}};
}

SftCorpus build_sft_corpus(std::span<const CorpusInput> inputs, const Rewriter& rewriter) {
    SftCorpus corpus;
    CorpusStats& stats = corpus.stats;
    for (const auto& in : inputs) {
        for (const auto& probe : in.probe.levels) {
            SftRecord rec;
            rec.query = in.query;
            rec.resolution = probe.level;
            if (probe.category == ProbeCategory::Discarded) {
                ++stats.discarded;
                continue;
            }
            if (probe.category == ProbeCategory::DirectAnswerable) {
                std::string think = trimmed(rewriter(probe.reasoning));
                if (think.empty()) think = "The detail is readable at this resolution.";
                rec.image = resize_long_side(in.image, probe.level);
                rec.response = protocol::serialize_segments(
                    {protocol::Segment::think(std::move(think)), protocol::Segment::answer(trimmed(in.gold))});
                rec.category = "direct";
                rec.turns = 1;
                ++stats.direct;
                ++stats.per_resolution[probe.level].direct;
            } else {
                const auto it = in.searches.find(probe.level);
                if (it == in.searches.end() || it->second.terminal.kind != TerminalKind::Answered) {
                    ++stats.unresolved;
                    continue;
                }
                const Trajectory& t = it->second;
                rec.image = t.image;
                rec.response = summarize_trajectory(t, rewriter);
                rec.category = "zoom";
                rec.turns = static_cast<int>(ledger_of(t, 0).zoom_calls) + 1;
                ++stats.zoom;
                ++stats.per_resolution[probe.level].zoom;
            }
            ++stats.turn_histogram[rec.turns];
            corpus.records.push_back(std::move(rec));
        }
    }
    if (corpus.records.empty()) throw Error(ErrorCode::EmptyCorpus, "no sample survived probing and search");
    return corpus;
}

void write_corpus_jsonl(std::ostream& out, const SftCorpus& corpus) {
    for (const auto& r : corpus.records) out << dump_line(r.to_json()) << '\n';
}

// Synthetic stand-ins --------------------------------------------------------------

Oracle synth_oracle(const synth::SynthTask& task, const synth::SynthEnvConfig& env) {
    return [task, env](const ImageRef& image, const std::string&) {
        OracleAnswer a;
        a.answerable = synth::legible(image.width(), 0, task.target_size, env);
        if (a.answerable) {
            a.answer = task.gold;
            a.reasoning = "The marked square is large enough to read.";
        } else {
            a.reasoning = "The marked square is too small to read.";
        }
        return a;
    };
}

SynthToolset::SynthToolset(synth::SynthTask task, synth::SynthEnvConfig env)
    : task_(std::move(task)), env_(std::move(env)) {}

Region SynthToolset::around_target(int view_w, int view_h) const {
    const auto cell = synth::cell_pixels(task_, {task_.target.x, task_.target.y, task_.target.x + 1, task_.target.y + 1},
                                         env_);
    const ExactBox in_view = from_root_frame_exact(ExactBox{cell.x1, cell.y1, cell.x2, cell.y2}, chain_);
    const int cx = static_cast<int>(boost::rational_cast<double>((in_view.x1 + in_view.x2) / 2));
    const int cy = static_cast<int>(boost::rational_cast<double>((in_view.y1 + in_view.y2) / 2));
    const int w = std::max(1, view_w / 4);
    const int h = std::max(1, view_h / 4);
    const int x1 = std::clamp(cx - w / 2, 0, view_w - w);
    const int y1 = std::clamp(cy - h / 2, 0, view_h - h);
    return {x1, y1, x1 + w, y1 + h};
}

Region SynthToolset::locate(const ImageRef& image, const std::string&, const std::optional<Region>&) {
    chain_.clear();
    const Region r = around_target(image.width(), image.height());
    chain_.push_back(FrameTransform::zoom(r, 2));
    return r;
}

OracleAnswer SynthToolset::understand(const ImageRef&, const std::string&) {
    OracleAnswer a;
    const synth::SynthState state{static_cast<int>(chain_.size()), true};
    a.answerable = synth::readable(task_, state, env_);
    a.answer = a.answerable ? task_.gold : "unknown";
    a.reasoning = a.answerable ? "The square is now clearly visible." : "Still too small to tell.";
    return a;
}

Region SynthToolset::adjust_bbox(const Region&, const ImageRef& image, const std::string&) {
    const Region r = around_target(image.width(), image.height());
    chain_.push_back(FrameTransform::zoom(r, 2));
    return r;
}

VerifyResult SynthToolset::verify(const std::string& candidate, const std::string& gold) {
    if (agar::default_match(candidate, gold)) return {true, {}};
    return {false, "zoom further into the marked square"};
}

}  // namespace focusloop::forge
