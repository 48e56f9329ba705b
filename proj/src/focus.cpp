#include "focusloop/focus.hpp"

#include "focusloop/error.hpp"

#include <algorithm>
#include <cmath>

namespace focusloop::focus {

using protocol::Segment;
using protocol::SegmentKind;

std::optional<Region> clamp_region(const Region& r, int frame_width, int frame_height) {
    Region c{std::clamp(r.x1, 0, frame_width), std::clamp(r.y1, 0, frame_height), std::clamp(r.x2, 0, frame_width),
             std::clamp(r.y2, 0, frame_height)};
    if (!c.non_degenerate()) return std::nullopt;
    return c;
}

ImageRef crop_zoom(const ImageRef& image, const Region& region, ParseMode mode, std::vector<std::string>* warnings,
                   int factor, Upsample filter) {
    if (factor < 1) throw Error(ErrorCode::InvalidArgument, "zoom factor must be >= 1");
    Region r = region;
    if (!r.valid_in(image.width(), image.height())) {
        if (mode == ParseMode::Strict || !r.non_degenerate()) {
            throw Error(ErrorCode::InvalidRegion, r.to_string() + " is not inside " + std::to_string(image.width()) +
                                                      "x" + std::to_string(image.height()));
        }
        auto clamped = clamp_region(r, image.width(), image.height());
        if (!clamped) throw Error(ErrorCode::InvalidRegion, r.to_string() + " lies outside the image");
        if (warnings) warnings->push_back("clamped region " + r.to_string() + " to " + clamped->to_string());
        r = *clamped;
    }

    const ImageRef src = ensure_pixels(image);
    const int out_w = r.width() * factor;
    const int out_h = r.height() * factor;
    std::vector<Rgb> px(static_cast<std::size_t>(out_w) * static_cast<std::size_t>(out_h));
    auto at = [&](int x, int y) -> Rgb& {
        return px[static_cast<std::size_t>(y) * static_cast<std::size_t>(out_w) + static_cast<std::size_t>(x)];
    };

    if (filter == Upsample::Nearest) {
        for (int y = 0; y < out_h; ++y) {
            const int sy = r.y1 + y / factor;
            for (int x = 0; x < out_w; ++x) at(x, y) = src.pixel(r.x1 + x / factor, sy);
        }
    } else {
        auto lerp = [](std::uint8_t a, std::uint8_t b, double t) {
            return static_cast<std::uint8_t>(std::lround(a + (b - a) * t));
        };
        for (int y = 0; y < out_h; ++y) {
            const double fy = std::clamp((y + 0.5) / factor - 0.5, 0.0, r.height() - 1.0);
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, r.height() - 1);
            const double ty = fy - y0;
            for (int x = 0; x < out_w; ++x) {
                const double fx = std::clamp((x + 0.5) / factor - 0.5, 0.0, r.width() - 1.0);
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, r.width() - 1);
                const double tx = fx - x0;
                const Rgb a = src.pixel(r.x1 + x0, r.y1 + y0), b = src.pixel(r.x1 + x1, r.y1 + y0);
                const Rgb c = src.pixel(r.x1 + x0, r.y1 + y1), d = src.pixel(r.x1 + x1, r.y1 + y1);
                const Rgb top{lerp(a.r, b.r, tx), lerp(a.g, b.g, tx), lerp(a.b, b.b, tx)};
                const Rgb bot{lerp(c.r, d.r, tx), lerp(c.g, d.g, tx), lerp(c.b, d.b, tx)};
                at(x, y) = {lerp(top.r, bot.r, ty), lerp(top.g, bot.g, ty), lerp(top.b, bot.b, ty)};
            }
        }
    }
    return ImageRef::from_raster(image.id() + "/zoom" + r.to_string(), out_w, out_h, std::move(px));
}

std::int64_t count_visual_tokens(int width, int height, int patch) {
    if (width < 1 || height < 1 || patch < 1) {
        throw Error(ErrorCode::InvalidDimension, "visual token count needs positive width, height and patch");
    }
    const auto tiles = [patch](int n) { return (static_cast<std::int64_t>(n) + patch - 1) / patch; };
    return tiles(width) * tiles(height);
}

std::vector<FrameTransform> frame_chain(std::span<const StepRecord> steps) {
    std::vector<FrameTransform> chain;
    FrameTransform prev = FrameTransform::identity();
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i].kind() != StepKind::Observation) continue;
        if (i == 0 || steps[i - 1].kind() != StepKind::ToolCall) {
            throw Error(ErrorCode::MalformedTrajectory, "observation without tool call");
        }
        const auto& obs = steps[i].as<ObservationStep>();
        const Rational factor = obs.frame.scale / prev.scale;
        const Region& r = steps[i - 1].as<ToolCallStep>().region;
        chain.push_back({factor, Rational(r.x1), Rational(r.y1)});
        prev = obs.frame;
    }
    return chain;
}

namespace {

/// Mutable state of one episode; confined to the run_episode call.
struct EpisodeState {
    ImageRef root;
    ImageRef view;
    FrameTransform frame = FrameTransform::identity();
    std::vector<FrameTransform> chain;
    Trajectory trajectory;
    std::int64_t steps_used = 0;
    std::int64_t added_tokens = 0;
};

enum class CallOutcome { Executed, Stop };

CallOutcome execute_call(EpisodeState& st, const Segment& seg, const EpisodeOptions& opt) {
    Trajectory& traj = st.trajectory;
    if (!seg.call.parseable || seg.call.name != protocol::kZoomToolName) {
        traj.warnings.push_back("skipped unsupported tool call: " + seg.call.raw);
        return CallOutcome::Executed;
    }
    if (st.steps_used >= opt.limits.max_tool_calls) {
        traj.terminal = Terminal::step_limit();
        return CallOutcome::Stop;
    }
    Region region = seg.call.region();
    if (!region.valid_in(st.view.width(), st.view.height())) {
        const std::string frame = std::to_string(st.view.width()) + "x" + std::to_string(st.view.height());
        auto clamped = opt.mode == ParseMode::Lenient
                           ? clamp_region(region, st.view.width(), st.view.height())
                           : std::nullopt;
        if (!clamped) {
            traj.terminal = Terminal::error("InvalidRegion: " + region.to_string() + " outside " + frame);
            return CallOutcome::Stop;
        }
        traj.warnings.push_back("clamped region " + region.to_string() + " to " + clamped->to_string());
        region = *clamped;
    }
    const std::int64_t tokens =
        count_visual_tokens(region.width() * opt.zoom_factor, region.height() * opt.zoom_factor, opt.patch);
    if (st.added_tokens + tokens > opt.limits.max_total_added_tokens) {
        traj.terminal = Terminal::step_limit();
        return CallOutcome::Stop;
    }

    ImageRef zoomed = crop_zoom(st.view, region, ParseMode::Strict, nullptr, opt.zoom_factor)
                          .renamed(st.root.id() + "#zoom" + std::to_string(st.steps_used + 1));
    const FrameTransform local = FrameTransform::zoom(region, opt.zoom_factor);
    st.frame = FrameTransform::compose(st.frame, local);
    st.chain.push_back(local);
    traj.steps.push_back(StepRecord::tool_call(region));
    traj.steps.push_back(StepRecord::observation(zoomed, tokens, st.frame));
    st.view = std::move(zoomed);
    ++st.steps_used;
    st.added_tokens += tokens;
    return CallOutcome::Executed;
}

}  // namespace

Trajectory run_episode(Policy& policy, const std::string& query, const ImageRef& image,
                       const EpisodeOptions& options) {
    if (options.limits.max_tool_calls < 0 || options.limits.max_total_added_tokens < 0) {
        throw Error(ErrorCode::InvalidArgument, "episode limits must be non-negative");
    }
    EpisodeState st{image, image, FrameTransform::identity(), {}, {}, 0, 0};
    Trajectory& traj = st.trajectory;
    traj.image = image;
    traj.query = query;

    for (;;) {
        std::string output;
        try {
            output = policy.next_turn(TurnContext{query, image, traj.steps});
        } catch (const std::exception& e) {
            traj.terminal = Terminal::error(std::string("PolicyFailure: ") + e.what());
            break;
        }

        std::vector<Segment> segments;
        try {
            segments = protocol::parse_output(output, options.mode);
        } catch (const Error& e) {
            traj.terminal = Terminal::error(e.what());
            break;
        }

        bool stop = false;
        bool progressed = false;
        for (const Segment& seg : segments) {
            if (seg.kind == SegmentKind::Think) {
                traj.steps.push_back(StepRecord::think(seg.text));
            } else if (seg.kind == SegmentKind::Answer) {
                traj.steps.push_back(StepRecord::answer(seg.text));
                traj.terminal = Terminal::answered(seg.text);
                stop = true;
            } else {
                const std::size_t before = traj.steps.size();
                try {
                    stop = execute_call(st, seg, options) == CallOutcome::Stop;
                } catch (const Error& e) {
                    traj.terminal = Terminal::error(e.what());
                    stop = true;
                }
                progressed = progressed || traj.steps.size() > before;
            }
            if (stop) break;
        }
        if (stop) break;
        if (!progressed) {
            traj.terminal = Terminal::error("ParseError: turn has neither an executable tool call nor an answer");
            break;
        }
    }
    return traj;
}

}  // namespace focusloop::focus
