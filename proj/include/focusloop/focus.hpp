#pragma once

#include "focusloop/geometry.hpp"
#include "focusloop/image.hpp"
#include "focusloop/protocol.hpp"
#include "focusloop/trajectory.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace focusloop::focus {

using protocol::ParseMode;

inline constexpr int kDefaultPatch = 28;
inline constexpr int kZoomFactor = 2;

struct EpisodeLimits {
    std::int64_t max_tool_calls = 6;
    std::int64_t max_total_added_tokens = 16384;
};

struct EpisodeOptions {
    EpisodeLimits limits;
    ParseMode mode = ParseMode::Strict;
    int patch = kDefaultPatch;
    int zoom_factor = kZoomFactor;
};

/// What a policy sees on each turn.
struct TurnContext {
    const std::string& query;
    const ImageRef& root;
    std::span<const StepRecord> history;
};

/// A model producing raw protocol text for the next turn.
class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string next_turn(const TurnContext& ctx) = 0;
    /// Whether next_turn may be called from several episodes at once.
    virtual bool concurrent_turns() const { return false; }
};

enum class Upsample { Nearest, Bilinear };

/// Crops `region` from `image` and enlarges it by `factor` (default 2).
/// Output is 2(x2-x1) x 2(y2-y1). Strict mode throws InvalidRegion for a
/// degenerate or out-of-bounds region; lenient mode clamps it to the image
/// and appends a note to `warnings` (still throws if nothing is left).
ImageRef crop_zoom(const ImageRef& image, const Region& region, ParseMode mode = ParseMode::Strict,
                   std::vector<std::string>* warnings = nullptr, int factor = kZoomFactor,
                   Upsample filter = Upsample::Nearest);

/// ceil(width / patch) * ceil(height / patch).
std::int64_t count_visual_tokens(int width, int height, int patch = kDefaultPatch);

/// Lenient clamp of a region to a frame; nullopt when nothing remains.
std::optional<Region> clamp_region(const Region& region, int frame_width, int frame_height);

/// Runs the interactive loop until an answer, a limit or an error. Policy and
/// strict-mode parse failures end up in the terminal rather than escaping.
Trajectory run_episode(Policy& policy, const std::string& query, const ImageRef& image,
                       const EpisodeOptions& options = {});

/// Local zoom transforms of every observation in `steps`, in order.
std::vector<FrameTransform> frame_chain(std::span<const StepRecord> steps);

}  // namespace focusloop::focus
