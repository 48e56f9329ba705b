#pragma once

#include "focusloop/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace focusloop::synth {

/// Grid-and-legibility abstraction of a multi-resolution visual search task.
struct SynthEnvConfig {
    std::vector<int> levels{224, 336, 448, 672, 1024, 1920, 2560};
    int reference_level = 224;
    /// Legibility threshold tau in pixels.
    int threshold = 16;
    int grid = 32;
    std::vector<std::string> labels{"amber", "blue", "coral", "green", "indigo", "lime", "olive", "red"};
    /// Intrinsic target size range (inclusive) at the reference level.
    int target_size_min = 2;
    int target_size_max = 2;
    int max_distractors = 5;
    /// Illegible answers are right with probability 1/|labels| instead of never.
    bool stochastic_guess = false;
};

struct GridCell {
    int x = 0;
    int y = 0;
    friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// Cells [x1, x2) x [y1, y2) of the task grid.
struct GridRegion {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    bool contains(const GridCell& c) const noexcept { return x1 <= c.x && c.x < x2 && y1 <= c.y && c.y < y2; }
    friend bool operator==(const GridRegion&, const GridRegion&) = default;
};

struct SynthTask {
    std::uint64_t seed = 0;
    int level = 224;
    GridCell target;
    int target_size = 1;
    std::string gold;
    int distractor_count = 0;
    std::vector<GridCell> distractors;

    friend bool operator==(const SynthTask&, const SynthTask&) = default;
};

/// Throws UnknownResolution for a level outside the config.
SynthTask make_task(std::uint64_t seed, int level, const SynthEnvConfig& config = {});

/// size * (level / reference) * 2^depth >= threshold, evaluated exactly.
bool legible(int level, int depth, int target_size, const SynthEnvConfig& config = {});

struct SynthState {
    int depth = 0;
    /// Whether the target is inside the current view (true at the root).
    bool located = true;
    friend bool operator==(const SynthState&, const SynthState&) = default;
};

struct AnswerAction {
    std::string label;
};
struct ZoomAction {
    GridRegion region;
};
using SynthAction = std::variant<AnswerAction, ZoomAction>;

struct TerminalObservation {
    bool correct = false;
};
using StepResult = std::variant<SynthState, TerminalObservation>;

bool readable(const SynthTask& task, const SynthState& state, const SynthEnvConfig& config = {});

/// Pure transition. Zoom deepens iff the region holds the target, otherwise
/// the target leaves the view. Throws InvalidRegion for a malformed region.
/// `guess_rng` is consulted only when config.stochastic_guess is set.
StepResult env_step(const SynthTask& task, const SynthState& state, const SynthAction& action,
                    const SynthEnvConfig& config = {}, std::mt19937_64* guess_rng = nullptr);

/// Minimum zooms until legible, each on the target cell, then the gold label.
std::vector<SynthAction> scripted_expert(const SynthTask& task, const SynthEnvConfig& config = {});
int expert_zoom_count(const SynthTask& task, const SynthEnvConfig& config = {});

/// Procedural level x level rendering of a task (nothing is materialised).
ImageRef render_task(const SynthTask& task, const SynthEnvConfig& config = {});
/// Pixel box of a grid region at the task's resolution.
struct PixelBox {
    int x1, y1, x2, y2;
};
PixelBox cell_pixels(const SynthTask& task, const GridRegion& region, const SynthEnvConfig& config = {});

std::string task_query(const SynthTask& task);
std::string task_id(const SynthTask& task);

nlohmann::json task_to_json(const SynthTask& task);
SynthTask task_from_json(const nlohmann::json& j);

/// Manifest line {"id","image","query","gold","resolution"} for a task whose
/// image lives at `image_path`.
nlohmann::json manifest_line(const SynthTask& task, const std::string& image_path);

}  // namespace focusloop::synth
