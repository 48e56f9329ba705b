#include "focusloop/synthenv.hpp"

#include "focusloop/error.hpp"
#include "focusloop/rng.hpp"

#include <algorithm>

namespace focusloop::synth {

namespace {

void check_level(int level, const SynthEnvConfig& config) {
    if (std::find(config.levels.begin(), config.levels.end(), level) == config.levels.end()) {
        throw Error(ErrorCode::UnknownResolution, "resolution level " + std::to_string(level) + " is not modelled");
    }
}

std::size_t label_index(const std::string& label, const SynthEnvConfig& config) {
    auto it = std::find(config.labels.begin(), config.labels.end(), label);
    return it == config.labels.end() ? config.labels.size() : static_cast<std::size_t>(it - config.labels.begin());
}

int scaled_size(const SynthTask& task, const SynthEnvConfig& config) {
    return std::max(1, task.target_size * task.level / config.reference_level);
}

}  // namespace

SynthTask make_task(std::uint64_t seed, int level, const SynthEnvConfig& config) {
    check_level(level, config);
    if (config.grid < 2 || config.labels.size() < 2 || config.target_size_min < 1 ||
        config.target_size_max < config.target_size_min) {
        throw Error(ErrorCode::InvalidArgument, "synthetic environment config is inconsistent");
    }
    auto rng = make_rng({seed, static_cast<std::uint64_t>(level), 0x5e4dULL});
    SynthTask t;
    t.seed = seed;
    t.level = level;
    const auto grid = static_cast<std::uint64_t>(config.grid);
    t.target = {static_cast<int>(uniform_index(rng, grid)), static_cast<int>(uniform_index(rng, grid))};
    t.target_size = config.target_size_min +
                    static_cast<int>(uniform_index(
                        rng, static_cast<std::uint64_t>(config.target_size_max - config.target_size_min + 1)));
    t.gold = config.labels[uniform_index(rng, config.labels.size())];
    t.distractor_count = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(config.max_distractors + 1)));
    while (static_cast<int>(t.distractors.size()) < t.distractor_count) {
        const GridCell c{static_cast<int>(uniform_index(rng, grid)), static_cast<int>(uniform_index(rng, grid))};
        if (c == t.target || std::find(t.distractors.begin(), t.distractors.end(), c) != t.distractors.end()) continue;
        t.distractors.push_back(c);
    }
    return t;
}

bool legible(int level, int depth, int target_size, const SynthEnvConfig& config) {
    // s * (l / ref) * 2^k >= tau  <=>  s * l * 2^k >= tau * ref
    const long double lhs = static_cast<long double>(target_size) * level * static_cast<long double>(1ULL << depth);
    return lhs >= static_cast<long double>(config.threshold) * config.reference_level;
}

bool readable(const SynthTask& task, const SynthState& state, const SynthEnvConfig& config) {
    return state.located && legible(task.level, state.depth, task.target_size, config);
}

StepResult env_step(const SynthTask& task, const SynthState& state, const SynthAction& action,
                    const SynthEnvConfig& config, std::mt19937_64* guess_rng) {
    if (const auto* answer = std::get_if<AnswerAction>(&action)) {
        if (readable(task, state, config)) return TerminalObservation{answer->label == task.gold};
        if (config.stochastic_guess && guess_rng) {
            return TerminalObservation{uniform_index(*guess_rng, config.labels.size()) == 0};
        }
        return TerminalObservation{false};
    }
    const GridRegion& r = std::get<ZoomAction>(action).region;
    if (!(0 <= r.x1 && r.x1 < r.x2 && r.x2 <= config.grid && 0 <= r.y1 && r.y1 < r.y2 && r.y2 <= config.grid)) {
        throw Error(ErrorCode::InvalidRegion, "zoom region outside the task grid");
    }
    if (r.contains(task.target)) return SynthState{state.depth + 1, true};
    return SynthState{state.depth, false};
}

int expert_zoom_count(const SynthTask& task, const SynthEnvConfig& config) {
    int k = 0;
    while (!legible(task.level, k, task.target_size, config)) ++k;
    return k;
}

std::vector<SynthAction> scripted_expert(const SynthTask& task, const SynthEnvConfig& config) {
    std::vector<SynthAction> actions;
    const GridRegion cell{task.target.x, task.target.y, task.target.x + 1, task.target.y + 1};
    for (int i = expert_zoom_count(task, config); i > 0; --i) actions.emplace_back(ZoomAction{cell});
    actions.emplace_back(AnswerAction{task.gold});
    return actions;
}

PixelBox cell_pixels(const SynthTask& task, const GridRegion& r, const SynthEnvConfig& config) {
    const auto edge = [&](int cell) {
        return static_cast<int>(static_cast<long long>(cell) * task.level / config.grid);
    };
    return {edge(r.x1), edge(r.y1), edge(r.x2), edge(r.y2)};
}

namespace {

Rgb label_colour(std::size_t index) {
    // Distinct, saturated colours; index beyond the table wraps.
    static constexpr Rgb kPalette[] = {{255, 191, 0},  {0, 64, 255},   {255, 127, 80}, {0, 160, 0},
                                       {75, 0, 130},   {160, 255, 0},  {128, 128, 0},  {220, 0, 0},
                                       {0, 200, 200},  {200, 0, 200}};
    return kPalette[index % std::size(kPalette)];
}

class TaskRaster final : public PixelSource {
public:
    TaskRaster(const SynthTask& task, const SynthEnvConfig& config) : level_(task.level) {
        const int side = scaled_size(task, config);
        auto square = [&](const GridCell& c, Rgb colour) {
            const PixelBox cell = cell_pixels(task, {c.x, c.y, c.x + 1, c.y + 1}, config);
            const int cx = (cell.x1 + cell.x2) / 2;
            const int cy = (cell.y1 + cell.y2) / 2;
            return Mark{cx - side / 2, cy - side / 2, cx - side / 2 + side, cy - side / 2 + side, colour};
        };
        marks_.push_back(square(task.target, label_colour(label_index(task.gold, config))));
        for (std::size_t i = 0; i < task.distractors.size(); ++i) {
            marks_.push_back(square(task.distractors[i], label_colour(label_index(task.gold, config) + 1 + i)));
        }
    }

    Rgb at(int x, int y) const override {
        for (const auto& m : marks_) {
            if (m.x1 <= x && x < m.x2 && m.y1 <= y && y < m.y2) return m.colour;
        }
        const auto shade = static_cast<std::uint8_t>(96 + (x * 7 + y * 13) % 32);
        return {shade, shade, static_cast<std::uint8_t>(shade + level_ % 16)};
    }

private:
    struct Mark {
        int x1, y1, x2, y2;
        Rgb colour;
    };
    int level_;
    std::vector<Mark> marks_;
};

}  // namespace

ImageRef render_task(const SynthTask& task, const SynthEnvConfig& config) {
    return ImageRef::from_source(task_id(task), task.level, task.level, std::make_shared<const TaskRaster>(task, config));
}

std::string task_query(const SynthTask&) { return "Which colour label is written on the small marked target?"; }

std::string task_id(const SynthTask& task) {
    return "synth-" + std::to_string(task.level) + "-" + std::to_string(task.seed);
}

nlohmann::json task_to_json(const SynthTask& t) {
    nlohmann::json distractors = nlohmann::json::array();
    for (const auto& d : t.distractors) distractors.push_back({d.x, d.y});
    return {{"id", task_id(t)},
            {"seed", t.seed},
            {"level", t.level},
            {"target", {t.target.x, t.target.y}},
            {"target_size", t.target_size},
            {"gold", t.gold},
            {"distractors", distractors}};
}

SynthTask task_from_json(const nlohmann::json& j) {
    try {
        SynthTask t;
        t.seed = j.at("seed").get<std::uint64_t>();
        t.level = j.at("level").get<int>();
        const auto target = j.at("target").get<std::vector<int>>();
        if (target.size() != 2) throw Error(ErrorCode::SchemaError, "target must be [x, y]");
        t.target = {target[0], target[1]};
        t.target_size = j.at("target_size").get<int>();
        t.gold = j.at("gold").get<std::string>();
        for (const auto& d : j.at("distractors")) {
            const auto cell = d.get<std::vector<int>>();
            if (cell.size() != 2) throw Error(ErrorCode::SchemaError, "distractor must be [x, y]");
            t.distractors.push_back({cell[0], cell[1]});
        }
        t.distractor_count = static_cast<int>(t.distractors.size());
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("bad task record: ") + e.what());
    }
}

nlohmann::json manifest_line(const SynthTask& task, const std::string& image_path) {
    return {{"id", task_id(task)},
            {"image", image_path},
            {"query", task_query(task)},
            {"gold", task.gold},
            {"resolution", task.level}};
}

}  // namespace focusloop::synth
