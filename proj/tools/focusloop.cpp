// focusloop command-line front end.

#include "focusloop/dataforge.hpp"
#include "focusloop/error.hpp"
#include "focusloop/grpo.hpp"
#include "focusloop/harness.hpp"
#include "focusloop/rng.hpp"
#include "focusloop/synthenv.hpp"
#include "focusloop/vlm_client.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

using namespace focusloop;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool g_json = false;

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, path + ": " + e.what());
    }
}

std::ofstream open_out(const std::string& path) {
    if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    return out;
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::vector<json> out;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::SchemaError, path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

void emit(const json& j, const std::string& human) {
    if (g_json) {
        std::cout << j.dump(2) << '\n';
    } else {
        std::cout << human;
    }
}

std::string fmt(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string stats_line(const harness::Stats& s) {
    return "n=" + std::to_string(s.n) + " errors=" + std::to_string(s.errors) + " accuracy=" +
           fmt(s.accuracy_pct()) + "% zoom_calls=" + fmt(s.mean_zoom_calls) + " added_tokens=" +
           fmt(s.mean_added_visual_tokens, 1) + " total_tokens=" + fmt(s.mean_total_visual_tokens, 1);
}

// Policies and images for manifests ------------------------------------------------

struct PolicyArgs {
    std::string kind = "script";
    std::string script_file;
    std::string policy_file;
    std::string endpoint_config;
    std::string tasks_file;
};

std::map<std::string, synth::SynthTask> load_tasks(const std::string& path) {
    std::map<std::string, synth::SynthTask> tasks;
    if (path.empty()) return tasks;
    for (const auto& j : read_jsonl(path)) {
        auto t = synth::task_from_json(j);
        tasks.emplace(synth::task_id(t), std::move(t));
    }
    return tasks;
}

struct Runner {
    harness::PolicyFactory factory;
    harness::ImageLoader loader;
};

Runner make_runner(const PolicyArgs& args, int max_tool_calls) {
    auto tasks = std::make_shared<const std::map<std::string, synth::SynthTask>>(load_tasks(args.tasks_file));
    const synth::SynthEnvConfig env;
    Runner r;
    r.loader = [tasks, env](const harness::ManifestEntry& e) {
        if (auto it = tasks->find(e.id); it != tasks->end()) return synth::render_task(it->second, env);
        return harness::load_ppm_lazily(e);
    };
    auto task_of = [tasks](const harness::ManifestEntry& e) -> const synth::SynthTask& {
        auto it = tasks->find(e.id);
        if (it == tasks->end()) throw Error(ErrorCode::InvalidArgument, "no synthetic task for entry " + e.id);
        return it->second;
    };

    if (args.kind == "script") {
        if (args.script_file.empty()) throw Error(ErrorCode::InvalidArgument, "--script-file is required");
        auto scripts = std::make_shared<std::map<std::string, std::vector<std::string>>>();
        for (const auto& j : read_jsonl(args.script_file)) {
            (*scripts)[j.at("id").get<std::string>()] = j.at("turns").get<std::vector<std::string>>();
        }
        r.factory = [scripts](const harness::ManifestEntry& e, std::uint64_t) -> std::unique_ptr<focus::Policy> {
            auto it = scripts->find(e.id);
            if (it == scripts->end()) throw Error(ErrorCode::InvalidArgument, "no script for entry " + e.id);
            return std::make_unique<vlm::ScriptedPolicy>(it->second);
        };
    } else if (args.kind == "tabular" || args.kind == "expert") {
        const grpo::SynthStateSpace space(env, max_tool_calls);
        std::optional<grpo::TabularPolicy> table;
        if (args.kind == "tabular") {
            if (args.policy_file.empty()) throw Error(ErrorCode::InvalidArgument, "--policy-file is required");
            table = grpo::TabularPolicy::from_json(read_json_file(args.policy_file));
        }
        r.factory = [table, task_of, env, max_tool_calls](const harness::ManifestEntry& e,
                                                          std::uint64_t seed) -> std::unique_ptr<focus::Policy> {
            const auto& task = task_of(e);
            const grpo::SynthStateSpace sp(env, max_tool_calls);
            auto p = table ? *table : grpo::expert_table(sp, env, task.target_size);
            return std::make_unique<grpo::TabularFocusPolicy>(std::move(p), task, env, max_tool_calls, seed);
        };
    } else if (args.kind == "endpoint") {
        if (args.endpoint_config.empty()) throw Error(ErrorCode::InvalidArgument, "--endpoint-config is required");
        auto client = std::make_shared<vlm::ChatClient>(vlm::EndpointConfig::from_json(read_json_file(args.endpoint_config)));
        r.factory = [client](const harness::ManifestEntry&, std::uint64_t) { return vlm::as_policy(client); };
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown policy kind " + args.kind);
    }
    return r;
}

struct EvalArgs {
    std::string manifest;
    std::string out;
    std::string report;
    int parallel = 1;
    std::uint64_t seed = 0;
    bool lenient = false;
    int patch = focus::kDefaultPatch;
    int max_tool_calls = 6;
    std::int64_t max_added_tokens = 16384;
    PolicyArgs policy;
};

harness::RunOptions run_options(const EvalArgs& a, const Runner& r) {
    harness::RunOptions o;
    o.episode.mode = a.lenient ? protocol::ParseMode::Lenient : protocol::ParseMode::Strict;
    o.episode.patch = a.patch;
    o.episode.limits.max_tool_calls = a.max_tool_calls;
    o.episode.limits.max_total_added_tokens = a.max_added_tokens;
    o.seed = a.seed;
    o.parallel = a.parallel;
    o.loader = r.loader;
    return o;
}

void add_eval_flags(CLI::App* app, EvalArgs& a) {
    app->add_option("--manifest", a.manifest, "manifest JSONL")->required();
    app->add_option("--out", a.out, "trajectory JSONL output");
    app->add_option("--report", a.report, "report JSON output");
    app->add_option("--parallel", a.parallel, "concurrent episodes")->check(CLI::PositiveNumber);
    app->add_option("--seed", a.seed, "base seed");
    app->add_flag("--lenient,!--strict", a.lenient, "lenient protocol parsing (default strict)");
    app->add_option("--patch-size", a.patch, "vision patch size")->check(CLI::PositiveNumber);
    app->add_option("--max-tool-calls", a.max_tool_calls, "zoom calls per episode")->check(CLI::NonNegativeNumber);
    app->add_option("--max-added-tokens", a.max_added_tokens, "added visual token budget");
    app->add_option("--policy", a.policy.kind, "script | tabular | expert | endpoint")
        ->check(CLI::IsMember({"script", "tabular", "expert", "endpoint"}));
    app->add_option("--script-file", a.policy.script_file, "JSONL of {id, turns}");
    app->add_option("--policy-file", a.policy.policy_file, "tabular policy JSON");
    app->add_option("--endpoint-config", a.policy.endpoint_config, "endpoint config JSON");
    app->add_option("--tasks", a.policy.tasks_file, "synthetic task sidecar JSONL");
}

int cmd_eval(const EvalArgs& a) {
    const auto manifest = harness::read_manifest(a.manifest);
    const Runner runner = make_runner(a.policy, a.max_tool_calls);
    const auto result = harness::run_manifest(runner.factory, manifest, run_options(a, runner));
    if (!a.out.empty()) {
        auto out = open_out(a.out);
        harness::write_records_jsonl(out, result.records);
    }
    const json report = result.report.to_json();
    if (!a.report.empty()) open_out(a.report) << report.dump(2) << '\n';
    std::string text = "overall " + stats_line(result.report.overall) + "\n";
    for (const auto& [level, s] : result.report.per_resolution) {
        text += "  " + std::to_string(level) + ": " + stats_line(s) + "\n";
    }
    emit(report, text);
    return 0;
}

int cmd_sweep(const EvalArgs& a, const std::string& baseline_path) {
    const auto manifest = harness::read_manifest(a.manifest);
    std::map<int, std::vector<harness::ManifestEntry>> by_level;
    for (const auto& e : manifest) by_level[e.resolution].push_back(e);
    std::map<int, harness::EvalReport> baselines;
    if (!baseline_path.empty()) {
        const json b = read_json_file(baseline_path);
        for (const auto& row : b.at("rows")) baselines[row.at("resolution").get<int>()].overall = harness::Stats::from_json(row);
    }
    const Runner runner = make_runner(a.policy, a.max_tool_calls);
    const auto sweep = harness::resolution_sweep(runner.factory, by_level, run_options(a, runner), baselines);
    if (!a.out.empty()) {
        auto out = open_out(a.out);
        for (const auto& run : sweep.runs) harness::write_records_jsonl(out, run.records);
    }
    const json j = sweep.to_json();
    if (!a.report.empty()) open_out(a.report) << j.dump(2) << '\n';
    std::string text;
    for (const auto& row : sweep.rows) {
        text += std::to_string(row.level) + ": " + stats_line(row.stats);
        if (row.mite) text += " mite=" + fmt(*row.mite);
        text += "\n";
    }
    text += "rank correlation (level, zoom calls): " + fmt(sweep.zoom_rank_correlation, 3) + "\n";
    emit(j, text);
    return 0;
}

// Synthetic corpus ------------------------------------------------------------------

/// Records the raw text a policy produced on each turn.
class Recorder final : public focus::Policy {
public:
    explicit Recorder(focus::Policy& inner) : inner_(inner) {}
    std::string next_turn(const focus::TurnContext& ctx) override {
        turns.push_back(inner_.next_turn(ctx));
        return turns.back();
    }
    std::vector<std::string> turns;

private:
    focus::Policy& inner_;
};

int cmd_synth_manifest(int count, std::uint64_t seed, const std::string& dir, bool write_images) {
    if (count < 1) throw Error(ErrorCode::InvalidArgument, "--count must be positive");
    const synth::SynthEnvConfig env;
    const grpo::SynthStateSpace space(env, 6);
    fs::create_directories(dir);
    auto manifest = open_out((fs::path(dir) / "manifest.jsonl").string());
    auto tasks = open_out((fs::path(dir) / "tasks.jsonl").string());
    auto scripts = open_out((fs::path(dir) / "scripts.jsonl").string());
    for (int i = 0; i < count; ++i) {
        const int level = env.levels[static_cast<std::size_t>(i) % env.levels.size()];
        const auto task = synth::make_task(make_rng({seed, static_cast<std::uint64_t>(i)})(), level, env);
        const std::string image_path = (fs::path(dir) / "images" / (synth::task_id(task) + ".ppm")).string();
        const ImageRef image = synth::render_task(task, env);
        if (write_images) {
            fs::create_directories(fs::path(image_path).parent_path());
            write_ppm(image_path, image);
        }
        grpo::TabularFocusPolicy expert(grpo::expert_table(space, env, task.target_size), task, env, 6, seed);
        Recorder rec(expert);
        const auto traj = focus::run_episode(rec, synth::task_query(task), image);
        if (traj.terminal.kind != TerminalKind::Answered) {
            throw Error(ErrorCode::InvalidArgument, "expert failed on " + synth::task_id(task));
        }
        manifest << dump_line(synth::manifest_line(task, image_path)) << '\n';
        tasks << dump_line(synth::task_to_json(task)) << '\n';
        scripts << dump_line({{"id", synth::task_id(task)}, {"turns", rec.turns}}) << '\n';
    }
    emit({{"count", count}, {"dir", dir}}, "wrote " + std::to_string(count) + " entries to " + dir + "\n");
    return 0;
}

struct TrainArgs {
    std::uint64_t seed = 42;
    int iters = 500;
    double lr = 2.0;
    double beta = 0.2;
    double clip = 0.2;
    int group = 8;
    std::string reward = "agar";
    int demos = 200;
    int cold_epochs = 50;
    double cold_lr = 0.5;
    std::string log;
    std::string policy_out;
};

int cmd_train(const TrainArgs& a) {
    const synth::SynthEnvConfig env;
    grpo::TrainConfig cfg;
    cfg.seed = a.seed;
    cfg.iterations = a.iters;
    cfg.lr = a.lr;
    cfg.grpo.kl_beta = a.beta;
    cfg.grpo.clip_epsilon = a.clip;
    cfg.grpo.group_size = a.group;
    cfg.reward = a.reward == "agar" ? grpo::RewardKind::Agar : grpo::RewardKind::Baseline;
    cfg.env = env;
    const grpo::SynthStateSpace space(env, cfg.max_tool_calls);
    const auto demos = grpo::expert_demonstrations(a.demos, a.seed, env, space);
    const auto cold = grpo::cold_start_fit(space.make_policy(), demos, a.cold_epochs, a.cold_lr);
    const auto trained = grpo::train_grpo(cold.policy, cfg);
    if (!a.log.empty()) {
        auto out = open_out(a.log);
        for (const auto& e : trained.log) out << dump_line(e.to_json()) << '\n';
    }
    if (!a.policy_out.empty()) open_out(a.policy_out) << trained.policy.to_json().dump() << '\n';

    const auto ev = grpo::evaluate_policy(trained.policy, env, cfg.max_tool_calls, 200, a.seed + 1);
    json levels = json::array();
    std::string text;
    for (const auto& l : ev.levels) {
        levels.push_back({{"level", l.level}, {"accuracy", l.accuracy}, {"mean_zoom_calls", l.mean_zoom_calls},
                          {"direct_rate", l.direct_rate}});
        text += std::to_string(l.level) + ": accuracy=" + fmt(l.accuracy, 3) + " zoom_calls=" +
                fmt(l.mean_zoom_calls) + " direct=" + fmt(l.direct_rate, 3) + "\n";
    }
    text += "legible direct rate " + fmt(ev.legible_direct_rate, 3) + ", illegible zoom rate " +
            fmt(ev.illegible_zoom_rate, 3) + "\n";
    emit({{"cold_start_nll", cold.nll.back()},
          {"final_mean_reward", trained.log.empty() ? 0.0 : trained.log.back().mean_reward},
          {"levels", levels},
          {"legible_direct_rate", ev.legible_direct_rate},
          {"illegible_zoom_rate", ev.illegible_zoom_rate},
          {"accuracy", ev.accuracy}},
         text);
    return 0;
}

struct ForgeArgs {
    std::string config;
    int count = 40;
    std::uint64_t seed = 1;
    int repeats = 5;
    int max_steps = 6;
    int size_min = 1;
    int size_max = 16;
    std::string out;
    std::string stats;
};

int cmd_forge(ForgeArgs a) {
    if (!a.config.empty()) {
        const json c = read_json_file(a.config);
        a.count = c.value("count", a.count);
        a.seed = c.value("seed", a.seed);
        a.repeats = c.value("repeats", a.repeats);
        a.max_steps = c.value("max_steps", a.max_steps);
        a.size_min = c.value("size_min", a.size_min);
        a.size_max = c.value("size_max", a.size_max);
    }
    synth::SynthEnvConfig env;
    env.target_size_min = a.size_min;
    env.target_size_max = a.size_max;
    const int source_level = env.levels.back();

    std::vector<forge::CorpusInput> inputs;
    for (int i = 0; i < a.count; ++i) {
        const auto task = synth::make_task(make_rng({a.seed, static_cast<std::uint64_t>(i)})(), source_level, env);
        forge::CorpusInput in;
        in.id = synth::task_id(task);
        in.image = synth::render_task(task, env);
        in.query = synth::task_query(task);
        in.gold = task.gold;
        const std::vector<forge::Oracle> oracles{forge::synth_oracle(task, env)};
        in.probe = forge::probe_answerability(oracles, in.image, in.query, in.gold, env.levels, a.repeats);
        for (const auto& p : in.probe.levels) {
            if (p.category != forge::ProbeCategory::NeedsZoom) continue;
            synth::SynthTask at_level = task;
            at_level.level = p.level;
            forge::SynthToolset tools(at_level, env);
            const ImageRef view = resize_long_side(in.image, p.level);
            auto outcome = forge::agent_search(tools, view, in.query, in.gold, a.max_steps);
            if (auto* t = std::get_if<Trajectory>(&outcome)) in.searches.emplace(p.level, std::move(*t));
        }
        inputs.push_back(std::move(in));
    }
    const auto corpus = forge::build_sft_corpus(inputs);
    if (!a.out.empty()) {
        auto out = open_out(a.out);
        forge::write_corpus_jsonl(out, corpus);
    }
    const json stats = corpus.stats.to_json();
    if (!a.stats.empty()) open_out(a.stats) << stats.dump(2) << '\n';
    emit(stats, stats.dump(2) + "\n");
    return 0;
}

int cmd_mite(const std::string& baseline, const std::string& candidate) {
    const auto b = harness::Stats::from_json(read_json_file(baseline));
    const auto c = harness::Stats::from_json(read_json_file(candidate));
    const double m = harness::compute_mite(harness::accuracy_tokens(b), harness::accuracy_tokens(c));
    emit({{"mite", m}}, fmt(m) + "\n");
    return 0;
}

int cmd_replay(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    const auto records = harness::read_records_jsonl(in);
    json all = json::array();
    std::string text;
    for (const auto& r : records) {
        text += harness::replay_text(r);
        all.push_back(r.to_json());
    }
    emit(all, text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"focusloop: adaptive zoom-in reasoning toolkit"};
    app.require_subcommand(1);
    app.add_flag("--json", g_json, "machine-readable output");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "run a policy over a manifest");
    add_eval_flags(eval, eval_args);

    EvalArgs sweep_args;
    std::string sweep_baseline;
    auto* sweep = app.add_subcommand("sweep", "evaluate per resolution level");
    add_eval_flags(sweep, sweep_args);
    sweep->add_option("--baseline", sweep_baseline, "earlier sweep JSON for per-level MITE");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train-synth", "cold start + GRPO on the synthetic environment");
    train->add_option("--seed", train_args.seed);
    train->add_option("--iters", train_args.iters)->check(CLI::NonNegativeNumber);
    train->add_option("--lr", train_args.lr);
    train->add_option("--beta", train_args.beta, "KL weight towards the cold-start policy");
    train->add_option("--clip", train_args.clip);
    train->add_option("--group-size", train_args.group)->check(CLI::PositiveNumber);
    train->add_option("--reward", train_args.reward)->check(CLI::IsMember({"agar", "baseline"}));
    train->add_option("--demos", train_args.demos)->check(CLI::PositiveNumber);
    train->add_option("--cold-epochs", train_args.cold_epochs)->check(CLI::NonNegativeNumber);
    train->add_option("--cold-lr", train_args.cold_lr);
    train->add_option("--log", train_args.log, "training log JSONL");
    train->add_option("--policy-out", train_args.policy_out, "trained policy JSON");

    ForgeArgs forge_args;
    auto* forge_cmd = app.add_subcommand("forge", "build an SFT corpus from synthetic tasks");
    forge_cmd->add_option("--config", forge_args.config, "JSON with count, seed, repeats, max_steps, size_min, size_max");
    forge_cmd->add_option("--count", forge_args.count);
    forge_cmd->add_option("--seed", forge_args.seed);
    forge_cmd->add_option("--repeats", forge_args.repeats);
    forge_cmd->add_option("--max-steps", forge_args.max_steps);
    forge_cmd->add_option("--out", forge_args.out, "corpus JSONL");
    forge_cmd->add_option("--stats", forge_args.stats, "stats JSON");

    std::string mite_base, mite_cand;
    auto* mite = app.add_subcommand("mite", "accuracy gain per 100 extra visual tokens");
    mite->add_option("--baseline", mite_base)->required();
    mite->add_option("--candidate", mite_cand)->required();

    std::string replay_path;
    auto* replay = app.add_subcommand("replay", "print trajectories as a readable trace");
    replay->add_option("records", replay_path)->required();

    int sm_count = 50;
    std::uint64_t sm_seed = 7;
    std::string sm_dir;
    bool sm_images = false;
    auto* sm = app.add_subcommand("synth-manifest", "write a synthetic manifest, task sidecar and expert scripts");
    sm->add_option("--count", sm_count);
    sm->add_option("--seed", sm_seed);
    sm->add_option("--out-dir", sm_dir)->required();
    sm->add_flag("--write-images", sm_images, "also write PPM files");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*eval) return cmd_eval(eval_args);
        if (*sweep) return cmd_sweep(sweep_args, sweep_baseline);
        if (*train) return cmd_train(train_args);
        if (*forge_cmd) return cmd_forge(forge_args);
        if (*mite) return cmd_mite(mite_base, mite_cand);
        if (*replay) return cmd_replay(replay_path);
        if (*sm) return cmd_synth_manifest(sm_count, sm_seed, sm_dir, sm_images);
    } catch (const Error& e) {
        if (g_json) {
            std::cout << json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << '\n';
        }
        std::cerr << "focusloop: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "focusloop: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
