#include "focusloop/harness.hpp"

#include "focusloop/error.hpp"
#include "focusloop/protocol.hpp"
#include "focusloop/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace focusloop::harness {

nlohmann::json ManifestEntry::to_json() const {
    return {{"id", id}, {"image", image}, {"query", query}, {"gold", gold}, {"resolution", resolution}};
}

ManifestEntry ManifestEntry::from_json(const nlohmann::json& j) {
    try {
        ManifestEntry e{j.at("id").get<std::string>(), j.at("image").get<std::string>(),
                        j.at("query").get<std::string>(), j.at("gold").get<std::string>(),
                        j.at("resolution").get<int>()};
        if (e.id.empty()) throw Error(ErrorCode::SchemaError, "empty id");
        if (e.resolution <= 0) throw Error(ErrorCode::SchemaError, "resolution must be positive");
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::SchemaError, ex.what());
    }
}

std::vector<ManifestEntry> read_manifest(std::istream& in) {
    std::vector<ManifestEntry> out;
    std::set<std::string> ids;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto e = ManifestEntry::from_json(nlohmann::json::parse(line));
            if (!ids.insert(e.id).second) throw Error(ErrorCode::SchemaError, "duplicate id " + e.id);
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::SchemaError, "manifest line " + std::to_string(lineno) + ": " + ex.what());
        } catch (const Error& ex) {
            throw Error(ErrorCode::SchemaError, "manifest line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    if (out.empty()) throw Error(ErrorCode::EmptyManifest, "manifest has no entries");
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path);
    return read_manifest(in);
}

ImageRef load_ppm_lazily(const ManifestEntry& entry) {
    const auto h = read_ppm_header(entry.image);
    return ImageRef::from_path(entry.id, h.width, h.height, entry.image);
}

// Records and reports ----------------------------------------------------------

nlohmann::json EntryRecord::to_json() const {
    nlohmann::json j{{"id", id},
                     {"resolution", resolution},
                     {"gold", gold},
                     {"correct", correct},
                     {"base_visual_tokens", base_visual_tokens},
                     {"trajectory", trajectory ? focusloop::to_json(*trajectory) : nlohmann::json(nullptr)}};
    if (error) j["error"] = *error;
    return j;
}

EntryRecord EntryRecord::from_json(const nlohmann::json& j) {
    try {
        EntryRecord r;
        r.id = j.at("id").get<std::string>();
        r.resolution = j.at("resolution").get<int>();
        r.gold = j.at("gold").get<std::string>();
        r.correct = j.at("correct").get<bool>();
        r.base_visual_tokens = j.at("base_visual_tokens").get<std::int64_t>();
        if (j.contains("error")) r.error = j.at("error").get<std::string>();
        if (!j.at("trajectory").is_null()) r.trajectory = trajectory_from_json(j.at("trajectory"));
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("bad record: ") + e.what());
    }
}

nlohmann::json Stats::to_json() const {
    return {{"n", n},
            {"errors", errors},
            {"correct", correct},
            {"accuracy", accuracy},
            {"accuracy_pct", accuracy_pct()},
            {"mean_zoom_calls", mean_zoom_calls},
            {"mean_added_visual_tokens", mean_added_visual_tokens},
            {"mean_total_visual_tokens", mean_total_visual_tokens}};
}

Stats Stats::from_json(const nlohmann::json& j) {
    try {
        Stats s;
        s.n = j.value("n", 0);
        s.errors = j.value("errors", 0);
        s.correct = j.value("correct", 0);
        if (j.contains("accuracy")) {
            s.accuracy = j.at("accuracy").get<double>();
        } else {
            s.accuracy = j.at("accuracy_pct").get<double>() / 100.0;
        }
        s.mean_zoom_calls = j.value("mean_zoom_calls", 0.0);
        s.mean_added_visual_tokens = j.value("mean_added_visual_tokens", 0.0);
        s.mean_total_visual_tokens = j.at("mean_total_visual_tokens").get<double>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("bad report: ") + e.what());
    }
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j = overall.to_json();
    nlohmann::json per = nlohmann::json::array();
    for (const auto& [level, s] : per_resolution) {
        auto row = s.to_json();
        row["resolution"] = level;
        per.push_back(std::move(row));
    }
    j["per_resolution"] = per;
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    r.overall = Stats::from_json(j);
    if (j.contains("per_resolution")) {
        for (const auto& row : j.at("per_resolution")) r.per_resolution[row.at("resolution").get<int>()] = Stats::from_json(row);
    }
    return r;
}

namespace {

struct Accumulator {
    int n = 0, errors = 0, correct = 0;
    double zooms = 0, added = 0, total = 0;

    void add(const EntryRecord& r) {
        if (r.error || !r.trajectory) {
            ++errors;
            return;
        }
        const TokenLedger ledger = ledger_of(*r.trajectory, r.base_visual_tokens);
        ++n;
        correct += r.correct ? 1 : 0;
        zooms += static_cast<double>(ledger.zoom_calls);
        added += static_cast<double>(ledger.added_visual_tokens);
        total += static_cast<double>(ledger.total_visual_tokens());
    }

    Stats stats() const {
        Stats s;
        s.n = n;
        s.errors = errors;
        s.correct = correct;
        if (n > 0) {
            s.accuracy = static_cast<double>(correct) / n;
            s.mean_zoom_calls = zooms / n;
            s.mean_added_visual_tokens = added / n;
            s.mean_total_visual_tokens = total / n;
        }
        return s;
    }
};

}  // namespace

EvalReport report_from_records(std::span<const EntryRecord> records) {
    std::vector<const EntryRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
    Accumulator all;
    std::map<int, Accumulator> per;
    for (const auto* r : sorted) {
        all.add(*r);
        per[r->resolution].add(*r);
    }
    EvalReport report;
    report.overall = all.stats();
    for (const auto& [level, acc] : per) report.per_resolution[level] = acc.stats();
    return report;
}

// Running ------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

EntryRecord run_entry(const PolicyFactory& factory, const ManifestEntry& entry, const RunOptions& options) {
    EntryRecord rec;
    rec.id = entry.id;
    rec.resolution = entry.resolution;
    rec.gold = entry.gold;
    ImageRef image = ImageRef::descriptor(entry.id, 1, 1);
    try {
        image = options.loader(entry);
        rec.base_visual_tokens = focus::count_visual_tokens(image.width(), image.height(), options.episode.patch);
    } catch (const std::exception& e) {
        rec.error = std::string("image: ") + e.what();
        return rec;
    }
    const std::uint64_t seed = make_rng({options.seed, fnv1a(entry.id)})();
    auto policy = factory(entry, seed);
    if (!policy) throw Error(ErrorCode::InvalidArgument, "policy factory returned null");
    Trajectory traj = focus::run_episode(*policy, entry.query, image, options.episode);
    rec.correct = traj.terminal.kind == TerminalKind::Answered && options.match(traj.terminal.detail, entry.gold);
    rec.trajectory = std::move(traj);
    return rec;
}

}  // namespace

RunResult run_manifest(const PolicyFactory& factory, std::span<const ManifestEntry> manifest,
                       const RunOptions& options) {
    if (manifest.empty()) throw Error(ErrorCode::EmptyManifest, "manifest has no entries");
    if (options.parallel < 1) throw Error(ErrorCode::InvalidArgument, "parallel must be >= 1");
    std::set<std::string> ids;
    for (const auto& e : manifest) {
        if (!ids.insert(e.id).second) throw Error(ErrorCode::SchemaError, "duplicate id " + e.id);
    }

    RunResult result;
    result.records.resize(manifest.size());
    const auto workers = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(options.parallel),
                                                                        manifest.size()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < manifest.size(); ++i) result.records[i] = run_entry(factory, manifest[i], options);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> failures(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next++; i < manifest.size(); i = next++) {
                        result.records[i] = run_entry(factory, manifest[i], options);
                    }
                } catch (...) {
                    failures[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& f : failures) {
            if (f) std::rethrow_exception(f);
        }
    }
    result.report = report_from_records(result.records);
    return result;
}

void write_records_jsonl(std::ostream& out, std::span<const EntryRecord> records) {
    for (const auto& r : records) out << dump_line(r.to_json()) << '\n';
}

std::vector<EntryRecord> read_records_jsonl(std::istream& in) {
    std::vector<EntryRecord> out;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(EntryRecord::from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::SchemaError, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// Metrics --------------------------------------------------------------------------

double compute_mite(const AccuracyTokens& baseline, const AccuracyTokens& candidate) {
    const double dt = candidate.tokens - baseline.tokens;
    if (dt == 0.0) throw Error(ErrorCode::Undefined, "equal token counts");
    return (candidate.accuracy_pct - baseline.accuracy_pct) / dt * 100.0;
}

AccuracyTokens accuracy_tokens(const Stats& s) { return {s.accuracy_pct(), s.mean_total_visual_tokens}; }

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw Error(ErrorCode::InvalidArgument, "spearman needs two equally long samples of size >= 2");
    }
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

nlohmann::json SweepResult::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        auto row = r.stats.to_json();
        row["resolution"] = r.level;
        row["mite"] = r.mite ? nlohmann::json(*r.mite) : nlohmann::json(nullptr);
        rows_json.push_back(std::move(row));
    }
    return {{"rows", rows_json}, {"zoom_rank_correlation", zoom_rank_correlation}};
}

SweepResult resolution_sweep(const PolicyFactory& factory, const std::map<int, std::vector<ManifestEntry>>& by_level,
                             const RunOptions& options, const std::map<int, EvalReport>& baselines) {
    if (by_level.size() < 2) throw Error(ErrorCode::InvalidArgument, "a sweep needs at least two levels");
    SweepResult out;
    std::vector<double> levels, zooms;
    for (const auto& [level, manifest] : by_level) {
        RunResult run = run_manifest(factory, manifest, options);
        SweepRow row{level, run.report.overall, std::nullopt};
        if (auto it = baselines.find(level); it != baselines.end()) {
            const auto base = accuracy_tokens(it->second.overall);
            const auto cand = accuracy_tokens(row.stats);
            if (base.tokens != cand.tokens) row.mite = compute_mite(base, cand);
        }
        levels.push_back(level);
        zooms.push_back(row.stats.mean_zoom_calls);
        out.rows.push_back(row);
        out.runs.push_back(std::move(run));
    }
    out.zoom_rank_correlation = spearman(levels, zooms);
    return out;
}

std::string replay_text(const EntryRecord& r) {
    std::ostringstream os;
    os << "== " << r.id << " (resolution " << r.resolution << ", gold \"" << r.gold << "\")\n";
    if (r.error) {
        os << "   error: " << *r.error << '\n';
        return os.str();
    }
    if (!r.trajectory) return os.str();
    const Trajectory& t = *r.trajectory;
    os << "   image " << t.image.id() << ' ' << t.image.width() << 'x' << t.image.height() << ", "
       << r.base_visual_tokens << " visual tokens\n";
    os << "   query: " << t.query << '\n';
    int n = 0;
    for (const auto& step : t.steps) {
        os << "   " << ++n << ". ";
        switch (step.kind()) {
            case StepKind::Think: os << "think: " << step.as<ThinkStep>().text; break;
            case StepKind::ToolCall: os << "zoom " << step.as<ToolCallStep>().region.to_string(); break;
            case StepKind::Observation: {
                const auto& o = step.as<ObservationStep>();
                os << "view " << o.image.width() << 'x' << o.image.height() << " (+" << o.added_visual_tokens
                   << " tokens, scale " << to_string(o.frame.scale) << ")";
                break;
            }
            case StepKind::Answer: os << "answer: " << step.as<AnswerStep>().text; break;
        }
        os << '\n';
    }
    switch (t.terminal.kind) {
        case TerminalKind::Answered: os << "   -> answered, " << (r.correct ? "correct" : "wrong"); break;
        case TerminalKind::StepLimit: os << "   -> step limit"; break;
        case TerminalKind::Error: os << "   -> error: " << t.terminal.detail; break;
    }
    os << '\n';
    for (const auto& w : t.warnings) os << "   warning: " << w << '\n';
    return os.str();
}

}  // namespace focusloop::harness
