#pragma once

#include "focusloop/agar.hpp"
#include "focusloop/focus.hpp"
#include "focusloop/trajectory.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace focusloop::harness {

struct ManifestEntry {
    std::string id;
    std::string image;
    std::string query;
    std::string gold;
    int resolution = 0;

    nlohmann::json to_json() const;
    static ManifestEntry from_json(const nlohmann::json& j);
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// One JSON object per non-blank line. Throws SchemaError (with the line
/// number) for bad records or duplicate ids, EmptyManifest when there are none.
std::vector<ManifestEntry> read_manifest(std::istream& in);
std::vector<ManifestEntry> read_manifest(const std::string& path);

using PolicyFactory = std::function<std::unique_ptr<focus::Policy>(const ManifestEntry& entry, std::uint64_t seed)>;
using ImageLoader = std::function<ImageRef(const ManifestEntry& entry)>;

/// Reads the PPM header; pixels are decoded on first use.
ImageRef load_ppm_lazily(const ManifestEntry& entry);

struct RunOptions {
    focus::EpisodeOptions episode;
    std::uint64_t seed = 0;
    int parallel = 1;
    ImageLoader loader = load_ppm_lazily;
    agar::AnswerMatcher match = agar::default_match;
};

/// Per-entry result; one line of the trajectory JSONL.
struct EntryRecord {
    std::string id;
    int resolution = 0;
    std::string gold;
    bool correct = false;
    std::int64_t base_visual_tokens = 0;
    /// Set when the entry could not be run (e.g. unreadable image).
    std::optional<std::string> error;
    std::optional<Trajectory> trajectory;

    nlohmann::json to_json() const;
    static EntryRecord from_json(const nlohmann::json& j);
};

struct Stats {
    /// Scored entries (errored ones excluded).
    int n = 0;
    int errors = 0;
    int correct = 0;
    double accuracy = 0.0;
    double mean_zoom_calls = 0.0;
    double mean_added_visual_tokens = 0.0;
    double mean_total_visual_tokens = 0.0;

    double accuracy_pct() const { return accuracy * 100.0; }
    nlohmann::json to_json() const;
    static Stats from_json(const nlohmann::json& j);
    friend bool operator==(const Stats&, const Stats&) = default;
};

struct EvalReport {
    Stats overall;
    std::map<int, Stats> per_resolution;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Sums are taken in id order, so the result does not depend on input order.
EvalReport report_from_records(std::span<const EntryRecord> records);

struct RunResult {
    EvalReport report;
    /// In manifest order.
    std::vector<EntryRecord> records;
};

/// One episode per entry, each with its own policy from `factory` and a seed
/// derived from (options.seed, entry id). Throws EmptyManifest.
RunResult run_manifest(const PolicyFactory& factory, std::span<const ManifestEntry> manifest,
                       const RunOptions& options = {});

void write_records_jsonl(std::ostream& out, std::span<const EntryRecord> records);
std::vector<EntryRecord> read_records_jsonl(std::istream& in);

struct AccuracyTokens {
    /// Percentage points.
    double accuracy_pct = 0.0;
    double tokens = 0.0;
};

/// (candidate - baseline) accuracy gain per 100 extra tokens. Throws
/// Undefined when the token counts are equal.
double compute_mite(const AccuracyTokens& baseline, const AccuracyTokens& candidate);
AccuracyTokens accuracy_tokens(const Stats& stats);

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant. Throws InvalidArgument for mismatched or < 2 samples.
double spearman(std::span<const double> x, std::span<const double> y);

struct SweepRow {
    int level = 0;
    Stats stats;
    std::optional<double> mite;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    /// Rank correlation between level and mean zoom calls.
    double zoom_rank_correlation = 0.0;
    std::vector<RunResult> runs;

    nlohmann::json to_json() const;
};

/// Runs every level's manifest. MITE is filled for levels that have a
/// baseline report with a different token count. Throws InvalidArgument
/// for fewer than two levels.
SweepResult resolution_sweep(const PolicyFactory& factory, const std::map<int, std::vector<ManifestEntry>>& by_level,
                             const RunOptions& options = {}, const std::map<int, EvalReport>& baselines = {});

/// Human-readable trace of one record.
std::string replay_text(const EntryRecord& record);

}  // namespace focusloop::harness
