#pragma once

#include "focusloop/agar.hpp"
#include "focusloop/geometry.hpp"
#include "focusloop/image.hpp"
#include "focusloop/protocol.hpp"
#include "focusloop/synthenv.hpp"
#include "focusloop/trajectory.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace focusloop::forge {

struct OracleAnswer {
    bool answerable = false;
    std::string answer;
    std::optional<double> confidence;
    std::string reasoning;
};

/// A model judging whether `query` can be answered from `image` as given.
using Oracle = std::function<OracleAnswer(const ImageRef& image, const std::string& query)>;

enum class ProbeCategory { DirectAnswerable, NeedsZoom, Discarded };

std::string_view to_string(ProbeCategory c) noexcept;

struct LevelProbe {
    int level = 0;
    ProbeCategory category = ProbeCategory::Discarded;
    /// Why the level was discarded (disagreement or oracle failure).
    std::string reason;
    /// Reasoning of the first judgment, reused for direct records.
    std::string reasoning;
};

struct ProbeResult {
    std::vector<LevelProbe> levels;
    int repeats = 5;

    /// Throws UnknownResolution when the level was not probed.
    const LevelProbe& at(int level) const;
};

/// Resizes `image` to each level (long side) and asks every oracle `repeats`
/// times. A judgment is "direct" when the oracle says answerable and the
/// answer matches `gold`. All judgments direct gives DirectAnswerable, none
/// gives NeedsZoom, a mix (or any oracle exception) gives Discarded.
ProbeResult probe_answerability(std::span<const Oracle> oracles, const ImageRef& image, const std::string& query,
                                const std::string& gold, std::span<const int> levels, int repeats = 5,
                                const agar::AnswerMatcher& match = agar::default_match);

// Agent search ------------------------------------------------------------------

struct VerifyResult {
    bool accept = false;
    std::string feedback;
};

/// Tools of the data-generation agent. Regions are in the frame of the image
/// passed in. Only verify ever sees the gold answer.
class AgentToolset {
public:
    virtual ~AgentToolset() = default;
    virtual Region locate(const ImageRef& image, const std::string& description, const std::optional<Region>& hint) = 0;
    virtual OracleAnswer understand(const ImageRef& image, const std::string& query) = 0;
    virtual Region adjust_bbox(const Region& region, const ImageRef& image, const std::string& instruction) = 0;
    virtual VerifyResult verify(const std::string& candidate, const std::string& gold) = 0;
};

enum class FailureKind { StepLimit, ToolError };

struct SearchFailure {
    FailureKind kind = FailureKind::StepLimit;
    std::string detail;
    /// Steps recorded up to the failure.
    Trajectory partial;
};

using SearchOutcome = std::variant<Trajectory, SearchFailure>;

/// Step 1 locates a region on the root image; every later step asks
/// adjust_bbox for a region inside the current view, given the verifier's
/// last feedback. Each region is zoomed (nested) and the zoomed view goes to
/// understand, whose answer is sent to verify. A throwing tool is retried
/// once. Throws InvalidArgument when max_steps < 1.
SearchOutcome agent_search(AgentToolset& tools, const ImageRef& image, const std::string& query,
                           const std::string& gold, int max_steps, protocol::ParseMode mode = protocol::ParseMode::Strict);

// SFT records --------------------------------------------------------------------

using Rewriter = std::function<std::string(const std::string&)>;

inline std::string identity_rewriter(const std::string& s) { return s; }

/// Protocol text for an answered trajectory: one think per run of thoughts,
/// the tool calls in order, the final answer. Throws NotAnswered.
std::string summarize_trajectory(const Trajectory& traj, const Rewriter& rewriter = identity_rewriter);

struct CorpusInput {
    std::string id;
    ImageRef image = ImageRef::descriptor("unset", 1, 1);
    std::string query;
    std::string gold;
    ProbeResult probe;
    /// Agent trajectories for NeedsZoom levels.
    std::map<int, Trajectory> searches;
};

struct SftRecord {
    ImageRef image = ImageRef::descriptor("unset", 1, 1);
    std::string query;
    std::string response;
    std::string category;  // "direct" | "zoom"
    int resolution = 0;
    /// Model turns in the response (zoom calls + 1).
    int turns = 1;

    nlohmann::json to_json() const;
};

struct ResolutionCounts {
    int direct = 0;
    int zoom = 0;
    double zoom_fraction() const { return direct + zoom ? static_cast<double>(zoom) / (direct + zoom) : 0.0; }
};

struct CorpusStats {
    int direct = 0;
    int zoom = 0;
    int discarded = 0;
    /// NeedsZoom levels without an answered search.
    int unresolved = 0;
    std::map<int, ResolutionCounts> per_resolution;
    std::map<int, int> turn_histogram;

    double zoom_fraction() const { return direct + zoom ? static_cast<double>(zoom) / (direct + zoom) : 0.0; }
    nlohmann::json to_json() const;
};

struct SftCorpus {
    std::vector<SftRecord> records;
    CorpusStats stats;
};

/// One record per (input, level) that is DirectAnswerable or NeedsZoom with
/// an answered search. Throws EmptyCorpus when nothing survives.
SftCorpus build_sft_corpus(std::span<const CorpusInput> inputs, const Rewriter& rewriter = identity_rewriter);

void write_corpus_jsonl(std::ostream& out, const SftCorpus& corpus);

// Synthetic stand-ins --------------------------------------------------------------

/// Oracle that can answer exactly when the task's target is legible in the
/// image it is shown (taken as a root view of size image.width()).
Oracle synth_oracle(const synth::SynthTask& task, const synth::SynthEnvConfig& env = {});

/// Toolset for a task rendered at task.level. It remembers the regions it
/// handed out to know the current view, and always finds the target.
class SynthToolset final : public AgentToolset {
public:
    SynthToolset(synth::SynthTask task, synth::SynthEnvConfig env = {});

    Region locate(const ImageRef& image, const std::string& description, const std::optional<Region>& hint) override;
    OracleAnswer understand(const ImageRef& image, const std::string& query) override;
    Region adjust_bbox(const Region& region, const ImageRef& image, const std::string& instruction) override;
    VerifyResult verify(const std::string& candidate, const std::string& gold) override;

private:
    Region around_target(int view_w, int view_h) const;

    synth::SynthTask task_;
    synth::SynthEnvConfig env_;
    std::vector<FrameTransform> chain_;
};

}  // namespace focusloop::forge
