#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqa/backend.hpp"
#include "vqa/caption.hpp"
#include "vqa/cot.hpp"
#include "vqa/dataset.hpp"
#include "vqa/exemplar.hpp"
#include "vqa/http_backend.hpp"
#include "vqa/replay.hpp"

namespace vqa {

enum class Setting { Standard, Caption, Cot, CotIterative, CotContext, CotConsistency };

std::string_view to_string(Setting s);
Setting setting_from_string(std::string_view name);

struct FewShotSpec {
    std::filesystem::path pool;
    std::size_t k = 5;
    double cap = 0.6;
};

struct CaptionSpec {
    CaptionStrategy strategy = CaptionStrategy::QuestionGuided;
    int samples = 5;
    std::optional<std::filesystem::path> cache;
};

/// An HTTP endpoint; an empty endpoint means "not configured".
struct EndpointSpec {
    std::string endpoint;
    std::string model;
    std::string api_key_env;
    int timeout_s = 120;
    int max_retries = 3;
    std::size_t max_in_flight = 4;

    bool configured() const { return !endpoint.empty(); }
    HttpBackendConfig http_config() const;
};

struct ExperimentSpec {
    std::string name = "run";
    std::filesystem::path dataset_path;
    DatasetFormat dataset_format = DatasetFormat::Canonical;
    WinogroundFraming framing = WinogroundFraming::Statement;

    Setting setting = Setting::Standard;
    /// Answer template for standard/caption; rationale template for the cot
    /// settings. Defaults per setting when empty.
    std::string template_name;
    /// Answer-stage template for cot_iterative and cot_context.
    std::string answer_template = "qa";
    std::string answer_preset = "answer";
    std::optional<std::string> task_instruction;
    /// Present multiple-choice options and grade by the correct option.
    bool use_options = true;

    std::optional<CaptionSpec> caption;
    std::optional<FewShotSpec> few_shot;
    std::optional<ConsistencyConfig> consistency;

    bool use_llm_parse = false;
    bool omit_image = false;
    std::optional<std::size_t> sample_limit;
    std::int64_t seed = 0;
    std::size_t workers = 4;

    EndpointSpec vision;
    EndpointSpec text;
    /// Unconfigured means the built-in hashing embedder.
    EndpointSpec embedding;
    ReplayMode replay_mode = ReplayMode::Passthrough;
    std::optional<std::filesystem::path> replay_store;

    std::filesystem::path results_path = "results.jsonl";
    std::filesystem::path report_path = "report.json";
    bool resume = true;

    /// Resolved template name for the main prompt.
    std::string effective_template() const;
};

/// Throws ConfigError on any inconsistency (caption strategy iff setting is
/// caption, consistency iff cot_consistency, template families, few-shot
/// bounds, replay store present when replaying).
void validate(const ExperimentSpec& spec);

/// Every field except output locations, worker count and resume flag.
nlohmann::json to_json(const ExperimentSpec& spec);

/// Reads a TOML experiment file. "${VAR}" in string values expands from the
/// environment; relative paths resolve against the file's directory.
ExperimentSpec load_experiment(const std::filesystem::path& path);
ExperimentSpec parse_experiment(std::string_view toml_text, const std::filesystem::path& base_dir = ".");

/// Expands "${VAR}"; an unset variable is a ConfigError.
std::string interpolate_env(std::string_view value);

struct RunBackends {
    /// Image requests go to the vision model, text-only ones to the text model.
    std::shared_ptr<Backend> model;
    std::shared_ptr<EmbeddingProvider> embedder;
};

/// Sends requests carrying an image to `vision`, everything else to `text`;
/// when only one is configured it takes everything.
class RoutingBackend final : public Backend {
public:
    RoutingBackend(std::shared_ptr<Backend> vision, std::shared_ptr<Backend> text)
        : vision_(std::move(vision)), text_(std::move(text)) {}

    BackendResponse complete(const BackendRequest& req) override;
    std::string id() const override;

private:
    std::shared_ptr<Backend> vision_;
    std::shared_ptr<Backend> text_;
};

/// HTTP clients from the spec, wrapped for record/replay.
RunBackends build_backends(const ExperimentSpec& spec);

/// Wraps an injected live backend (tests, fixtures) for record/replay.
RunBackends wrap_backends(const ExperimentSpec& spec, std::shared_ptr<Backend> live,
                          std::shared_ptr<EmbeddingProvider> embedder = nullptr);

struct TallyEntry {
    std::string answer;
    std::string key;
    int count = 0;
};

/// One answered question. Winoground samples hold four of these.
struct QuestionResult {
    std::string image_ref;
    std::string question;
    std::optional<bool> expected_yes;
    std::vector<std::string> prompts;
    std::string raw;
    std::vector<std::string> raws;
    std::string candidate;
    std::string parsed;
    std::string parse_outcome;
    std::string normalized;
    std::optional<std::vector<TallyEntry>> tally;
    std::vector<std::string> warnings;
    std::optional<std::string> error;
};

struct SampleResult {
    std::string id;
    std::string dataset;
    std::string question_type;
    std::string metric;
    std::vector<std::string> references;
    std::optional<std::string> choice_answer;
    /// Open and multiple-choice records.
    std::optional<QuestionResult> answer;
    /// Winoground quads, in build_quad order.
    std::optional<std::vector<QuestionResult>> questions;
    double score = 0.0;
    std::vector<std::string> warnings;
    std::optional<std::string> error;
    double timing_ms = 0.0;
};

/// Sorted-key JSON; timing_ms is the only nondeterministic field.
nlohmann::json to_json(const SampleResult& r);
SampleResult sample_result_from_json(const nlohmann::json& j);

std::vector<SampleResult> load_results(const std::filesystem::path& path);
void save_results(const std::filesystem::path& path, std::span<const SampleResult> results);

struct TypeStats {
    double mean = 0.0;
    std::size_t count = 0;

    bool operator==(const TypeStats&) const = default;
};

struct Report {
    std::string name;
    std::string dataset;
    std::string setting;
    /// Unset when no samples were graded.
    std::optional<double> mean;
    std::size_t count = 0;
    std::size_t errors = 0;
    std::map<std::string, TypeStats> per_type;
    nlohmann::json config;
    std::string run_digest;
    std::string sample_set_digest;
};

nlohmann::json to_json(const Report& r);
Report report_from_json(const nlohmann::json& j);
Report load_report(const std::filesystem::path& path);
/// temp file + rename.
void save_report(const std::filesystem::path& path, const Report& r);
std::string format_report_table(const Report& r);

/// Per-type arithmetic means; untagged samples count as "other".
std::map<std::string, TypeStats> report_by_type(std::span<const SampleResult> results);

/// Pure fold over results sorted by id.
Report build_report(std::vector<SampleResult> results, const nlohmann::json& config, std::string run_digest,
                    std::string name = {}, std::string setting = {});

/// hash of the sorted sample ids plus the dataset tag.
std::string sample_set_digest(std::span<const SampleResult> results);

/// b minus a, overall and per type. Throws CompareMismatch unless both
/// reports cover the same dataset and sample set.
nlohmann::json compare(const Report& a, const Report& b);

/// hash of the spec JSON, the dataset file and the replay store.
std::string run_digest(const ExperimentSpec& spec);

struct RunOutcome {
    Report report;
    std::size_t sample_errors = 0;
    std::size_t resumed = 0;
};

/// Runs the experiment, appending results as they complete and writing the
/// report at the end. Fatal problems throw before any backend call; sample
/// failures are recorded with score 0.
RunOutcome run(const ExperimentSpec& spec, RunBackends backends);
RunOutcome run(const ExperimentSpec& spec);

struct RegradeOptions {
    bool use_llm_parse = false;
    /// Text backend for parsing; required when use_llm_parse is set.
    std::shared_ptr<Backend> parser;
};

/// Recomputes parsed, normalized and score from stored candidates without
/// re-running inference. Results that errored stay errored.
std::vector<SampleResult> regrade(std::span<const SampleResult> results, const RegradeOptions& opts);

}  // namespace vqa
