#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "vqa/dataset.hpp"
#include "vqa/exemplar.hpp"
#include "vqa/http_backend.hpp"
#include "vqa/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitSampleErrors = 2;

struct BackendFlags {
    std::string config;
    std::string vision_endpoint, vision_model;
    std::string text_endpoint, text_model;
    std::string api_key_env;
    std::string replay_mode;
    std::string replay_store;

    void add(CLI::App& app) {
        app.add_option("--config", config, "Experiment TOML whose backend and replay sections are used");
        app.add_option("--vision-endpoint", vision_endpoint, "Base URL of the vision model server");
        app.add_option("--vision-model", vision_model, "Vision model name");
        app.add_option("--text-endpoint", text_endpoint, "Base URL of the text model server");
        app.add_option("--text-model", text_model, "Text model name");
        app.add_option("--api-key-env", api_key_env, "Environment variable holding the API key");
        app.add_option("--replay-mode", replay_mode, "record, replay or passthrough");
        app.add_option("--replay-store", replay_store, "Replay store JSONL");
    }

    // Backend fields of a spec, from the config file and then the flags.
    void apply(vqa::ExperimentSpec& spec) const {
        if (!vision_endpoint.empty()) spec.vision = {vision_endpoint, vision_model, api_key_env};
        if (!text_endpoint.empty()) spec.text = {text_endpoint, text_model, api_key_env};
        if (!replay_mode.empty()) spec.replay_mode = vqa::replay_mode_from_string(replay_mode);
        if (!replay_store.empty()) {
            spec.replay_store = replay_store;
            if (replay_mode.empty()) spec.replay_mode = vqa::ReplayMode::Replay;
        }
    }

    vqa::ExperimentSpec spec() const {
        vqa::ExperimentSpec spec;
        if (!config.empty()) spec = vqa::load_experiment(config);
        apply(spec);
        return spec;
    }

    std::shared_ptr<vqa::Backend> backend() const { return vqa::build_backends(spec()).model; }
};

int cmd_run(const std::string& config, const BackendFlags& bf, const std::string& setting,
            const std::string& tmpl, bool llm_parse, bool no_llm_parse, bool omit_image,
            std::optional<std::size_t> limit, std::optional<std::int64_t> seed, std::optional<std::size_t> workers,
            const std::string& results, const std::string& report, bool no_resume) {
    auto spec = vqa::load_experiment(config);
    bf.apply(spec);
    if (!setting.empty()) spec.setting = vqa::setting_from_string(setting);
    if (!tmpl.empty()) spec.template_name = tmpl;
    if (llm_parse) spec.use_llm_parse = true;
    if (no_llm_parse) spec.use_llm_parse = false;
    if (omit_image) spec.omit_image = true;
    if (limit) spec.sample_limit = limit;
    if (seed) spec.seed = *seed;
    if (workers) spec.workers = *workers;
    if (!results.empty()) spec.results_path = results;
    if (!report.empty()) spec.report_path = report;
    if (no_resume) spec.resume = false;
    auto out = vqa::run(spec);
    std::cout << vqa::format_report_table(out.report);
    return out.sample_errors ? kExitSampleErrors : kExitOk;
}

int cmd_score(const std::string& in, const std::string& out_path, const std::string& report_path, bool llm_parse,
              const BackendFlags& bf) {
    auto results = vqa::load_results(in);
    vqa::RegradeOptions opts;
    opts.use_llm_parse = llm_parse;
    nlohmann::json config = {{"regraded_from", in}, {"use_llm_parse", llm_parse}};
    if (llm_parse) opts.parser = bf.backend();
    auto regraded = vqa::regrade(results, opts);
    vqa::save_results(out_path, regraded);
    std::size_t errors = 0;
    for (const auto& r : regraded)
        if (r.error) ++errors;
    auto report = vqa::build_report(regraded, config, {}, "score");
    if (!report_path.empty()) vqa::save_report(report_path, report);
    std::cout << vqa::format_report_table(report);
    return errors ? kExitSampleErrors : kExitOk;
}

int cmd_convert(const std::string& in, const std::string& out_path, const std::string& review_path, int retries,
                const BackendFlags& bf) {
    auto ds = vqa::load_dataset(in, vqa::DatasetFormat::Winoground);
    auto backend = bf.backend();
    std::vector<vqa::ConversionReview> review;
    std::size_t failed = 0;
    for (auto& s : ds.winoground) {
        for (int i = 0; i < 2; ++i) {
            if (s.questions[i]) continue;
            std::optional<std::string> question;
            std::string last_error;
            for (int attempt = 0; attempt <= retries && !question; ++attempt) {
                try {
                    question = vqa::convert_statement(s.captions[i], *backend,
                                                      attempt ? std::optional<std::int64_t>(attempt) : std::nullopt);
                } catch (const vqa::Error& e) {
                    if (e.kind() != vqa::ErrorKind::ConversionInvalid) throw;
                    last_error = e.what();
                }
            }
            if (!question) {
                ++failed;
                spdlog::warn("{}", last_error);
            }
            s.questions[i] = question;
            review.push_back({s.captions[i], question.value_or(""), question.has_value()});
        }
    }
    vqa::save_winoground(out_path, ds.winoground);
    if (!review_path.empty()) vqa::write_review_tsv(review_path, review);
    std::cout << ds.winoground.size() << " sample(s), " << failed << " conversion(s) failed\n";
    return failed ? kExitSampleErrors : kExitOk;
}

int cmd_embed_pool(const std::string& pool_path, const std::string& endpoint, const std::string& model,
                   const std::string& api_key_env) {
    std::unique_ptr<vqa::EmbeddingProvider> provider;
    if (endpoint.empty()) {
        provider = std::make_unique<vqa::HashEmbedder>();
    } else {
        vqa::HttpBackendConfig cfg;
        cfg.endpoint = endpoint;
        cfg.model = model;
        cfg.api_key_env = api_key_env;
        provider = std::make_unique<vqa::HttpEmbeddingProvider>(cfg);
    }
    auto pool = vqa::load_pool(pool_path);
    auto added = vqa::embed_missing(pool, *provider);
    if (added) vqa::save_pool(pool_path, pool);
    std::cout << pool.size() << " exemplar(s), " << added << " embedded\n";
    return kExitOk;
}

int cmd_report(const std::string& results, const std::string& report_path, bool as_json) {
    vqa::Report report;
    if (!results.empty())
        report = vqa::build_report(vqa::load_results(results), nullptr, {}, results);
    else
        report = vqa::load_report(report_path);
    if (as_json)
        std::cout << vqa::to_json(report).dump(2) << "\n";
    else
        std::cout << vqa::format_report_table(report);
    return kExitOk;
}

int cmd_compare(const std::string& a, const std::string& b) {
    auto delta = vqa::compare(vqa::load_report(a), vqa::load_report(b));
    std::cout << delta.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompted visual question answering experiments"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

    auto* run = app.add_subcommand("run", "Run an experiment from a TOML config");
    std::string config, setting, tmpl, results, report;
    bool llm_parse = false, no_llm_parse = false, omit_image = false, no_resume = false;
    std::optional<std::size_t> limit, workers;
    std::optional<std::int64_t> seed;
    BackendFlags run_backend;
    run->add_option("config", config, "Experiment TOML")->required()->check(CLI::ExistingFile);
    run->add_option("--setting", setting, "standard, caption, cot, cot_iterative, cot_context, cot_consistency");
    run->add_option("--template", tmpl, "Template name");
    run->add_flag("--llm-parse", llm_parse, "Parse verbose answers with the text model");
    run->add_flag("--no-llm-parse", no_llm_parse, "Grade raw answers");
    run->add_flag("--omit-image", omit_image, "Send prompts without the image");
    run->add_option("--sample-limit", limit, "Process only the first N samples");
    run->add_option("--seed", seed, "Base seed for sampled decoding");
    run->add_option("--workers", workers, "Concurrent samples");
    run->add_option("--results", results, "Results JSONL");
    run->add_option("--report", report, "Report JSON");
    run->add_flag("--no-resume", no_resume, "Start over instead of resuming");
    run->add_option("--replay-mode", run_backend.replay_mode, "record, replay or passthrough");
    run->add_option("--replay-store", run_backend.replay_store, "Replay store JSONL");

    auto* score = app.add_subcommand("score", "Re-grade stored outputs without re-running inference");
    std::string score_in, score_out, score_report;
    bool score_parse = false;
    BackendFlags score_backend;
    score->add_option("results", score_in, "Results JSONL")->required()->check(CLI::ExistingFile);
    score->add_option("-o,--output", score_out, "Re-graded results JSONL")->required();
    score->add_option("--report", score_report, "Report JSON");
    score->add_flag("--llm-parse", score_parse, "Parse verbose answers with the text model");
    score_backend.add(*score);

    auto* convert = app.add_subcommand("convert-winoground", "Turn Winoground captions into yes/no questions");
    std::string conv_in, conv_out, conv_review;
    int conv_retries = 2;
    BackendFlags conv_backend;
    convert->add_option("input", conv_in, "Winoground JSONL")->required()->check(CLI::ExistingFile);
    convert->add_option("-o,--output", conv_out, "Output JSONL with questions filled in")->required();
    convert->add_option("--review", conv_review, "Review TSV");
    convert->add_option("--retries", conv_retries, "Regenerations after an invalid conversion");
    conv_backend.add(*convert);

    auto* embed = app.add_subcommand("embed-pool", "Embed exemplar questions that lack embeddings");
    std::string pool_path, embed_endpoint, embed_model, embed_key;
    embed->add_option("pool", pool_path, "Exemplar pool JSONL")->required()->check(CLI::ExistingFile);
    embed->add_option("--endpoint", embed_endpoint, "Embedding server; the hashing embedder when omitted");
    embed->add_option("--model", embed_model, "Embedding model name");
    embed->add_option("--api-key-env", embed_key, "Environment variable holding the API key");

    auto* rep = app.add_subcommand("report", "Summarize a results file or a report");
    std::string rep_results, rep_report;
    bool rep_json = false;
    auto* rep_group = rep->add_option_group("source");
    rep_group->add_option("--results", rep_results, "Results JSONL")->check(CLI::ExistingFile);
    rep_group->add_option("--report", rep_report, "Report JSON")->check(CLI::ExistingFile);
    rep_group->require_option(1);
    rep->add_flag("--json", rep_json, "Print JSON instead of a table");

    auto* cmp = app.add_subcommand("compare", "Per-type deltas between two reports (b minus a)");
    std::string cmp_a, cmp_b;
    cmp->add_option("a", cmp_a, "Baseline report")->required()->check(CLI::ExistingFile);
    cmp->add_option("b", cmp_b, "Compared report")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitFatal;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (*run)
            return cmd_run(config, run_backend, setting, tmpl, llm_parse, no_llm_parse, omit_image, limit, seed,
                           workers, results, report, no_resume);
        if (*score) return cmd_score(score_in, score_out, score_report, score_parse, score_backend);
        if (*convert) return cmd_convert(conv_in, conv_out, conv_review, conv_retries, conv_backend);
        if (*embed) return cmd_embed_pool(pool_path, embed_endpoint, embed_model, embed_key);
        if (*rep) return cmd_report(rep_results, rep_report, rep_json);
        if (*cmp) return cmd_compare(cmp_a, cmp_b);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitFatal;
    }
    return kExitFatal;
}
