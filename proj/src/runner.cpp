#include "vqa/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>
#include <toml.hpp>

#include "vqa/digest.hpp"
#include "vqa/metrics.hpp"
#include "vqa/templates.hpp"
#include "vqa/text.hpp"

namespace vqa {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Setting s) {
    switch (s) {
        case Setting::Standard: return "standard";
        case Setting::Caption: return "caption";
        case Setting::Cot: return "cot";
        case Setting::CotIterative: return "cot_iterative";
        case Setting::CotContext: return "cot_context";
        case Setting::CotConsistency: return "cot_consistency";
    }
    return "standard";
}

Setting setting_from_string(std::string_view name) {
    for (auto s : {Setting::Standard, Setting::Caption, Setting::Cot, Setting::CotIterative, Setting::CotContext,
                   Setting::CotConsistency})
        if (to_string(s) == name) return s;
    throw Error(ErrorKind::ConfigError, "unknown setting '" + std::string(name) + "'");
}

namespace {

bool is_cot(Setting s) { return s != Setting::Standard && s != Setting::Caption; }

FewShotSetting few_shot_setting(Setting s) {
    if (s == Setting::Caption) return FewShotSetting::Caption;
    return is_cot(s) ? FewShotSetting::Cot : FewShotSetting::Standard;
}

json opt_json(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::string> opt_string(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<std::string>();
}

}  // namespace

HttpBackendConfig EndpointSpec::http_config() const {
    HttpBackendConfig c;
    c.endpoint = endpoint;
    c.model = model;
    c.api_key_env = api_key_env;
    c.timeout = std::chrono::seconds(timeout_s);
    c.max_retries = max_retries;
    c.max_in_flight = max_in_flight;
    return c;
}

std::string ExperimentSpec::effective_template() const {
    if (!template_name.empty()) return template_name;
    return is_cot(setting) ? "think-qa" : "qa";
}

void validate(const ExperimentSpec& spec) {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::ConfigError, msg); };
    if (spec.dataset_path.empty()) fail("dataset path is required");
    if (spec.caption.has_value() != (spec.setting == Setting::Caption))
        fail("a caption section is required for, and only allowed with, setting=caption");
    if (spec.consistency.has_value() != (spec.setting == Setting::CotConsistency))
        fail("a consistency section is required for, and only allowed with, setting=cot_consistency");
    if (spec.caption && spec.caption->strategy == CaptionStrategy::Dense && spec.caption->samples < 2)
        fail("dense captions need at least 2 samples");
    if (spec.consistency && (spec.consistency->n_paths < 1 || !(spec.consistency->temperature > 0.0)))
        fail("consistency needs n_paths >= 1 and temperature > 0");

    const auto& reg = builtin_registry();
    auto tmpl = spec.effective_template();
    if (!reg.contains(tmpl)) fail("unknown template '" + tmpl + "'");
    const auto family = reg.at(tmpl).family;
    if (is_cot(spec.setting) && family != TemplateFamily::Cot)
        fail("setting " + std::string(to_string(spec.setting)) + " needs a cot template, got '" + tmpl + "'");
    if (!is_cot(spec.setting) && family != TemplateFamily::Standard)
        fail("setting " + std::string(to_string(spec.setting)) + " needs a standard template, got '" + tmpl + "'");
    if (spec.setting == Setting::CotIterative || spec.setting == Setting::CotContext) {
        if (!reg.contains(spec.answer_template) || reg.at(spec.answer_template).family != TemplateFamily::Standard)
            fail("answer_template must name a standard template");
    }
    try {
        preset(spec.answer_preset);
    } catch (const Error& e) {
        fail(e.what());
    }
    if (spec.few_shot) {
        if (spec.few_shot->pool.empty()) fail("few_shot.pool is required");
        if (spec.few_shot->k < 1 || spec.few_shot->k > kMaxExemplars)
            fail("few_shot.k must be between 1 and " + std::to_string(kMaxExemplars));
        if (!(spec.few_shot->cap > 0.0 && spec.few_shot->cap <= 1.0)) fail("few_shot.cap must be in (0, 1]");
    }
    if (spec.workers < 1) fail("workers must be >= 1");
    if (spec.replay_mode != ReplayMode::Passthrough && !spec.replay_store)
        fail("replay mode " + std::string(to_string(spec.replay_mode)) + " needs a store path");
}

json to_json(const ExperimentSpec& spec) {
    json j;
    j["name"] = spec.name;
    j["dataset"] = {{"path", spec.dataset_path.generic_string()},
                    {"format", to_string(spec.dataset_format)},
                    {"framing", to_string(spec.framing)}};
    j["setting"] = to_string(spec.setting);
    j["template"] = spec.effective_template();
    j["answer_template"] = spec.answer_template;
    j["answer_preset"] = spec.answer_preset;
    j["task_instruction"] = opt_json(spec.task_instruction);
    j["use_options"] = spec.use_options;
    j["caption"] = spec.caption ? json{{"strategy", to_string(spec.caption->strategy)},
                                       {"samples", spec.caption->samples}}
                                : json(nullptr);
    j["few_shot"] = spec.few_shot ? json{{"pool", spec.few_shot->pool.generic_string()},
                                         {"k", spec.few_shot->k},
                                         {"cap", spec.few_shot->cap}}
                                  : json(nullptr);
    j["consistency"] = spec.consistency ? json{{"n_paths", spec.consistency->n_paths},
                                               {"temperature", spec.consistency->temperature}}
                                        : json(nullptr);
    j["use_llm_parse"] = spec.use_llm_parse;
    j["omit_image"] = spec.omit_image;
    j["sample_limit"] = spec.sample_limit ? json(*spec.sample_limit) : json(nullptr);
    j["seed"] = spec.seed;
    auto endpoint = [](const EndpointSpec& e) {
        return e.configured() ? json{{"endpoint", e.endpoint}, {"model", e.model}} : json(nullptr);
    };
    j["backend"] = {{"vision", endpoint(spec.vision)},
                    {"text", endpoint(spec.text)},
                    {"embedding", spec.embedding.configured() ? endpoint(spec.embedding) : json("hash")}};
    return j;
}

std::string interpolate_env(std::string_view value) {
    std::string out;
    std::size_t i = 0;
    while (i < value.size()) {
        if (value.compare(i, 2, "${") == 0) {
            auto close = value.find('}', i + 2);
            if (close == std::string_view::npos)
                throw Error(ErrorKind::ConfigError, "unterminated ${ in '" + std::string(value) + "'");
            std::string name(value.substr(i + 2, close - i - 2));
            const char* v = std::getenv(name.c_str());
            if (!v) throw Error(ErrorKind::ConfigError, "environment variable " + name + " is not set");
            out += v;
            i = close + 1;
        } else {
            out += value[i++];
        }
    }
    return out;
}

namespace {

class TomlReader {
public:
    explicit TomlReader(const toml::table& t, std::string prefix = {}) : t_(t), prefix_(std::move(prefix)) {}

    std::optional<std::string> str(const char* key) const {
        auto node = t_.get(key);
        if (!node) return std::nullopt;
        if (!node->is_string()) bad(key, "a string");
        return interpolate_env(node->value<std::string>().value());
    }
    std::optional<std::int64_t> integer(const char* key) const {
        auto node = t_.get(key);
        if (!node) return std::nullopt;
        if (!node->is_integer()) bad(key, "an integer");
        return node->value<std::int64_t>().value();
    }
    std::optional<double> number(const char* key) const {
        auto node = t_.get(key);
        if (!node) return std::nullopt;
        if (!node->is_number()) bad(key, "a number");
        return node->value<double>().value();
    }
    std::optional<bool> boolean(const char* key) const {
        auto node = t_.get(key);
        if (!node) return std::nullopt;
        if (!node->is_boolean()) bad(key, "a boolean");
        return node->value<bool>().value();
    }
    std::optional<TomlReader> table(const char* key) const {
        auto node = t_.get(key);
        if (!node) return std::nullopt;
        if (!node->is_table()) bad(key, "a table");
        return TomlReader(*node->as_table(), prefix_ + key + ".");
    }

private:
    [[noreturn]] void bad(const char* key, const char* what) const {
        throw Error(ErrorKind::ConfigError, prefix_ + key + " must be " + what);
    }

    const toml::table& t_;
    std::string prefix_;
};

std::size_t non_negative(std::int64_t v, const char* what) {
    if (v < 0) throw Error(ErrorKind::ConfigError, std::string(what) + " must not be negative");
    return static_cast<std::size_t>(v);
}

EndpointSpec read_endpoint(const TomlReader& t) {
    EndpointSpec e;
    e.endpoint = t.str("endpoint").value_or("");
    e.model = t.str("model").value_or("");
    e.api_key_env = t.str("api_key_env").value_or("");
    if (auto v = t.integer("timeout_s")) e.timeout_s = static_cast<int>(*v);
    if (auto v = t.integer("max_retries")) e.max_retries = static_cast<int>(*v);
    if (auto v = t.integer("max_in_flight")) e.max_in_flight = non_negative(*v, "max_in_flight");
    return e;
}

}  // namespace

ExperimentSpec parse_experiment(std::string_view toml_text, const fs::path& base_dir) {
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "line " << e.source().begin.line << ": " << e.description();
        throw Error(ErrorKind::ConfigError, msg.str());
    }
    auto resolve = [&](const std::string& p) {
        fs::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };

    TomlReader t(root);
    ExperimentSpec spec;
    if (auto v = t.str("name")) spec.name = *v;
    if (auto v = t.str("setting")) spec.setting = setting_from_string(*v);
    if (auto v = t.str("template")) spec.template_name = *v;
    if (auto v = t.str("answer_template")) spec.answer_template = *v;
    if (auto v = t.str("answer_preset")) spec.answer_preset = *v;
    spec.task_instruction = t.str("task_instruction");
    if (auto v = t.boolean("use_options")) spec.use_options = *v;
    if (auto v = t.boolean("use_llm_parse")) spec.use_llm_parse = *v;
    if (auto v = t.boolean("omit_image")) spec.omit_image = *v;
    if (auto v = t.integer("sample_limit")) spec.sample_limit = non_negative(*v, "sample_limit");
    if (auto v = t.integer("seed")) spec.seed = *v;
    if (auto v = t.integer("workers")) spec.workers = non_negative(*v, "workers");

    auto ds = t.table("dataset");
    if (!ds) throw Error(ErrorKind::ConfigError, "missing [dataset] table");
    auto dpath = ds->str("path");
    if (!dpath) throw Error(ErrorKind::ConfigError, "dataset.path is required");
    spec.dataset_path = resolve(*dpath);
    if (auto v = ds->str("format")) spec.dataset_format = dataset_format_from_string(*v);
    if (auto v = ds->str("framing")) spec.framing = winoground_framing_from_string(*v);

    if (auto c = t.table("caption")) {
        CaptionSpec cs;
        if (auto v = c->str("strategy")) cs.strategy = caption_strategy_from_string(*v);
        if (auto v = c->integer("samples")) cs.samples = static_cast<int>(*v);
        if (auto v = c->str("cache")) cs.cache = resolve(*v);
        spec.caption = cs;
    }
    if (auto f = t.table("few_shot")) {
        FewShotSpec fsp;
        if (auto v = f->str("pool")) fsp.pool = resolve(*v);
        if (auto v = f->integer("k")) fsp.k = non_negative(*v, "few_shot.k");
        if (auto v = f->number("cap")) fsp.cap = *v;
        spec.few_shot = fsp;
    }
    if (auto c = t.table("consistency")) {
        ConsistencyConfig cc;
        if (auto v = c->integer("n_paths")) cc.n_paths = static_cast<int>(*v);
        if (auto v = c->number("temperature")) cc.temperature = *v;
        spec.consistency = cc;
    }
    if (auto b = t.table("backend")) {
        if (auto v = b->table("vision")) spec.vision = read_endpoint(*v);
        if (auto v = b->table("text")) spec.text = read_endpoint(*v);
        if (auto v = b->table("embedding")) spec.embedding = read_endpoint(*v);
    }
    if (auto r = t.table("replay")) {
        if (auto v = r->str("mode")) spec.replay_mode = replay_mode_from_string(*v);
        if (auto v = r->str("store")) spec.replay_store = resolve(*v);
    }
    if (auto o = t.table("output")) {
        if (auto v = o->str("results")) spec.results_path = resolve(*v);
        if (auto v = o->str("report")) spec.report_path = resolve(*v);
        if (auto v = o->boolean("resume")) spec.resume = *v;
    } else {
        spec.results_path = base_dir / spec.results_path;
        spec.report_path = base_dir / spec.report_path;
    }
    validate(spec);
    return spec;
}

ExperimentSpec load_experiment(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_experiment(bytes, path.parent_path().empty() ? fs::path(".") : path.parent_path());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::ConfigError) throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
        throw;
    }
}

BackendResponse RoutingBackend::complete(const BackendRequest& req) {
    // A missing side falls back to the other model.
    auto& preferred = req.image_ref ? vision_ : text_;
    auto& target = preferred ? preferred : (req.image_ref ? text_ : vision_);
    if (!target)
        throw Error(ErrorKind::ConfigError,
                    "no backend configured for " + std::string(to_string(req.purpose)) + " requests");
    return target->complete(req);
}

std::string RoutingBackend::id() const {
    return (vision_ ? vision_->id() : "-") + "+" + (text_ ? text_->id() : "-");
}

RunBackends wrap_backends(const ExperimentSpec& spec, std::shared_ptr<Backend> live,
                          std::shared_ptr<EmbeddingProvider> embedder) {
    RunBackends out;
    if (spec.replay_mode == ReplayMode::Passthrough)
        out.model = std::move(live);
    else
        out.model = record_replay(spec.replay_mode, *spec.replay_store, std::move(live));
    out.embedder = embedder ? std::move(embedder) : std::make_shared<HashEmbedder>();
    return out;
}

RunBackends build_backends(const ExperimentSpec& spec) {
    std::shared_ptr<Backend> live;
    if (spec.replay_mode != ReplayMode::Replay) {
        std::shared_ptr<Backend> vision, textb;
        if (spec.vision.configured()) vision = std::make_shared<HttpBackend>(spec.vision.http_config());
        if (spec.text.configured()) textb = std::make_shared<HttpBackend>(spec.text.http_config());
        if (!vision && !textb) throw Error(ErrorKind::ConfigError, "no backend endpoint configured");
        live = std::make_shared<RoutingBackend>(vision, textb);
    }
    std::shared_ptr<EmbeddingProvider> embedder;
    if (spec.embedding.configured()) embedder = std::make_shared<HttpEmbeddingProvider>(spec.embedding.http_config());
    return wrap_backends(spec, std::move(live), std::move(embedder));
}

// ---- results --------------------------------------------------------------

namespace {

json to_json(const TallyEntry& t) { return {{"answer", t.answer}, {"key", t.key}, {"count", t.count}}; }

json to_json(const QuestionResult& q) {
    json j;
    j["image_ref"] = q.image_ref;
    j["question"] = q.question;
    j["expected"] = q.expected_yes ? json(*q.expected_yes ? "yes" : "no") : json(nullptr);
    j["prompts"] = q.prompts;
    j["raw"] = q.raw;
    j["raws"] = q.raws;
    j["candidate"] = q.candidate;
    j["parsed"] = q.parsed;
    j["parse_outcome"] = q.parse_outcome;
    j["normalized"] = q.normalized;
    if (q.tally) {
        json t = json::array();
        for (const auto& e : *q.tally) t.push_back(to_json(e));
        j["tally"] = t;
    } else {
        j["tally"] = nullptr;
    }
    j["warnings"] = q.warnings;
    j["error"] = opt_json(q.error);
    return j;
}

QuestionResult question_result_from_json(const json& j) {
    QuestionResult q;
    q.image_ref = j.value("image_ref", "");
    q.question = j.value("question", "");
    if (auto e = opt_string(j, "expected")) q.expected_yes = *e == "yes";
    q.prompts = j.value("prompts", std::vector<std::string>{});
    q.raw = j.value("raw", "");
    q.raws = j.value("raws", std::vector<std::string>{});
    q.candidate = j.value("candidate", "");
    q.parsed = j.value("parsed", "");
    q.parse_outcome = j.value("parse_outcome", "");
    q.normalized = j.value("normalized", "");
    if (j.contains("tally") && j["tally"].is_array()) {
        std::vector<TallyEntry> t;
        for (const auto& e : j["tally"]) t.push_back({e.at("answer"), e.at("key"), e.at("count")});
        q.tally = std::move(t);
    }
    q.warnings = j.value("warnings", std::vector<std::string>{});
    q.error = opt_string(j, "error");
    return q;
}

}  // namespace

json to_json(const SampleResult& r) {
    json j;
    j["id"] = r.id;
    j["dataset"] = r.dataset;
    j["question_type"] = r.question_type;
    j["metric"] = r.metric;
    j["references"] = r.references;
    j["choice_answer"] = opt_json(r.choice_answer);
    j["answer"] = r.answer ? to_json(*r.answer) : json(nullptr);
    if (r.questions) {
        json qs = json::array();
        for (const auto& q : *r.questions) qs.push_back(to_json(q));
        j["questions"] = qs;
    } else {
        j["questions"] = nullptr;
    }
    j["score"] = r.score;
    j["warnings"] = r.warnings;
    j["error"] = opt_json(r.error);
    j["timing_ms"] = r.timing_ms;
    return j;
}

SampleResult sample_result_from_json(const json& j) {
    SampleResult r;
    r.id = j.at("id").get<std::string>();
    r.dataset = j.value("dataset", "");
    r.question_type = j.value("question_type", "other");
    r.metric = j.value("metric", "");
    r.references = j.value("references", std::vector<std::string>{});
    r.choice_answer = opt_string(j, "choice_answer");
    if (j.contains("answer") && j["answer"].is_object()) r.answer = question_result_from_json(j["answer"]);
    if (j.contains("questions") && j["questions"].is_array()) {
        std::vector<QuestionResult> qs;
        for (const auto& q : j["questions"]) qs.push_back(question_result_from_json(q));
        r.questions = std::move(qs);
    }
    r.score = j.value("score", 0.0);
    r.warnings = j.value("warnings", std::vector<std::string>{});
    r.error = opt_string(j, "error");
    r.timing_ms = j.value("timing_ms", 0.0);
    return r;
}

namespace {

// Reads complete lines; a torn final line (crash mid-write) is dropped.
std::vector<SampleResult> read_results(const fs::path& path, bool tolerate_torn_tail, bool& torn) {
    torn = false;
    std::vector<SampleResult> out;
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::LoadError, "cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!text::trim(line).empty()) lines.push_back(std::move(line));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            out.push_back(sample_result_from_json(json::parse(lines[i])));
        } catch (const std::exception& e) {
            if (tolerate_torn_tail && i + 1 == lines.size()) {
                torn = true;
                break;
            }
            throw Error(ErrorKind::LoadError, path.string() + " line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

void write_atomically(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) throw Error(ErrorKind::LoadError, "cannot write " + tmp.string());
        out << bytes;
        if (!out.flush()) throw Error(ErrorKind::LoadError, "cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace

std::vector<SampleResult> load_results(const fs::path& path) {
    bool torn = false;
    return read_results(path, false, torn);
}

void save_results(const fs::path& path, std::span<const SampleResult> results) {
    std::string bytes;
    for (const auto& r : results) bytes += to_json(r).dump() + "\n";
    write_atomically(path, bytes);
}

// ---- reports --------------------------------------------------------------

std::map<std::string, TypeStats> report_by_type(std::span<const SampleResult> results) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& r : results) {
        auto& a = acc[r.question_type.empty() ? "other" : r.question_type];
        a.first += r.score;
        a.second += 1;
    }
    std::map<std::string, TypeStats> out;
    for (const auto& [type, a] : acc) out[type] = {a.first / static_cast<double>(a.second), a.second};
    return out;
}

std::string sample_set_digest(std::span<const SampleResult> results) {
    std::vector<std::string> ids;
    std::set<std::string> datasets;
    for (const auto& r : results) {
        ids.push_back(r.id);
        datasets.insert(r.dataset);
    }
    std::sort(ids.begin(), ids.end());
    std::string blob;
    for (const auto& d : datasets) blob += d + "\n";
    blob += "--\n";
    for (const auto& id : ids) blob += id + "\n";
    return sha256_hex(blob);
}

Report build_report(std::vector<SampleResult> results, const json& config, std::string digest, std::string name,
                    std::string setting) {
    std::sort(results.begin(), results.end(), [](const SampleResult& a, const SampleResult& b) { return a.id < b.id; });
    Report r;
    r.name = std::move(name);
    r.setting = std::move(setting);
    r.config = config;
    r.run_digest = std::move(digest);
    r.count = results.size();
    std::set<std::string> datasets;
    double sum = 0.0;
    for (const auto& s : results) {
        sum += s.score;
        if (s.error) ++r.errors;
        datasets.insert(s.dataset);
    }
    std::vector<std::string> ds(datasets.begin(), datasets.end());
    r.dataset = text::join(ds, ",");
    if (r.count > 0) r.mean = sum / static_cast<double>(r.count);
    r.per_type = report_by_type(results);
    r.sample_set_digest = sample_set_digest(results);
    return r;
}

json to_json(const Report& r) {
    json per_type = json::object();
    for (const auto& [type, s] : r.per_type) per_type[type] = {{"mean", s.mean}, {"count", s.count}};
    return {{"name", r.name},
            {"dataset", r.dataset},
            {"setting", r.setting},
            {"mean", r.mean ? json(*r.mean) : json(nullptr)},
            {"mean_defined", r.mean.has_value()},
            {"count", r.count},
            {"errors", r.errors},
            {"per_type", per_type},
            {"config", r.config},
            {"run_digest", r.run_digest},
            {"sample_set_digest", r.sample_set_digest}};
}

Report report_from_json(const json& j) {
    Report r;
    try {
        r.name = j.value("name", "");
        r.dataset = j.at("dataset").get<std::string>();
        r.setting = j.value("setting", "");
        if (!j.at("mean").is_null()) r.mean = j["mean"].get<double>();
        r.count = j.at("count").get<std::size_t>();
        r.errors = j.value("errors", std::size_t{0});
        for (const auto& [type, s] : j.at("per_type").items())
            r.per_type[type] = {s.at("mean").get<double>(), s.at("count").get<std::size_t>()};
        r.config = j.value("config", json(nullptr));
        r.run_digest = j.value("run_digest", "");
        r.sample_set_digest = j.at("sample_set_digest").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::LoadError, std::string("malformed report: ") + e.what());
    }
    return r;
}

Report load_report(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::LoadError, "cannot open " + path.string());
    try {
        return report_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::LoadError, path.string() + ": " + e.what());
    }
}

void save_report(const fs::path& path, const Report& r) { write_atomically(path, to_json(r).dump(2) + "\n"); }

std::string format_report_table(const Report& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "run " << (r.name.empty() ? "-" : r.name) << "  dataset " << r.dataset << "  setting "
        << (r.setting.empty() ? "-" : r.setting) << "\n";
    out << std::left << std::setw(20) << "question type" << std::right << std::setw(10) << "accuracy"
        << std::setw(8) << "n" << "\n";
    for (const auto& [type, s] : r.per_type)
        out << std::left << std::setw(20) << type << std::right << std::setw(10) << s.mean * 100.0 << std::setw(8)
            << s.count << "\n";
    out << std::left << std::setw(20) << "overall" << std::right << std::setw(10);
    if (r.mean)
        out << *r.mean * 100.0;
    else
        out << "n/a";
    out << std::setw(8) << r.count << "\n";
    if (r.errors) out << r.errors << " sample(s) errored and were scored 0\n";
    return out.str();
}

json compare(const Report& a, const Report& b) {
    if (a.dataset != b.dataset)
        throw Error(ErrorKind::CompareMismatch, "datasets differ: '" + a.dataset + "' vs '" + b.dataset + "'");
    if (a.sample_set_digest != b.sample_set_digest)
        throw Error(ErrorKind::CompareMismatch, "sample sets differ");
    auto num = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json out;
    out["dataset"] = a.dataset;
    out["a"] = a.name;
    out["b"] = b.name;
    out["overall"] = {{"a", num(a.mean)},
                      {"b", num(b.mean)},
                      {"delta", a.mean && b.mean ? json(*b.mean - *a.mean) : json(nullptr)},
                      {"count", a.count}};
    json per_type = json::object();
    for (const auto& [type, sa] : a.per_type) {
        auto it = b.per_type.find(type);
        if (it == b.per_type.end() || it->second.count != sa.count)
            throw Error(ErrorKind::CompareMismatch, "question type '" + type + "' differs between runs");
        per_type[type] = {{"a", sa.mean}, {"b", it->second.mean}, {"delta", it->second.mean - sa.mean},
                          {"count", sa.count}};
    }
    if (b.per_type.size() != a.per_type.size())
        throw Error(ErrorKind::CompareMismatch, "question types differ between runs");
    out["per_type"] = per_type;
    return out;
}

std::string run_digest(const ExperimentSpec& spec) {
    json j = {{"spec", to_json(spec)},
              {"dataset", file_sha256_hex(spec.dataset_path)},
              {"replay_store", spec.replay_store && spec.replay_mode == ReplayMode::Replay
                                   ? json(file_sha256_hex(*spec.replay_store))
                                   : json(nullptr)},
              {"few_shot_pool", spec.few_shot ? json(file_sha256_hex(spec.few_shot->pool)) : json(nullptr)}};
    return sha256_hex(j.dump());
}

// ---- grading --------------------------------------------------------------

namespace {

constexpr const char* kVqaMetric = "vqa_accuracy";
constexpr const char* kBinaryMetric = "binary";
constexpr const char* kWinogroundMetric = "winoground_group";

void parse_answer(QuestionResult& q, bool use_llm_parse, Backend* parser) {
    if (use_llm_parse) {
        auto p = llm_parse(q.question, q.candidate, *parser);
        q.parsed = p.text;
        q.parse_outcome = std::string(to_string(p.outcome));
        if (!p.warning.empty()) q.warnings.push_back(p.warning);
    } else {
        q.parsed = q.candidate;
        q.parse_outcome = "disabled";
    }
    q.normalized = normalize(q.parsed);
}

WinogroundQuad quad_of(const SampleResult& r) {
    WinogroundQuad quad;
    quad.sample_id = r.id;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& q = (*r.questions)[i];
        quad.items[i] = {q.image_ref, q.question, q.expected_yes.value_or(false)};
    }
    return quad;
}

void score_sample(SampleResult& r) {
    r.score = 0.0;
    if (r.error) return;
    if (r.metric == kWinogroundMetric) {
        if (!r.questions || r.questions->size() != 4) throw Error(ErrorKind::Precondition, "winoground needs 4 answers");
        std::vector<std::string> answers;
        for (const auto& q : *r.questions) answers.push_back(q.parsed);
        auto s = winoground_group_score(quad_of(r), answers);
        r.score = s.score;
        if (s.non_binary > 0) r.warnings.push_back(std::to_string(s.non_binary) + " non-binary answer(s)");
        return;
    }
    const auto& parsed = r.answer->parsed;
    if (r.metric == kBinaryMetric) {
        const auto& target = r.choice_answer ? *r.choice_answer : r.references.front();
        r.score = binary_accuracy(parsed, target);
    } else {
        r.score = vqa_accuracy(parsed, r.references);
    }
}

}  // namespace

std::vector<SampleResult> regrade(std::span<const SampleResult> results, const RegradeOptions& opts) {
    if (opts.use_llm_parse && !opts.parser)
        throw Error(ErrorKind::ConfigError, "re-grading with llm_parse needs a text backend");
    std::vector<SampleResult> out(results.begin(), results.end());
    for (auto& r : out) {
        if (r.error) continue;
        auto reparse = [&](QuestionResult& q) {
            std::erase_if(q.warnings, [](const std::string& w) { return w.starts_with("ParseFallback"); });
            parse_answer(q, opts.use_llm_parse, opts.parser.get());
        };
        std::erase_if(r.warnings, [](const std::string& w) { return w.ends_with("non-binary answer(s)"); });
        if (r.questions)
            for (auto& q : *r.questions) reparse(q);
        if (r.answer) reparse(*r.answer);
        score_sample(r);
    }
    return out;
}

// ---- run ------------------------------------------------------------------

namespace {

struct WorkItem {
    std::string id;
    const QuestionRecord* record = nullptr;
    const WinogroundSample* wino = nullptr;
};

class Engine {
public:
    Engine(const ExperimentSpec& spec, RunBackends backends, std::vector<Exemplar> pool)
        : spec_(spec),
          backends_(std::move(backends)),
          pool_(std::move(pool)),
          template_(builtin_registry().at(spec.effective_template())),
          answer_template_(builtin_registry().at(spec.answer_template)) {
        if (spec.caption) {
            auto cache = spec.caption->cache ? std::make_shared<CaptionCache>(*spec.caption->cache)
                                             : std::make_shared<CaptionCache>();
            CaptionBackends cb{backends_.model, backends_.model, backends_.model, backends_.model};
            captions_ = std::make_unique<CaptionPipeline>(cb, cache);
        }
    }

    SampleResult process(const WorkItem& item) {
        auto start = std::chrono::steady_clock::now();
        SampleResult r;
        r.id = item.id;
        if (item.record)
            process_record(*item.record, r);
        else
            process_winoground(*item.wino, r);
        r.timing_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return r;
    }

private:
    void process_record(const QuestionRecord& rec, SampleResult& r) {
        r.dataset = rec.dataset.empty() ? std::string(to_string(spec_.dataset_format)) : rec.dataset;
        r.question_type = rec.question_type.value_or("other");
        r.references = rec.refs;
        const bool mc = rec.options && rec.choice_answer && (spec_.use_options || rec.dataset == "visual7w");
        if (mc) {
            r.metric = kBinaryMetric;
            r.choice_answer = rec.choice_answer;
        } else {
            r.metric = rec.dataset == "gqa" ? kBinaryMetric : kVqaMetric;
        }
        PromptContext ctx;
        ctx.question = rec.question;
        if (mc) ctx.options = rec.options;
        ctx.task_instruction = spec_.task_instruction;
        ctx.is_binary_question = r.question_type == "yes/no";
        r.answer = answer(ctx, rec.image_ref, std::nullopt);
        finish(r, {&*r.answer, 1});
    }

    void process_winoground(const WinogroundSample& s, SampleResult& r) {
        r.dataset = "winoground";
        r.question_type = "winoground";
        r.metric = kWinogroundMetric;
        r.references = {s.captions[0], s.captions[1]};
        WinogroundQuad quad;
        try {
            quad = build_quad(s, spec_.framing);
        } catch (const Error& e) {
            r.error = e.what();
            r.warnings.push_back(e.what());
            return;
        }
        std::vector<QuestionResult> qs;
        for (const auto& item : quad.items) {
            PromptContext ctx;
            ctx.question = item.question;
            ctx.task_instruction = spec_.task_instruction;
            ctx.is_binary_question = true;
            qs.push_back(answer(ctx, item.image_ref, item.expected_yes));
        }
        r.questions = std::move(qs);
        finish(r, *r.questions);
    }

    void finish(SampleResult& r, std::span<QuestionResult> qs) {
        for (const auto& q : qs) {
            if (q.error && !r.error) r.error = q.error;
        }
        if (r.error) {
            r.warnings.push_back("sample scored 0 after error: " + *r.error);
            r.score = 0.0;
            return;
        }
        try {
            score_sample(r);
        } catch (const Error& e) {
            r.error = e.what();
            r.score = 0.0;
        }
    }

    GenerationConfig gen(std::string_view name) const {
        auto g = preset(name);
        g.omit_image = spec_.omit_image;
        return g;
    }

    RenderedPrompt with_exemplars(RenderedPrompt prompt, const PromptContext& ctx) {
        if (!spec_.few_shot) return prompt;
        auto query = backends_.embedder->embed(ctx.question);
        auto chosen = select_exemplars(query, pool_, {spec_.few_shot->k, spec_.few_shot->cap});
        prompt.text = render_exemplar_block(chosen, few_shot_setting(spec_.setting), ctx, prompt.text);
        return prompt;
    }

    QuestionResult answer(PromptContext ctx, const std::string& image_ref, std::optional<bool> expected) {
        QuestionResult q;
        q.image_ref = image_ref;
        q.question = ctx.question;
        q.expected_yes = expected;
        try {
            infer(ctx, image_ref, q);
            parse_answer(q, spec_.use_llm_parse, backends_.model.get());
        } catch (const std::exception& e) {
            q.error = e.what();
        }
        return q;
    }

    void infer(PromptContext& ctx, const std::string& image_ref, QuestionResult& q) {
        auto& backend = *backends_.model;
        const std::optional<std::string> image = image_ref;
        switch (spec_.setting) {
            case Setting::Standard:
            case Setting::Caption: {
                RenderedPrompt prompt;
                if (spec_.setting == Setting::Caption) {
                    CaptionRequest creq{image_ref, spec_.caption->strategy, std::nullopt, spec_.caption->samples};
                    if (creq.strategy == CaptionStrategy::QuestionGuided) creq.question = ctx.question;
                    auto cap = captions_->caption(creq);
                    ctx = attach_caption(ctx, cap);
                    prompt = wrap_with_caption(render(template_, ctx), cap.text);
                } else {
                    prompt = render(template_, ctx);
                }
                prompt = with_exemplars(std::move(prompt), ctx);
                BackendRequest req{prompt.text, image, gen(spec_.answer_preset), Purpose::Answer};
                auto resp = backend.complete(req);
                q.prompts = {prompt.text};
                q.raw = resp.texts.empty() ? std::string() : text::trim(resp.texts.front());
                q.raws = {q.raw};
                q.candidate = q.raw;
                break;
            }
            case Setting::Cot: {
                auto prompt = with_exemplars(render(template_, ctx), ctx);
                take(cot_answer(prompt, image, backend, gen("rationale")), q);
                break;
            }
            case Setting::CotIterative:
            case Setting::CotContext: {
                auto prompt = with_exemplars(render(template_, ctx), ctx);
                TwoStageConfig cfg{&answer_template_, gen("rationale"), gen(spec_.answer_preset)};
                take(spec_.setting == Setting::CotIterative ? cot_iterative(ctx, prompt, image, backend, cfg)
                                                            : cot_context(ctx, prompt, image, backend, cfg),
                     q);
                break;
            }
            case Setting::CotConsistency: {
                auto prompt = with_exemplars(render(template_, ctx), ctx);
                auto cfg = *spec_.consistency;
                cfg.omit_image = spec_.omit_image;
                auto res = self_consistency(prompt, image, backend, cfg,
                                            [](std::string_view s) { return normalize(s); }, spec_.seed, 1);
                q.prompts = {res.prompt};
                for (const auto& p : res.paths) q.raws.push_back(p ? p->raw : std::string());
                q.candidate = res.answer;
                q.raw = res.answer;
                std::vector<TallyEntry> tally;
                for (const auto& g : res.vote.tally) tally.push_back({g.representative, g.key, g.count});
                q.tally = std::move(tally);
                q.warnings.insert(q.warnings.end(), res.warnings.begin(), res.warnings.end());
                break;
            }
        }
    }

    static void take(RationaleAnswer ra, QuestionResult& q) {
        q.prompts = std::move(ra.prompts);
        q.raws = std::move(ra.raws);
        q.raw = std::move(ra.raw);
        q.candidate = std::move(ra.answer);
        q.warnings.insert(q.warnings.end(), ra.warnings.begin(), ra.warnings.end());
    }

    const ExperimentSpec& spec_;
    RunBackends backends_;
    std::vector<Exemplar> pool_;
    const TemplateSpec& template_;
    const TemplateSpec& answer_template_;
    std::unique_ptr<CaptionPipeline> captions_;
};

// Appends results in work order no matter which worker finishes first, so
// the JSONL is identical across runs and always a contiguous prefix.
class OrderedWriter {
public:
    OrderedWriter(const fs::path& path, bool append) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        out_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!out_) throw Error(ErrorKind::LoadError, "cannot write " + path.string());
    }

    void submit(std::size_t index, SampleResult r) {
        std::lock_guard lock(mu_);
        pending_.emplace(index, std::move(r));
        while (!pending_.empty() && pending_.begin()->first == next_) {
            out_ << to_json(pending_.begin()->second).dump() << '\n';
            out_.flush();
            done_.push_back(std::move(pending_.begin()->second));
            pending_.erase(pending_.begin());
            ++next_;
        }
    }

    std::vector<SampleResult> take() { return std::move(done_); }

private:
    std::mutex mu_;
    std::ofstream out_;
    std::map<std::size_t, SampleResult> pending_;
    std::size_t next_ = 0;
    std::vector<SampleResult> done_;
};

}  // namespace

RunOutcome run(const ExperimentSpec& spec, RunBackends backends) {
    validate(spec);
    if (!backends.model) throw Error(ErrorKind::ConfigError, "no model backend");
    if (!backends.embedder) backends.embedder = std::make_shared<HashEmbedder>();

    auto dataset = load_dataset(spec.dataset_path, spec.dataset_format);
    std::vector<WorkItem> items;
    if (dataset.is_winoground())
        for (const auto& s : dataset.winoground) items.push_back({s.id, nullptr, &s});
    else
        for (const auto& r : dataset.records) items.push_back({r.id, &r, nullptr});
    if (spec.sample_limit && items.size() > *spec.sample_limit) items.resize(*spec.sample_limit);
    {
        std::set<std::string> ids;
        for (const auto& it : items)
            if (!ids.insert(it.id).second)
                throw Error(ErrorKind::ConfigError, "sample id " + it.id + " occurs twice; use one split per run");
    }

    std::vector<Exemplar> pool;
    if (spec.few_shot) {
        // Rewrites the pool file when embeddings were missing.
        pool = load_pool_embedded(spec.few_shot->pool, *backends.embedder);
    }
    const auto digest = run_digest(spec);

    std::vector<SampleResult> previous;
    if (spec.resume && fs::exists(spec.results_path)) {
        bool torn = false;
        previous = read_results(spec.results_path, true, torn);
        if (torn) save_results(spec.results_path, previous);
    }
    std::set<std::string> done_ids;
    for (const auto& r : previous) done_ids.insert(r.id);
    std::vector<WorkItem> todo;
    for (const auto& it : items)
        if (!done_ids.contains(it.id)) todo.push_back(it);
    if (!previous.empty()) spdlog::info("resuming: {} sample(s) already done, {} to go", previous.size(), todo.size());

    Engine engine(spec, backends, std::move(pool));
    OrderedWriter writer(spec.results_path, !previous.empty());
    {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i; (i = next.fetch_add(1)) < todo.size();) writer.submit(i, engine.process(todo[i]));
        };
        std::vector<std::jthread> threads;
        const auto n = std::min(spec.workers, std::max<std::size_t>(todo.size(), 1));
        for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
    }

    std::set<std::string> wanted;
    for (const auto& it : items) wanted.insert(it.id);
    std::vector<SampleResult> all;
    for (auto& r : previous)
        if (wanted.contains(r.id)) all.push_back(std::move(r));
    for (auto& r : writer.take()) all.push_back(std::move(r));

    RunOutcome out;
    out.resumed = done_ids.size();
    for (const auto& r : all)
        if (r.error) ++out.sample_errors;
    out.report = build_report(std::move(all), to_json(spec), digest, spec.name, std::string(to_string(spec.setting)));
    out.report.dataset = out.report.count ? out.report.dataset : std::string(to_string(spec.dataset_format));
    save_report(spec.report_path, out.report);
    spdlog::info("{}: {} sample(s), {} error(s)", spec.name, out.report.count, out.sample_errors);
    return out;
}

RunOutcome run(const ExperimentSpec& spec) {
    validate(spec);
    return run(spec, build_backends(spec));
}

}  // namespace vqa
