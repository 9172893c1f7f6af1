#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqa/backend.hpp"
#include "vqa/metrics.hpp"

namespace vqa {

enum class DatasetFormat { Canonical, Vqav2, Okvqa, Aokvqa, Gqa, Visual7w, Winoground };

std::string_view to_string(DatasetFormat f);
DatasetFormat dataset_format_from_string(std::string_view name);

struct QuestionRecord {
    std::string id;
    std::string image_ref;
    std::string question;
    std::optional<std::vector<std::string>> options;
    /// Verbatim reference answers; normalization happens at scoring time.
    std::vector<std::string> refs;
    std::string dataset;
    std::optional<std::string> question_type;
    std::string split;
    /// Text of the correct option for multiple-choice records.
    std::optional<std::string> choice_answer;

    bool operator==(const QuestionRecord&) const = default;
};

struct WinogroundSample {
    std::string id;
    std::array<std::string, 2> image_refs;
    std::array<std::string, 2> captions;
    std::array<std::optional<std::string>, 2> questions;

    bool operator==(const WinogroundSample&) const = default;
};

struct Dataset {
    DatasetFormat format = DatasetFormat::Canonical;
    std::vector<QuestionRecord> records;
    std::vector<WinogroundSample> winoground;

    bool is_winoground() const { return format == DatasetFormat::Winoground; }
    std::size_t size() const { return is_winoground() ? winoground.size() : records.size(); }
};

/// Reads a dataset file in its native shape (see docs/datasets.md). Throws
/// LoadError naming the record and field at fault.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);

nlohmann::json to_json(const QuestionRecord& r);
QuestionRecord question_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const WinogroundSample& s);
WinogroundSample winoground_sample_from_json(const nlohmann::json& j);

/// Canonical JSONL writers; read back with DatasetFormat::Canonical or
/// DatasetFormat::Winoground respectively.
void save_records(const std::filesystem::path& path, std::span<const QuestionRecord> records);
void save_winoground(const std::filesystem::path& path, std::span<const WinogroundSample> samples);

/// "how many" -> number, "what color" -> color, leading auxiliary -> yes/no,
/// otherwise other.
std::string heuristic_question_type(std::string_view question);

/// One call with the yes/no conversion instruction followed by the
/// statement; the first line of the output must end with '?'.
std::string convert_statement(std::string_view statement, Backend& backend,
                              std::optional<std::int64_t> seed = std::nullopt);

std::string conversion_prompt(std::string_view statement);

/// "Does this describe the image? <text>"
std::string statement_form(std::string_view text);

/// "Answer the following yes/no question. <question>"
std::string converted_form(std::string_view question);

enum class WinogroundFraming { Statement, Converted };

std::string_view to_string(WinogroundFraming f);
WinogroundFraming winoground_framing_from_string(std::string_view name);

WinogroundQuad build_quad(const WinogroundSample& sample, WinogroundFraming framing);

struct ConversionReview {
    std::string statement;
    std::string converted;
    bool valid = false;
};

/// TSV with header statement, converted, valid for human review.
void write_review_tsv(const std::filesystem::path& path, std::span<const ConversionReview> rows);

}  // namespace vqa
