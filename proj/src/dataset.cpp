#include "vqa/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "vqa/text.hpp"

namespace vqa {

using nlohmann::json;

std::string_view to_string(DatasetFormat f) {
    switch (f) {
        case DatasetFormat::Canonical: return "canonical";
        case DatasetFormat::Vqav2: return "vqav2";
        case DatasetFormat::Okvqa: return "okvqa";
        case DatasetFormat::Aokvqa: return "aokvqa";
        case DatasetFormat::Gqa: return "gqa";
        case DatasetFormat::Visual7w: return "visual7w";
        case DatasetFormat::Winoground: return "winoground";
    }
    return "canonical";
}

DatasetFormat dataset_format_from_string(std::string_view name) {
    for (auto f : {DatasetFormat::Canonical, DatasetFormat::Vqav2, DatasetFormat::Okvqa, DatasetFormat::Aokvqa,
                   DatasetFormat::Gqa, DatasetFormat::Visual7w, DatasetFormat::Winoground})
        if (to_string(f) == name) return f;
    throw Error(ErrorKind::ConfigError, "unknown dataset format '" + std::string(name) + "'");
}

namespace {

[[noreturn]] void load_fail(const std::string& where, const std::string& what) {
    throw Error(ErrorKind::LoadError, where + ": " + what);
}

std::string id_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    return v.dump();
}

const json& field(const json& j, const char* name, const std::string& where) {
    if (!j.is_object() || !j.contains(name) || j[name].is_null()) load_fail(where, std::string("missing field '") + name + "'");
    return j[name];
}

std::string string_field(const json& j, const char* name, const std::string& where) {
    const auto& v = field(j, name, where);
    if (!v.is_string()) load_fail(where, std::string("field '") + name + "' must be a string");
    return v.get<std::string>();
}

std::vector<std::string> string_list(const json& v, const char* name, const std::string& where) {
    if (!v.is_array()) load_fail(where, std::string("field '") + name + "' must be an array");
    std::vector<std::string> out;
    for (const auto& x : v) {
        if (!x.is_string()) load_fail(where, std::string("field '") + name + "' must hold strings");
        out.push_back(x.get<std::string>());
    }
    return out;
}

std::string padded_image(long long image_id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%012lld", image_id);
    return buf;
}

void check_record(const QuestionRecord& r, const std::string& where) {
    if (r.id.empty()) load_fail(where, "empty id");
    if (text::trim(r.question).empty()) load_fail(where, "empty field 'question'");
    if (r.refs.empty()) load_fail(where, "no reference answers");
    if (r.options && r.options->size() < 2) load_fail(where, "field 'options' needs at least two entries");
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::LoadError, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text::trim(bytes).empty()) return json();
    try {
        return json::parse(bytes);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::LoadError, path.string() + ": " + e.what());
    }
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::LoadError, "cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        const auto where = path.filename().string() + " line " + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            load_fail(where, e.what());
        }
        fn(j, where);
    }
}

// VQAv2 and OK-VQA share the questions/annotations layout.
std::vector<QuestionRecord> load_vqa_style(const json& doc, DatasetFormat format, const std::string& file) {
    std::vector<QuestionRecord> out;
    if (doc.is_null()) return out;
    const auto split = doc.value("data_subtype", doc.value("split", std::string()));
    const auto& questions = field(doc, "questions", file);
    const auto& annotations = field(doc, "annotations", file);
    std::map<std::string, const json*> by_qid;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const auto& a = annotations[i];
        by_qid[id_string(field(a, "question_id", file + " annotation " + std::to_string(i)))] = &a;
    }
    for (std::size_t i = 0; i < questions.size(); ++i) {
        const auto& q = questions[i];
        const auto where = file + " question " + std::to_string(i);
        QuestionRecord r;
        r.id = id_string(field(q, "question_id", where));
        r.question = string_field(q, "question", where);
        if (q.contains("image")) {
            r.image_ref = string_field(q, "image", where);
        } else {
            const auto& img = field(q, "image_id", where);
            r.image_ref = img.is_number_integer() && !split.empty()
                              ? "COCO_" + split + "_" + padded_image(img.get<long long>()) + ".jpg"
                              : id_string(img);
        }
        auto it = by_qid.find(r.id);
        if (it == by_qid.end()) load_fail(where, "no annotation for question_id " + r.id);
        const auto& ann = *it->second;
        const auto& answers = field(ann, "answers", where + " annotation");
        if (!answers.is_array()) load_fail(where, "field 'answers' must be an array");
        for (const auto& a : answers) {
            if (a.is_string())
                r.refs.push_back(a.get<std::string>());
            else
                r.refs.push_back(string_field(a, "answer", where + " answers"));
        }
        r.dataset = std::string(to_string(format));
        r.split = split;
        if (format == DatasetFormat::Vqav2 && ann.contains("answer_type") && ann["answer_type"].is_string())
            r.question_type = ann["answer_type"].get<std::string>();
        else
            r.question_type = heuristic_question_type(r.question);
        check_record(r, where);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<QuestionRecord> load_aokvqa(const json& doc, const std::string& file) {
    std::vector<QuestionRecord> out;
    if (doc.is_null()) return out;
    if (!doc.is_array()) load_fail(file, "expected a JSON array of questions");
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& q = doc[i];
        const auto where = file + " record " + std::to_string(i);
        QuestionRecord r;
        r.id = id_string(field(q, "question_id", where));
        r.question = string_field(q, "question", where);
        r.image_ref = q.contains("image") ? string_field(q, "image", where)
                                         : padded_image(field(q, "image_id", where).get<long long>()) + ".jpg";
        r.split = q.value("split", std::string());
        r.dataset = "aokvqa";
        if (q.contains("choices")) {
            r.options = string_list(q["choices"], "choices", where);
            const auto& idx = field(q, "correct_choice_idx", where);
            if (!idx.is_number_integer() || idx.get<long long>() < 0 ||
                idx.get<std::size_t>() >= r.options->size())
                load_fail(where, "field 'correct_choice_idx' out of range");
            r.choice_answer = (*r.options)[idx.get<std::size_t>()];
        }
        if (q.contains("direct_answers"))
            r.refs = string_list(q["direct_answers"], "direct_answers", where);
        else if (r.choice_answer)
            r.refs = {*r.choice_answer};
        r.question_type = heuristic_question_type(r.question);
        check_record(r, where);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<QuestionRecord> load_gqa(const json& doc, const std::string& file) {
    std::vector<QuestionRecord> out;
    if (doc.is_null()) return out;
    if (!doc.is_object()) load_fail(file, "expected an object keyed by question id");
    for (const auto& [qid, q] : doc.items()) {
        const auto where = file + " question " + qid;
        QuestionRecord r;
        r.id = qid;
        r.question = string_field(q, "question", where);
        r.image_ref = q.contains("image") ? string_field(q, "image", where) : string_field(q, "imageId", where) + ".jpg";
        r.refs = {string_field(q, "answer", where)};
        r.dataset = "gqa";
        r.split = q.value("split", std::string());
        if (q.contains("types") && q["types"].is_object() && q["types"].contains("structural"))
            r.question_type = q["types"]["structural"].get<std::string>();
        else
            r.question_type = heuristic_question_type(r.question);
        check_record(r, where);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<QuestionRecord> load_visual7w(const json& doc, const std::string& file) {
    std::vector<QuestionRecord> out;
    if (doc.is_null()) return out;
    const auto split = doc.value("split", std::string());
    const auto& images = field(doc, "images", file);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& img = images[i];
        const auto img_where = file + " image " + std::to_string(i);
        const auto filename = img.contains("filename") ? string_field(img, "filename", img_where)
                                                       : id_string(field(img, "image_id", img_where));
        const auto& pairs = field(img, "qa_pairs", img_where);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const auto& qa = pairs[k];
            const auto where = img_where + " qa " + std::to_string(k);
            QuestionRecord r;
            r.id = id_string(field(qa, "qa_id", where));
            r.question = string_field(qa, "question", where);
            r.image_ref = filename;
            auto answer = string_field(qa, "answer", where);
            auto options = string_list(field(qa, "multiple_choices", where), "multiple_choices", where);
            options.push_back(answer);
            // Fixed order so the correct answer's position is not a giveaway.
            std::sort(options.begin(), options.end());
            r.options = std::move(options);
            r.refs = {answer};
            r.choice_answer = answer;
            r.dataset = "visual7w";
            r.split = qa.value("split", split);
            if (qa.contains("type") && qa["type"].is_string())
                r.question_type = qa["type"].get<std::string>();
            check_record(r, where);
            out.push_back(std::move(r));
        }
    }
    return out;
}

void check_unique_ids(const std::vector<QuestionRecord>& records, const std::string& file) {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& r : records)
        if (!seen.emplace(r.split, r.id).second) load_fail(file, "duplicate id " + r.id + " in split '" + r.split + "'");
}

}  // namespace

json to_json(const QuestionRecord& r) {
    json j = {{"id", r.id},           {"image_ref", r.image_ref}, {"question", r.question},
              {"refs", r.refs},       {"dataset", r.dataset},     {"split", r.split}};
    j["options"] = r.options ? json(*r.options) : json(nullptr);
    j["question_type"] = r.question_type ? json(*r.question_type) : json(nullptr);
    j["choice_answer"] = r.choice_answer ? json(*r.choice_answer) : json(nullptr);
    return j;
}

QuestionRecord question_record_from_json(const json& j) {
    const std::string where = "record";
    QuestionRecord r;
    r.id = id_string(field(j, "id", where));
    r.image_ref = string_field(j, "image_ref", where);
    r.question = string_field(j, "question", where);
    r.refs = string_list(field(j, "refs", where), "refs", where);
    r.dataset = j.value("dataset", std::string());
    r.split = j.value("split", std::string());
    if (j.contains("options") && !j["options"].is_null()) r.options = string_list(j["options"], "options", where);
    if (j.contains("question_type") && !j["question_type"].is_null())
        r.question_type = j["question_type"].get<std::string>();
    if (j.contains("choice_answer") && !j["choice_answer"].is_null())
        r.choice_answer = j["choice_answer"].get<std::string>();
    return r;
}

json to_json(const WinogroundSample& s) {
    json j = {{"id", s.id},
              {"image_0", s.image_refs[0]},
              {"image_1", s.image_refs[1]},
              {"caption_0", s.captions[0]},
              {"caption_1", s.captions[1]}};
    for (int i = 0; i < 2; ++i) {
        const auto key = "question_" + std::to_string(i);
        j[key] = s.questions[i] ? json(*s.questions[i]) : json(nullptr);
    }
    return j;
}

WinogroundSample winoground_sample_from_json(const json& j) {
    const std::string where = "winoground sample";
    WinogroundSample s;
    s.id = id_string(field(j, "id", where));
    for (int i = 0; i < 2; ++i) {
        const auto idx = std::to_string(i);
        s.image_refs[i] = string_field(j, ("image_" + idx).c_str(), where);
        s.captions[i] = string_field(j, ("caption_" + idx).c_str(), where);
        const auto qkey = "question_" + idx;
        if (j.contains(qkey) && !j[qkey].is_null()) s.questions[i] = j[qkey].get<std::string>();
        if (text::trim(s.captions[i]).empty()) load_fail(where + " " + s.id, "empty caption_" + idx);
    }
    return s;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
    Dataset ds;
    ds.format = format;
    const auto file = path.filename().string();
    switch (format) {
        case DatasetFormat::Canonical:
            for_each_jsonl(path, [&](const json& j, const std::string& where) {
                try {
                    auto r = question_record_from_json(j);
                    check_record(r, where);
                    ds.records.push_back(std::move(r));
                } catch (const Error& e) {
                    load_fail(where, e.what());
                }
            });
            break;
        case DatasetFormat::Vqav2:
        case DatasetFormat::Okvqa:
            ds.records = load_vqa_style(read_json_file(path), format, file);
            break;
        case DatasetFormat::Aokvqa:
            ds.records = load_aokvqa(read_json_file(path), file);
            break;
        case DatasetFormat::Gqa:
            ds.records = load_gqa(read_json_file(path), file);
            break;
        case DatasetFormat::Visual7w:
            ds.records = load_visual7w(read_json_file(path), file);
            break;
        case DatasetFormat::Winoground: {
            std::set<std::string> ids;
            for_each_jsonl(path, [&](const json& j, const std::string& where) {
                try {
                    ds.winoground.push_back(winoground_sample_from_json(j));
                } catch (const Error& e) {
                    load_fail(where, e.what());
                }
                if (!ids.insert(ds.winoground.back().id).second)
                    load_fail(where, "duplicate id " + ds.winoground.back().id);
            });
            break;
        }
    }
    check_unique_ids(ds.records, file);
    return ds;
}

void save_records(const std::filesystem::path& path, std::span<const QuestionRecord> records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::LoadError, "cannot write " + path.string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

void save_winoground(const std::filesystem::path& path, std::span<const WinogroundSample> samples) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::LoadError, "cannot write " + path.string());
    for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

std::string heuristic_question_type(std::string_view question) {
    auto q = text::to_lower(text::trim(question));
    if (q.find("how many") != std::string::npos) return "number";
    if (q.find("what color") != std::string::npos || q.find("what colour") != std::string::npos) return "color";
    auto words = text::split_whitespace(q);
    static const std::set<std::string> aux = {"is",  "are", "does", "do",    "did",  "was",    "were",
                                              "can", "could", "has", "have", "will", "would", "should"};
    if (!words.empty() && aux.contains(words.front())) return "yes/no";
    return "other";
}

std::string conversion_prompt(std::string_view statement) {
    return "Convert this text into a yes/no question for the Visual Question Answering task: " +
           text::single_line(statement);
}

std::string convert_statement(std::string_view statement, Backend& backend, std::optional<std::int64_t> seed) {
    if (text::trim(statement).empty()) throw Error(ErrorKind::Precondition, "statement is empty");
    BackendRequest req;
    req.prompt = conversion_prompt(statement);
    req.gen = preset("convert");
    req.gen.seed = seed;
    req.purpose = Purpose::Convert;
    auto resp = backend.complete(req);
    auto line = resp.texts.empty() ? std::string() : text::first_line(resp.texts.front());
    if (line.empty() || line.back() != '?')
        throw Error(ErrorKind::ConversionInvalid, "conversion of '" + std::string(statement) +
                                                      "' did not produce a question: '" + line + "'");
    return line;
}

std::string statement_form(std::string_view t) {
    auto s = text::trim(t);
    if (s.empty()) throw Error(ErrorKind::Precondition, "statement is empty");
    return "Does this describe the image? " + s;
}

std::string converted_form(std::string_view question) {
    auto q = text::trim(question);
    if (q.empty()) throw Error(ErrorKind::Precondition, "question is empty");
    return "Answer the following yes/no question. " + q;
}

std::string_view to_string(WinogroundFraming f) {
    return f == WinogroundFraming::Statement ? "statement" : "converted";
}

WinogroundFraming winoground_framing_from_string(std::string_view name) {
    if (name == "statement") return WinogroundFraming::Statement;
    if (name == "converted") return WinogroundFraming::Converted;
    throw Error(ErrorKind::ConfigError, "unknown winoground framing '" + std::string(name) + "'");
}

WinogroundQuad build_quad(const WinogroundSample& sample, WinogroundFraming framing) {
    std::array<std::string, 2> q;
    for (int i = 0; i < 2; ++i) {
        if (framing == WinogroundFraming::Statement) {
            q[i] = statement_form(sample.captions[i]);
        } else {
            if (!sample.questions[i] || text::trim(*sample.questions[i]).empty())
                throw Error(ErrorKind::QuadIncomplete,
                            "sample " + sample.id + " lacks converted question " + std::to_string(i));
            q[i] = converted_form(*sample.questions[i]);
        }
    }
    WinogroundQuad quad;
    quad.sample_id = sample.id;
    quad.items = {WinogroundItem{sample.image_refs[0], q[0], true}, WinogroundItem{sample.image_refs[0], q[1], false},
                  WinogroundItem{sample.image_refs[1], q[0], false}, WinogroundItem{sample.image_refs[1], q[1], true}};
    return quad;
}

void write_review_tsv(const std::filesystem::path& path, std::span<const ConversionReview> rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::LoadError, "cannot write " + path.string());
    auto cell = [](std::string s) {
        std::replace(s.begin(), s.end(), '\t', ' ');
        return text::single_line(s);
    };
    out << "statement\tconverted\tvalid\n";
    for (const auto& r : rows) out << cell(r.statement) << '\t' << cell(r.converted) << '\t' << (r.valid ? "1" : "0") << '\n';
}

}  // namespace vqa
