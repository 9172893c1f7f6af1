#include <doctest.h>

#include "fixture_data.hpp"
#include "test_support.hpp"
#include "vqa/dataset.hpp"
#include "vqa/replay.hpp"

using namespace vqa;

namespace {

Dataset load(const std::string& name, DatasetFormat f) {
    return load_dataset(testing::fixture("datasets/" + name), f);
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Precondition;
}

}  // namespace

TEST_CASE("canonical records") {
    auto ds = load("canonical.jsonl", DatasetFormat::Canonical);
    REQUIRE(ds.size() == 3);
    CHECK(ds.records[0].refs == std::vector<std::string>{"kitchen", "kitchen", "dining room"});
    CHECK(ds.records[1].options == std::vector<std::string>{"yes", "no"});
    CHECK(ds.records[1].choice_answer == "yes");
    CHECK_FALSE(ds.records[2].question_type.has_value());
}

TEST_CASE("VQAv2 merged questions and annotations") {
    auto ds = load("vqav2.json", DatasetFormat::Vqav2);
    REQUIRE(ds.size() == 3);
    const auto& net = ds.records[0];
    CHECK(net.id == "458752000");
    CHECK(net.image_ref == "COCO_val2014_000000458752.jpg");
    CHECK(net.refs == std::vector<std::string>{"net", "netting", "net", "mesh"});
    CHECK(net.question_type == "other");
    CHECK(net.split == "val2014");
    CHECK(net.dataset == "vqav2");
    CHECK(ds.records[1].refs == std::vector<std::string>{"yes", "yes"});
    CHECK(ds.records[1].question_type == "yes/no");
    CHECK(ds.records[2].image_ref == "local/custom.jpg");
    CHECK(ds.records[2].refs == std::vector<std::string>{"Red"});
    CHECK(ds.records[2].question_type == "color");
}

TEST_CASE("OK-VQA uses the question-type heuristic") {
    auto ds = load("okvqa.json", DatasetFormat::Okvqa);
    REQUIRE(ds.size() == 2);
    CHECK(ds.records[0].image_ref == "COCO_val2014_000000297147.jpg");
    CHECK(ds.records[0].question_type == "other");
    CHECK(ds.records[1].question_type == "number");
    CHECK(ds.records[0].dataset == "okvqa");
}

TEST_CASE("A-OKVQA choices and direct answers") {
    auto ds = load("aokvqa.json", DatasetFormat::Aokvqa);
    REQUIRE(ds.size() == 2);
    CHECK(ds.records[0].choice_answer == "cab");
    CHECK(ds.records[0].options->size() == 4);
    CHECK(ds.records[0].refs.size() == 10);
    CHECK(ds.records[0].image_ref == "000000299207.jpg");
    CHECK(ds.records[1].refs == std::vector<std::string>{"beach"});
    CHECK(ds.records[1].image_ref == "imgs/two.jpg");
}

TEST_CASE("GQA and Visual7w") {
    auto gqa = load("gqa.json", DatasetFormat::Gqa);
    REQUIRE(gqa.size() == 2);
    CHECK(gqa.records[0].id == "201307251");
    CHECK(gqa.records[0].image_ref == "n161313.jpg");
    CHECK(gqa.records[0].question_type == "verify");
    CHECK(gqa.records[0].refs == std::vector<std::string>{"no"});
    CHECK(gqa.records[1].question_type == "other");

    auto v7w = load("visual7w.json", DatasetFormat::Visual7w);
    REQUIRE(v7w.size() == 2);
    const auto& truck = v7w.records[0];
    CHECK(truck.options == std::vector<std::string>{"Blue.", "Green.", "Red.", "White."});
    CHECK(truck.choice_answer == "Red.");
    CHECK(truck.image_ref == "v7w_2384.jpg");
    CHECK(truck.question_type == "what");
    CHECK(truck.split == "test");
}

TEST_CASE("Winoground samples") {
    auto ds = load("winoground.jsonl", DatasetFormat::Winoground);
    CHECK(ds.is_winoground());
    REQUIRE(ds.size() == 2);
    CHECK(ds.winoground[0].captions[1] == "a young person kisses an old person");
    CHECK_FALSE(ds.winoground[0].questions[0].has_value());
    CHECK(ds.winoground[1].questions[1] == "Does the shorter person hug the taller person?");
}

TEST_CASE("records survive a canonical round trip") {
    testing::TempDir dir;
    for (auto [name, fmt] : std::vector<std::pair<std::string, DatasetFormat>>{
             {"vqav2.json", DatasetFormat::Vqav2},
             {"aokvqa.json", DatasetFormat::Aokvqa},
             {"gqa.json", DatasetFormat::Gqa},
             {"visual7w.json", DatasetFormat::Visual7w}}) {
        auto ds = load(name, fmt);
        save_records(dir / "out.jsonl", ds.records);
        CHECK(load_dataset(dir / "out.jsonl", DatasetFormat::Canonical).records == ds.records);
    }
    auto wg = load("winoground.jsonl", DatasetFormat::Winoground);
    save_winoground(dir / "wg.jsonl", wg.winoground);
    CHECK(load_dataset(dir / "wg.jsonl", DatasetFormat::Winoground).winoground == wg.winoground);
}

TEST_CASE("load errors name the offending record") {
    testing::TempDir dir;
    auto expect_error = [&](const std::string& body, DatasetFormat f, const std::string& needle) {
        testing::write_file(dir / "bad.json", body);
        try {
            load_dataset(dir / "bad.json", f);
            FAIL("expected LoadError for " << body);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::LoadError);
            CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
        }
    };
    expect_error("{\"id\":\"a\",\"image_ref\":\"x\",\"question\":\"q\",\"refs\":[\"r\"]}\n{\"id\":\"b\"}\n",
                 DatasetFormat::Canonical, "line 2");
    expect_error("{\"id\":\"a\",\"image_ref\":\"x\",\"question\":\"q\",\"refs\":[]}\n", DatasetFormat::Canonical,
                 "reference");
    expect_error("{\"id\":\"a\",\"image_ref\":\"x\",\"question\":\"q\",\"refs\":[\"r\"],\"options\":[\"one\"]}\n",
                 DatasetFormat::Canonical, "options");
    expect_error("{\"id\":\"a\",\"image_ref\":\"x\",\"question\":\"q\",\"refs\":[\"r\"]}\n"
                 "{\"id\":\"a\",\"image_ref\":\"y\",\"question\":\"q\",\"refs\":[\"r\"]}\n",
                 DatasetFormat::Canonical, "duplicate id a");
    expect_error("{\"questions\":[{\"question_id\":1,\"image_id\":2,\"question\":\"q\"}],\"annotations\":[]}",
                 DatasetFormat::Vqav2, "no annotation");
    expect_error("[{\"question_id\":\"x\",\"question\":\"q\",\"image_id\":1,\"choices\":[\"a\",\"b\"],"
                 "\"correct_choice_idx\":5}]",
                 DatasetFormat::Aokvqa, "correct_choice_idx");
    expect_error("{\"1\":{\"imageId\":\"n1\",\"answer\":\"no\"}}", DatasetFormat::Gqa, "question");
    expect_error("{\"id\":\"w\",\"image_0\":\"a\",\"image_1\":\"b\",\"caption_0\":\"x\",\"caption_1\":\"y\"}\n"
                 "{\"id\":\"w\",\"image_0\":\"a\",\"image_1\":\"b\",\"caption_0\":\"x\",\"caption_1\":\"y\"}\n",
                 DatasetFormat::Winoground, "duplicate id w");
    expect_error("{not json", DatasetFormat::Gqa, "bad.json");
    CHECK(kind_of([] { load_dataset("/nonexistent/file.jsonl", DatasetFormat::Canonical); }) ==
          ErrorKind::LoadError);

    testing::write_file(dir / "empty.json", "  \n");
    CHECK(load_dataset(dir / "empty.json", DatasetFormat::Vqav2).size() == 0);
    CHECK(load_dataset(dir / "empty.json", DatasetFormat::Canonical).size() == 0);
}

TEST_CASE("format names and heuristics") {
    for (auto f : {DatasetFormat::Canonical, DatasetFormat::Vqav2, DatasetFormat::Okvqa, DatasetFormat::Aokvqa,
                   DatasetFormat::Gqa, DatasetFormat::Visual7w, DatasetFormat::Winoground})
        CHECK(dataset_format_from_string(to_string(f)) == f);
    CHECK(kind_of([] { dataset_format_from_string("coco"); }) == ErrorKind::ConfigError);
    CHECK(heuristic_question_type("How many dogs?") == "number");
    CHECK(heuristic_question_type("What colour is it?") == "color");
    CHECK(heuristic_question_type("Are these apples?") == "yes/no");
    CHECK(heuristic_question_type("Where is it?") == "other");
}

TEST_CASE("statement conversion against the recorded fixture") {
    ReplayBackend backend(testing::fixture("replay/winoground_conversions.jsonl"));
    for (const auto& c : fixtures::kConversions) {
        CAPTURE(c.statement);
        if (c.expected.empty()) {
            CHECK(kind_of([&] { convert_statement(c.statement, backend); }) == ErrorKind::ConversionInvalid);
        } else {
            CHECK(convert_statement(c.statement, backend) == c.expected);
        }
    }
}

TEST_CASE("conversion requests are text-only and greedy") {
    CallbackBackend spy("spy", [](const BackendRequest& r) {
        CHECK(r.purpose == Purpose::Convert);
        CHECK_FALSE(r.image_ref.has_value());
        CHECK(r.gen.mode == DecodeMode::Greedy);
        CHECK(r.gen.seed == 2);
        return testing::texts({"Is it?"});
    });
    CHECK(convert_statement("It is", spy, 2) == "Is it?");
    CHECK(conversion_prompt("A tree\nsmashed into a car") ==
          "Convert this text into a yes/no question for the Visual Question Answering task: A tree smashed into a "
          "car");
    CHECK(kind_of([&] { convert_statement("  ", spy); }) == ErrorKind::Precondition);
}

TEST_CASE("statement form and quads") {
    CHECK(statement_form("an old person kisses a young person") ==
          "Does this describe the image? an old person kisses a young person");
    CHECK(statement_form("  padded \n") == "Does this describe the image? padded");
    CHECK(kind_of([] { statement_form(" "); }) == ErrorKind::Precondition);

    auto ds = load("winoground.jsonl", DatasetFormat::Winoground);
    auto quad = build_quad(ds.winoground[0], WinogroundFraming::Statement);
    CHECK(quad.sample_id == "wg0");
    CHECK(quad.items[0] == WinogroundItem{"ex_0_img_0.png", statement_form(ds.winoground[0].captions[0]), true});
    CHECK(quad.items[1] == WinogroundItem{"ex_0_img_0.png", statement_form(ds.winoground[0].captions[1]), false});
    CHECK(quad.items[2] == WinogroundItem{"ex_0_img_1.png", statement_form(ds.winoground[0].captions[0]), false});
    CHECK(quad.items[3] == WinogroundItem{"ex_0_img_1.png", statement_form(ds.winoground[0].captions[1]), true});
    CHECK_NOTHROW(validate(quad));

    CHECK(kind_of([&] { build_quad(ds.winoground[0], WinogroundFraming::Converted); }) == ErrorKind::QuadIncomplete);
    auto converted = build_quad(ds.winoground[1], WinogroundFraming::Converted);
    CHECK(converted.items[0].question ==
          "Answer the following yes/no question. Does the taller person hug the shorter person?");
    CHECK(converted.items[3].question ==
          "Answer the following yes/no question. Does the shorter person hug the taller person?");
    CHECK(kind_of([] { converted_form(""); }) == ErrorKind::Precondition);
    CHECK(winoground_framing_from_string("converted") == WinogroundFraming::Converted);
}

TEST_CASE("review TSV") {
    testing::TempDir dir;
    std::vector<ConversionReview> rows = {{"a\tb", "Is a b?", true}, {"two dogs", "", false}};
    write_review_tsv(dir / "r.tsv", rows);
    CHECK(testing::read_file(dir / "r.tsv") == "statement\tconverted\tvalid\na b\tIs a b?\t1\ntwo dogs\t\t0\n");
}
