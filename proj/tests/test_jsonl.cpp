#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "stepwise/jsonl.hpp"

using namespace stepwise;

namespace {

/// Unique scratch file removed on scope exit.
struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& stem) {
        path = std::filesystem::temp_directory_path() /
               (stem + "-" + std::to_string(::getpid()) + ".jsonl");
    }
    ~TempFile() {
        std::error_code ec;
        std::filesystem::remove(path, ec);
    }
};

Rollout sample_rollout() {
    Problem p;
    p.id = "p7";
    p.question = "Compute 3*4.";
    p.caption = "a chalkboard";
    p.gold_answer = "12";
    p.source_tag = "unit";
    ReasoningState s(p);
    AtomicStep a{1, "Multiply the factors.", ActionKind::Continue, 0.9};
    AtomicStep b{2, "Answer: 12", ActionKind::Conclude, 0.8};
    s = s.extended(a).extended(b);
    return make_rollout(s, Termination::Concluded, "12", 0.85);
}

}  // namespace

TEST_CASE("problem json round-trip preserves every field") {
    Problem p;
    p.id = "q1";
    p.question = "How many?";
    p.image_ref = "img/0001.png";
    p.caption = "three apples";
    p.gold_answer = "3";
    p.source_tag = "demo";
    Problem back = problem_from_json(problem_to_json(p));
    CHECK(back.id == p.id);
    CHECK(back.question == p.question);
    CHECK(back.image_ref == p.image_ref);
    CHECK(back.caption == p.caption);
    CHECK(back.gold_answer == p.gold_answer);
    CHECK(back.source_tag == p.source_tag);

    Problem bare;
    bare.id = "q2";
    bare.question = "Why?";
    bare.source_tag = "demo";
    Problem bare_back = problem_from_json(problem_to_json(bare));
    CHECK_FALSE(bare_back.image_ref);
    CHECK_FALSE(bare_back.caption);
    CHECK_FALSE(bare_back.gold_answer);
}

TEST_CASE("problem json rejects malformed records") {
    CHECK_THROWS_AS(problem_from_json(parse_json("{}", "t")), DataError);
    CHECK_THROWS_AS(
        problem_from_json(parse_json(
            R"({"id":"a","question":"q","source_tag":"s","bogus":1})", "t")),
        DataError);
    CHECK_THROWS_AS(
        problem_from_json(parse_json(
            R"({"id":"a","question":"q"})", "t")),  // source_tag required
        DataError);
    CHECK_THROWS_AS(
        problem_from_json(parse_json(
            R"({"id":"","question":"q","source_tag":"s"})", "t")),
        DataError);
    CHECK_THROWS_AS(problem_from_json(parse_json("[1,2]", "t")), DataError);
}

TEST_CASE("rollout json round-trip") {
    Rollout r = sample_rollout();
    Json j = rollout_to_json(r);
    Rollout back = rollout_from_json(j);
    CHECK(back.state.problem().id == "p7");
    REQUIRE(back.state.depth() == 2);
    CHECK(back.state.steps()[1].action == ActionKind::Conclude);
    REQUIRE(back.state.steps()[0].score);
    CHECK(*back.state.steps()[0].score == 0.9);
    CHECK(back.final_answer == "12");
    REQUIRE(back.aggregate_score);
    CHECK(*back.aggregate_score == 0.85);
    CHECK(back.terminated == Termination::Concluded);
    // Serialization is stable: dumping the round-tripped value is identical.
    CHECK(rollout_to_json(back).dump() == j.dump());
}

TEST_CASE("rollout json enforces domain invariants on load") {
    Json j = rollout_to_json(sample_rollout());
    Json broken = j;
    broken.erase("final_answer");  // concluded without an answer
    CHECK_THROWS_AS(rollout_from_json(broken), DataError);
    broken = j;
    broken["steps"][1]["index"] = 5;  // index gap
    CHECK_THROWS_AS(rollout_from_json(broken), DataError);
    broken = j;
    broken["steps"][0]["score"] = 1.5;
    CHECK_THROWS_AS(rollout_from_json(broken), DataError);
    broken = j;
    broken["unknown"] = true;
    CHECK_THROWS_AS(rollout_from_json(broken), DataError);
}

TEST_CASE("jsonl files round-trip with LF endings") {
    TempFile tf("stepwise-jsonl");
    std::vector<Json> records = {parse_json(R"({"a":1})", "t"),
                                 parse_json(R"({"b":[1,2]})", "t")};
    write_jsonl(tf.path, records);
    const std::string raw = read_file(tf.path);
    CHECK(raw == "{\"a\":1}\n{\"b\":[1,2]}\n");
    auto back = read_jsonl(tf.path);
    REQUIRE(back.size() == 2);
    CHECK(back[0]["a"] == 1);
    CHECK(back[1]["b"][1] == 2);
}

TEST_CASE("jsonl reader skips blanks and reports bad lines by number") {
    TempFile tf("stepwise-badline");
    write_file(tf.path, "{\"ok\":true}\n\n{oops\n");
    try {
        read_jsonl(tf.path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
}

TEST_CASE("load_problems enforces unique ids") {
    TempFile tf("stepwise-problems");
    write_file(
        tf.path,
        R"({"id":"a","question":"one?","source_tag":"t"})" "\n"
        R"({"id":"b","question":"two?","gold_answer":"2","source_tag":"t"})"
        "\n");
    auto problems = load_problems(tf.path);
    REQUIRE(problems.size() == 2);
    CHECK(problems[1].gold_answer == "2");

    write_file(tf.path,
               R"({"id":"a","question":"one?","source_tag":"t"})" "\n"
               R"({"id":"a","question":"dup?","source_tag":"t"})" "\n");
    CHECK_THROWS_AS(load_problems(tf.path), DataError);
    CHECK_THROWS_AS(load_problems("/nonexistent/path.jsonl"), DataError);
}

TEST_CASE("ordered json keeps insertion order when dumped") {
    Json j;
    j["zeta"] = 1;
    j["alpha"] = 2;
    CHECK(j.dump() == R"({"zeta":1,"alpha":2})");
}
