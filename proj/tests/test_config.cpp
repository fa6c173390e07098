#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stepwise/config.hpp"
#include "stepwise/data_engine.hpp"
#include "stepwise/thread_pool.hpp"

using namespace stepwise;

namespace {

RunConfig parse(const std::string& text,
                std::map<std::string, std::string> env = {}) {
    return load_config_json(Json::parse(text), env);
}

void check_params(const SamplingParams& p, double temperature, double top_p,
                  int top_k, int max_tokens = 4096) {
    CHECK(p.temperature == temperature);
    CHECK(p.top_p == top_p);
    CHECK(p.top_k == top_k);
    CHECK(p.max_output_tokens == max_tokens);
}

Problem gold_problem(const std::string& id = "p1") {
    Problem p;
    p.id = id;
    p.question = "What is 3*4?";
    p.gold_answer = "12";
    p.source_tag = "unit";
    return p;
}

}  // namespace

TEST_CASE("minimal config applies the documented defaults") {
    const RunConfig cfg = parse("{}");

    CHECK(cfg.seed == 0);
    CHECK(cfg.workers == 2);
    CHECK(cfg.template_dir == "templates");
    CHECK(cfg.output_dir == "runs");
    CHECK(cfg.search.strategy == "beam");
    CHECK(cfg.search.budget.beam_width == 2);
    CHECK(cfg.search.budget.candidates_per_expansion == 3);
    CHECK(cfg.search.budget.max_steps == 20);
    CHECK(cfg.search.aggregation == AggregationMode::WorstAction);
    CHECK(cfg.search.preset == "slow");
    CHECK(cfg.policy.kind == PolicyKind::Synthetic);
    CHECK(cfg.prm.kind == PrmKind::Oracle);
    CHECK(cfg.sweep_counts == std::vector<int>{1, 2, 4, 8});
    CHECK(cfg.soft_rounds == kDefaultSoftRounds);
    CHECK(!cfg.filter_judge);
    CHECK(cfg.data.problems == "data/sample_problems.jsonl");
}

TEST_CASE("default presets carry the four inference settings") {
    const RunConfig cfg = parse("{}");
    check_params(cfg.presets.direct, 0.0, 1.0, 0);
    check_params(cfg.presets.cot, 0.0, 1.0, 0);
    check_params(cfg.presets.quick, 0.5, 0.9, 10);
    check_params(cfg.presets.slow, 1.0, 0.9, 10);

    CHECK(&preset_params(cfg, "slow") == &cfg.presets.slow);
    CHECK(&preset_params(cfg, "direct") == &cfg.presets.direct);
    CHECK_THROWS_AS(preset_params(cfg, "slowest"), ConfigParseError);
}

TEST_CASE("preset overrides merge field by field") {
    const RunConfig cfg = parse(
        R"({"presets": {"slow": {"temperature": 0.7}}})");
    check_params(cfg.presets.slow, 0.7, 0.9, 10);
    check_params(cfg.presets.quick, 0.5, 0.9, 10);  // untouched

    CHECK_THROWS_AS(
        parse(R"({"presets": {"slow": {"temperature": -1.0}}})"),
        ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"presets": {"slow": {"temp": 1.0}}})"),
                    UnknownKeyError);
    CHECK_THROWS_AS(parse(R"({"presets": {"slowest": {}}})"),
                    UnknownKeyError);
}

TEST_CASE("beam strategy enforces beam width within candidates") {
    CHECK_THROWS_AS(
        parse(R"({"search": {"strategy": "beam",
                             "beam_width": 5, "candidates": 3}})"),
        ConfigParseError);
    // Width beyond C is only fatal for beam search itself.
    const RunConfig cfg = parse(
        R"({"search": {"strategy": "best_of_n",
                       "beam_width": 5, "candidates": 3}})");
    CHECK(cfg.search.budget.beam_width == 5);
}

TEST_CASE("unknown keys are rejected at every level") {
    CHECK_THROWS_AS(parse(R"({"sede": 1})"), UnknownKeyError);
    CHECK_THROWS_AS(parse(R"({"policy": {"knd": "synthetic"}})"),
                    UnknownKeyError);
    CHECK_THROWS_AS(parse(R"({"search": {"beamwidth": 2}})"),
                    UnknownKeyError);
    CHECK_THROWS_AS(parse(R"({"data": {"problem": "x"}})"), UnknownKeyError);
    CHECK_THROWS_WITH(parse(R"({"policy": {"knd": "synthetic"}})"),
                      Catch::Matchers::ContainsSubstring("config.policy.knd"));
}

TEST_CASE("malformed values are configuration faults") {
    CHECK_THROWS_AS(parse(R"({"workers": "two"})"), ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"workers": 0})"), ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"seed": -1})"), ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"soft_rounds": 0})"), ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"search": {"strategy": "mcts"}})"),
                    ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"search": {"aggregation": "median"}})"),
                    ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"search": {"preset": "fast"}})"),
                    ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"search": {"max_steps": 0}})"),
                    ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"policy": {"kind": "gpt"}})"),
                    ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"prm": {"kind": "perfect"}})"),
                    ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"policy": {"success_rate": 1.5}})"),
                    ConfigParseError);
    CHECK_THROWS_AS(parse(R"([1,2,3])"), ConfigParseError);
}

TEST_CASE("sweep counts must be strictly increasing positives") {
    CHECK(parse(R"({"sweep_counts": [2, 3, 9]})").sweep_counts ==
          std::vector<int>{2, 3, 9});
    CHECK_THROWS_AS(parse(R"({"sweep_counts": []})"), ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"sweep_counts": [2, 2]})"), ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"sweep_counts": [3, 1]})"), ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"sweep_counts": [0, 1]})"), ConfigParseError);
    CHECK_THROWS_AS(parse(R"({"sweep_counts": "all"})"), ConfigParseError);
}

TEST_CASE("aggregation names map onto the three modes") {
    CHECK(parse(R"({"search": {"aggregation": "min"}})").search.aggregation ==
          AggregationMode::WorstAction);
    CHECK(parse(R"({"search": {"aggregation": "avg"}})").search.aggregation ==
          AggregationMode::AverageScore);
    CHECK(parse(R"({"search": {"aggregation": "last"}})").search.aggregation ==
          AggregationMode::LastAction);
}

TEST_CASE("remote backends demand endpoint and auth variable") {
    // Endpoint missing entirely.
    CHECK_THROWS_AS(parse(R"({"policy": {"kind": "remote_chat"}})"),
                    MissingEndpointError);
    // Endpoint present but the auth env var is not set.
    CHECK_THROWS_AS(
        parse(R"({"policy": {"kind": "remote_chat",
                             "endpoint": "http://127.0.0.1:1"}})"),
        MissingEndpointError);
    // Auth var set (empty means "no auth header") resolves the token.
    const RunConfig ok = parse(
        R"({"policy": {"kind": "remote_chat",
                       "endpoint": "http://127.0.0.1:1"}})",
        {{"STEPWISE_API_TOKEN", "tok-123"}});
    CHECK(ok.policy.api_token == "tok-123");

    // A custom variable name is honored.
    const RunConfig named = parse(
        R"({"prm": {"kind": "remote", "endpoint": "http://127.0.0.1:1",
                    "auth_env": "MY_PRM_KEY"}})",
        {{"MY_PRM_KEY", ""}});
    CHECK(named.prm.api_token.empty());
    CHECK_THROWS_AS(
        parse(R"({"prm": {"kind": "remote",
                          "endpoint": "http://127.0.0.1:1"}})",
              {{"MY_PRM_KEY", "x"}}),
        MissingEndpointError);

    // MissingEndpointError belongs to the config branch (exit code 2).
    CHECK_THROWS_AS(parse(R"({"policy": {"kind": "remote_chat"}})"),
                    ConfigError);
}

TEST_CASE("config files load from disk") {
    const auto dir = std::filesystem::temp_directory_path() / "stepwise_cfg";
    std::filesystem::create_directories(dir);
    const auto path = dir / "run.json";

    write_file(path, R"({"seed": 7, "search": {"candidates": 4}})");
    std::map<std::string, std::string> env;
    const RunConfig cfg = load_config(path, env);
    CHECK(cfg.seed == 7);
    CHECK(cfg.search.budget.candidates_per_expansion == 4);

    write_file(path, "{nope");
    CHECK_THROWS_AS(load_config(path, env), ConfigParseError);
    CHECK_THROWS_AS(load_config(dir / "absent.json", env), ConfigParseError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("environment snapshots split NAME=VALUE pairs") {
    char e1[] = "STEPWISE_API_TOKEN=abc";
    char e2[] = "EMPTY=";
    char e3[] = "garbage-without-equals";
    char* envp[] = {e1, e2, e3, nullptr};
    const auto env = environment_snapshot(envp);
    CHECK(env.at("STEPWISE_API_TOKEN") == "abc");
    CHECK(env.at("EMPTY").empty());
    CHECK(env.size() == 2);
}

TEST_CASE("backend factories build what the config names") {
    const auto templates = TemplateStore::load_dir(
        std::string(STEPWISE_REPO_DIR) + "/templates");
    const std::vector<Problem> problems = {gold_problem()};

    SECTION("synthetic policy") {
        const RunConfig cfg =
            parse(R"({"policy": {"kind": "synthetic", "success_rate": 1.0,
                                 "conclude_rate": 1.0}})");
        auto policy = make_policy(cfg, templates);
        const ReasoningState state{gold_problem()};
        CHECK(policy->sample_slot(state, 0, cfg.presets.slow, "slow_think",
                                  1) == "Answer: 12");
    }
    SECTION("annotator mock") {
        const RunConfig cfg = parse(R"({"policy": {"kind": "annotator"}})");
        auto policy = make_policy(cfg, templates);
        CHECK(policy->complete(gold_problem(), "dynamic_annotate",
                               kCaptionRequestPayload, cfg.presets.slow,
                               1) == "Caption: none");
    }
    SECTION("oracle scorer grades against gold") {
        const RunConfig cfg = parse(R"({"prm": {"kind": "oracle"}})");
        auto prm = make_prm(cfg, problems);
        const AtomicStep good{1, "Answer: 12", ActionKind::Conclude, {}};
        const AtomicStep bad{1, "Answer: 13", ActionKind::Conclude, {}};
        CHECK(score_step(*prm, "What is 3*4?", {}, good) == 1.0);
        CHECK(score_step(*prm, "What is 3*4?", {}, bad) == 0.0);
    }
    SECTION("hash scorer is deterministic") {
        const RunConfig cfg = parse(R"({"prm": {"kind": "hash"}})");
        auto prm = make_prm(cfg, problems);
        const double a = prm->score("same input");
        CHECK(prm->score("same input") == a);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
    SECTION("remote kinds construct without contacting the endpoint") {
        const RunConfig cfg = parse(
            R"({"policy": {"kind": "remote_chat",
                           "endpoint": "http://127.0.0.1:1"},
                "prm": {"kind": "remote",
                        "endpoint": "http://127.0.0.1:1"}})",
            {{"STEPWISE_API_TOKEN", ""}});
        CHECK(make_policy(cfg, templates) != nullptr);
        CHECK(make_prm(cfg, problems) != nullptr);
    }
}

TEST_CASE("annotator mock drives the full annotation pipeline") {
    MockAnnotator annotator;
    Problem p = gold_problem("pipe-1");
    p.image_ref = "fig1.png";
    const SamplingParams params;

    AnnotatedRollout rollout = annotate_dynamic(p, annotator, params, 20, 5);
    CHECK(rollout.terminated == Termination::Concluded);
    REQUIRE(rollout.steps.size() == 3);  // two working steps + conclusion
    CHECK(rollout.caption == "the figure referenced by problem pipe-1");
    CHECK(rollout.steps[0].action == ActionKind::Continue);
    CHECK(rollout.steps[1].action == ActionKind::Verify);
    CHECK(rollout.steps[2].action == ActionKind::Conclude);
    CHECK(rollout.final_answer == "12");

    // Same seed reproduces the rollout byte for byte; a different seed
    // changes the sampled filler while keeping the shape.
    const AnnotatedRollout again = annotate_dynamic(p, annotator, params, 20, 5);
    CHECK(annotated_to_json(again).dump() ==
          annotated_to_json(rollout).dump());
    const AnnotatedRollout other = annotate_dynamic(p, annotator, params, 20, 6);
    CHECK(annotated_to_json(other).dump() !=
          annotated_to_json(rollout).dump());

    const FilterVerdict verdict = filter_rollout(
        rollout, [](const std::string& a, const std::string& g) {
            return grade_answer(a, g);
        });
    CHECK(verdict.accepted);
    CHECK(rollout.verified);

    // The judge path speaks the filter template.
    AnnotatedRollout judged = annotate_dynamic(p, annotator, params, 20, 5);
    const FilterVerdict approved = filter_rollout(
        judged,
        [](const std::string& a, const std::string& g) {
            return grade_answer(a, g);
        },
        &annotator, params, 9);
    CHECK(approved.accepted);

    // Short-CoT expansion and corruption templates answer too.
    const AnnotatedRollout expanded =
        augment_short_cot(p, "3*4=12 so 12.", annotator, params, 3);
    CHECK(expanded.terminated == Termination::Concluded);
    CHECK(expanded.final_answer == "12");
    REQUIRE(expanded.steps.size() == 3);

    TemplateMutator mutator(annotator, params);
    const auto mutation =
        mutator.mutate(p, AtomicStep{1, "All sides equal 4.",
                                     ActionKind::Continue, {}}, 3);
    REQUIRE(mutation.has_value());
    CHECK(mutation->step.text == "Suppose instead: All sides equal 4.");
}

TEST_CASE("annotator mock without gold concludes with a placeholder") {
    MockAnnotator annotator;
    Problem p;
    p.id = "no-gold";
    p.question = "Open question?";
    p.source_tag = "unit";
    const AnnotatedRollout rollout =
        annotate_dynamic(p, annotator, SamplingParams{}, 20, 1);
    CHECK(rollout.terminated == Termination::Concluded);
    CHECK(rollout.final_answer == "unknown-no-gold");
    CHECK_THROWS_AS(annotator.complete(p, "unknown_template", "x",
                                       SamplingParams{}, 1),
                    BackendUnavailable);
}

TEST_CASE("indexed worker pool returns results in index order") {
    const std::function<size_t(size_t)> square = [](size_t i) {
        return i * i;
    };
    const std::vector<size_t> got = run_indexed<size_t>(100, 4, square);
    REQUIRE(got.size() == 100);
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == i * i);

    // Single worker and oversubscribed pools agree exactly.
    CHECK(run_indexed<size_t>(5, 1, square) ==
          run_indexed<size_t>(5, 64, square));
    CHECK(run_indexed<size_t>(0, 3, square).empty());
    CHECK_THROWS_AS(run_indexed<size_t>(3, 0, square), DomainError);
}

TEST_CASE("worker pool surfaces the first failure") {
    const std::function<int(size_t)> boom = [](size_t i) -> int {
        if (i == 5) throw BackendUnavailable("endpoint fell over");
        return static_cast<int>(i);
    };
    CHECK_THROWS_AS(run_indexed<int>(32, 4, boom), BackendUnavailable);
}

TEST_CASE("worker pool honors cancellation") {
    std::atomic<bool> cancelled{true};  // cancelled before any work starts
    std::vector<char> completed;
    const std::function<int(size_t)> fn = [](size_t i) {
        return static_cast<int>(i);
    };
    const std::vector<int> got =
        run_indexed<int>(16, 2, fn, &cancelled, &completed);
    REQUIRE(completed.size() == 16);
    for (char c : completed) CHECK(c == 0);
    CHECK(got.size() == 16);  // shape kept; caller checks completion flags
}
