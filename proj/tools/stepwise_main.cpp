// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end binding the pipeline together:
//   annotate -> filter -> mask / prm-pairs -> solve -> evaluate
// plus capability-report and scaling-sweep.
//
// Every run writes into a fresh timestamped directory under the configured
// output root, together with a manifest pinning the config and input hashes.
// Output records never contain wall-clock data, so a fixed --seed with mock
// backends reproduces files byte for byte.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "stepwise/config.hpp"
#include "stepwise/data_engine.hpp"
#include "stepwise/eval.hpp"
#include "stepwise/manifest.hpp"
#include "stepwise/search.hpp"
#include "stepwise/thread_pool.hpp"

extern "C" char** environ;

namespace {

using namespace stepwise;

std::atomic<bool> g_cancelled{false};

void handle_signal(int) { g_cancelled.store(true); }

constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitData = 4;
constexpr int kExitCancelled = 130;

// ---------------------------------------------------------------------------
// Flag overrides layered on top of the config file.
// ---------------------------------------------------------------------------

struct Overrides {
    std::string config_path;
    uint64_t seed = 0;
    std::string strategy;
    int beam_width = 0;
    int candidates = 0;
    int max_steps = 0;
    std::string aggregation;
    std::string preset;
    std::string out;
};

void add_common_flags(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config_path,
                    "Run configuration file (JSON)");
    sub->add_option("--seed", o.seed, "Base seed for every random draw");
    sub->add_option("--strategy", o.strategy,
                    "Search strategy: quick, greedy, beam, best_of_n, "
                    "majority");
    sub->add_option("--beam-width", o.beam_width, "Beam width B");
    sub->add_option("--candidates", o.candidates,
                    "Candidates per expansion C");
    sub->add_option("--max-steps", o.max_steps, "Step cap T per rollout");
    sub->add_option("--aggregation", o.aggregation,
                    "Path score aggregation: min, avg, last")
        ->check(CLI::IsMember({"min", "avg", "last"}));
    sub->add_option("--preset", o.preset,
                    "Sampling preset: direct, cot, quick, slow")
        ->check(CLI::IsMember({"direct", "cot", "quick", "slow"}));
    sub->add_option("--out", o.out, "Output root directory");
}

RunConfig resolve_config(const CLI::App* sub, const Overrides& o) {
    const auto env = environment_snapshot(environ);
    RunConfig cfg = o.config_path.empty()
                        ? load_config_json(Json::object(), env)
                        : load_config(o.config_path, env);
    if (sub->count("--seed")) cfg.seed = o.seed;
    if (sub->count("--strategy")) cfg.search.strategy = o.strategy;
    if (sub->count("--beam-width")) cfg.search.budget.beam_width = o.beam_width;
    if (sub->count("--candidates"))
        cfg.search.budget.candidates_per_expansion = o.candidates;
    if (sub->count("--max-steps")) cfg.search.budget.max_steps = o.max_steps;
    if (sub->count("--aggregation")) {
        if (o.aggregation == "min")
            cfg.search.aggregation = AggregationMode::WorstAction;
        else if (o.aggregation == "avg")
            cfg.search.aggregation = AggregationMode::AverageScore;
        else
            cfg.search.aggregation = AggregationMode::LastAction;
    }
    if (sub->count("--preset")) cfg.search.preset = o.preset;
    if (sub->count("--out")) cfg.output_dir = o.out;

    // Flag overrides can invalidate what the file established; re-check.
    bool known = false;
    for (const auto& s : known_strategies())
        if (cfg.search.strategy == s) known = true;
    if (!known)
        throw ConfigParseError("unknown strategy \"" + cfg.search.strategy +
                               "\"");
    preset_params(cfg, cfg.search.preset);
    try {
        validate_budget(cfg.search.budget,
                        /*for_beam=*/cfg.search.strategy == "beam");
    } catch (const DomainError& e) {
        throw ConfigParseError(std::string("search budget: ") + e.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Run directory and manifest plumbing.
// ---------------------------------------------------------------------------

struct RunContext {
    RunConfig cfg;
    std::string command;
    std::filesystem::path run_dir;
    std::string created_utc;
    Json config_entry;
    Json inputs = Json::array();
    std::vector<std::string> outputs;
};

std::string utc_timestamp_compact() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

std::string utc_timestamp_iso() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

RunContext open_run(RunConfig cfg, const std::string& command,
                    const std::string& config_path) {
    RunContext ctx;
    ctx.cfg = std::move(cfg);
    ctx.command = command;
    ctx.created_utc = utc_timestamp_iso();

    std::filesystem::create_directories(ctx.cfg.output_dir);
    const std::string base = command + "-" + utc_timestamp_compact();
    for (int i = 0;; ++i) {
        std::filesystem::path candidate =
            std::filesystem::path(ctx.cfg.output_dir) /
            (i == 0 ? base : base + "-" + std::to_string(i));
        if (std::filesystem::create_directory(candidate)) {
            ctx.run_dir = std::move(candidate);
            break;
        }
    }

    ctx.config_entry = Json::object();
    if (config_path.empty()) {
        ctx.config_entry["path"] = nullptr;
        ctx.config_entry["sha256"] = sha256_hex("{}");  // built-in defaults
    } else {
        ctx.config_entry["path"] = config_path;
        ctx.config_entry["sha256"] = file_sha256(config_path);
    }
    return ctx;
}

void note_input(RunContext& ctx, const std::filesystem::path& path) {
    Json row;
    row["path"] = path.string();
    row["sha256"] = file_sha256(path);
    ctx.inputs.push_back(std::move(row));
}

/// Registers every prompt template as an input; they shape model requests.
void note_template_dir(RunContext& ctx) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry :
         std::filesystem::directory_iterator(ctx.cfg.template_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".txt")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) note_input(ctx, f);
}

void write_output(RunContext& ctx, const std::string& name,
                  const std::string& content) {
    write_file(ctx.run_dir / name, content);
    ctx.outputs.push_back(name);
}

/// Serializes `records[0..upto)` as JSONL; a cancelled run appends one
/// marker line so consumers can tell a truncated file from a complete one.
void write_jsonl_output(RunContext& ctx, const std::string& name,
                        const std::vector<Json>& records, size_t upto,
                        bool truncated) {
    std::string out;
    for (size_t i = 0; i < upto; ++i) out += records[i].dump() + "\n";
    if (truncated) {
        Json marker;
        marker["truncated"] = true;
        marker["completed"] = upto;
        marker["total"] = records.size();
        out += marker.dump() + "\n";
    }
    write_output(ctx, name, out);
}

void close_run(RunContext& ctx, bool truncated) {
    Json manifest;
    manifest["command"] = ctx.command;
    manifest["created_utc"] = ctx.created_utc;
    manifest["seed"] = ctx.cfg.seed;
    manifest["workers"] = ctx.cfg.workers;
    manifest["truncated"] = truncated;
    manifest["config"] = ctx.config_entry;
    manifest["inputs"] = ctx.inputs;
    manifest["outputs"] = ctx.outputs;
    write_file(ctx.run_dir / "run_manifest.json", manifest.dump(2) + "\n");
    std::cout << "run_dir=" << ctx.run_dir.string() << "\n";
}

/// Number of leading completed items; with claim-order scheduling the
/// completed set is always a prefix when a run is cancelled.
size_t completed_prefix(const std::vector<char>& flags) {
    size_t n = 0;
    while (n < flags.size() && flags[n]) ++n;
    return n;
}

uint64_t item_seed(const RunConfig& cfg, const std::string& id) {
    return mix_seed(cfg.seed, fnv1a(id));
}

// ---------------------------------------------------------------------------
// Shared loaders.
// ---------------------------------------------------------------------------

/// Problem files may carry annotation-only extras (a terse solution per
/// line); commands that just need problems accept the superset and drop
/// the extras, so one file can drive the whole pipeline.
std::vector<Problem> load_problem_file(RunContext& ctx) {
    const std::string& path = ctx.cfg.data.problems;
    if (path.empty())
        throw ConfigParseError("\"config.data.problems\" is not set");
    note_input(ctx, path);
    std::vector<Problem> problems;
    for (const AnnotateInput& in : load_annotate_inputs(path))
        problems.push_back(in.problem);
    return problems;
}

std::vector<AnnotatedRollout> load_rollout_file(RunContext& ctx) {
    const std::string& path = ctx.cfg.data.rollouts;
    if (path.empty())
        throw ConfigParseError(
            "\"config.data.rollouts\" is not set; point it at an annotated "
            "rollout file");
    note_input(ctx, path);
    std::vector<AnnotatedRollout> rollouts;
    for (const Json& j : read_jsonl(path))
        rollouts.push_back(annotated_from_json(j));
    return rollouts;
}

TemplateStore load_templates(const RunContext& ctx) {
    return TemplateStore::load_dir(ctx.cfg.template_dir);
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

int cmd_annotate(RunContext& ctx) {
    note_template_dir(ctx);
    if (ctx.cfg.data.problems.empty())
        throw ConfigParseError("\"config.data.problems\" is not set");
    note_input(ctx, ctx.cfg.data.problems);
    const std::vector<AnnotateInput> inputs =
        load_annotate_inputs(ctx.cfg.data.problems);
    const TemplateStore templates = load_templates(ctx);
    auto policy = make_policy(ctx.cfg, templates);
    const SamplingParams params = preset_params(ctx.cfg, "slow");

    std::vector<char> done;
    const std::vector<Json> records = run_indexed<Json>(
        inputs.size(), ctx.cfg.workers,
        [&](size_t i) {
            const AnnotateInput& in = inputs[i];
            const uint64_t seed = item_seed(ctx.cfg, in.problem.id);
            const AnnotatedRollout rollout =
                in.short_cot
                    ? augment_short_cot(in.problem, *in.short_cot, *policy,
                                        params, seed)
                    : annotate_dynamic(in.problem, *policy, params,
                                       ctx.cfg.search.budget.max_steps, seed);
            return annotated_to_json(rollout);
        },
        &g_cancelled, &done);

    const bool truncated = g_cancelled.load();
    const size_t upto = truncated ? completed_prefix(done) : records.size();
    write_jsonl_output(ctx, "rollouts.jsonl", records, upto, truncated);

    std::map<std::string, SourceCounts> by_source;
    for (size_t i = 0; i < upto; ++i) {
        SourceCounts& c =
            by_source[records[i].at("problem").at("source_tag")
                          .get<std::string>()];
        ++c.inputs;
        if (records[i].at("terminated") == "concluded") ++c.concluded;
        else ++c.quarantined;
    }
    write_output(ctx, "counts.json", manifest_to_json(by_source).dump(2) + "\n");
    close_run(ctx, truncated);
    std::cout << "annotated=" << upto << "/" << records.size() << "\n";
    return truncated ? kExitCancelled : kExitOk;
}

int cmd_filter(RunContext& ctx) {
    std::vector<AnnotatedRollout> rollouts = load_rollout_file(ctx);
    std::unique_ptr<StepPolicy> judge;
    if (ctx.cfg.filter_judge) {
        note_template_dir(ctx);
        judge = make_policy(ctx.cfg, load_templates(ctx));
    }
    const SamplingParams params = preset_params(ctx.cfg, "slow");
    const AnswerGrader grader = [](const std::string& a,
                                   const std::string& g) {
        return grade_answer(a, g);
    };

    struct Outcome {
        Json rollout;
        bool accepted = false;
        std::string reason;
    };
    std::vector<char> done;
    const std::vector<Outcome> outcomes = run_indexed<Outcome>(
        rollouts.size(), ctx.cfg.workers,
        [&](size_t i) {
            AnnotatedRollout r = rollouts[i];
            Outcome out;
            try {
                const FilterVerdict v =
                    filter_rollout(r, grader, judge.get(), params,
                                   item_seed(ctx.cfg, r.problem.id));
                out.accepted = v.accepted;
                out.reason = v.reason;
            } catch (const MissingGoldAnswer&) {
                out.accepted = false;
                out.reason = "missing-gold";
            }
            out.rollout = annotated_to_json(r);
            return out;
        },
        &g_cancelled, &done);

    const bool truncated = g_cancelled.load();
    const size_t upto = truncated ? completed_prefix(done) : outcomes.size();

    std::vector<Json> accepted, rejected;
    std::map<std::string, SourceCounts> by_source;
    for (size_t i = 0; i < upto; ++i) {
        const Outcome& o = outcomes[i];
        SourceCounts& c =
            by_source[o.rollout.at("problem").at("source_tag")
                          .get<std::string>()];
        ++c.inputs;
        if (o.accepted) {
            ++c.accepted;
            accepted.push_back(o.rollout);
        } else {
            ++c.rejected;
            Json row;
            row["reason"] = o.reason;
            row["rollout"] = o.rollout;
            rejected.push_back(std::move(row));
        }
    }
    write_jsonl_output(ctx, "accepted.jsonl", accepted, accepted.size(),
                       truncated);
    write_jsonl_output(ctx, "rejected.jsonl", rejected, rejected.size(),
                       truncated);
    write_output(ctx, "counts.json", manifest_to_json(by_source).dump(2) + "\n");
    close_run(ctx, truncated);
    std::cout << "accepted=" << accepted.size()
              << " rejected=" << rejected.size() << "\n";
    return truncated ? kExitCancelled : kExitOk;
}

int cmd_mask(RunContext& ctx) {
    const std::vector<AnnotatedRollout> rollouts = load_rollout_file(ctx);
    std::vector<char> done;
    const std::vector<Json> per_rollout = run_indexed<Json>(
        rollouts.size(), ctx.cfg.workers,
        [&](size_t i) {
            Json rows = Json::array();
            for (const SftRecord& r : mask_to_sft(rollouts[i]))
                rows.push_back(sft_record_to_json(r));
            return rows;
        },
        &g_cancelled, &done);

    const bool truncated = g_cancelled.load();
    const size_t upto = truncated ? completed_prefix(done) : per_rollout.size();

    std::vector<Json> records;
    std::map<std::string, SourceCounts> by_source;
    for (size_t i = 0; i < upto; ++i) {
        SourceCounts& c = by_source[rollouts[i].problem.source_tag];
        ++c.inputs;
        for (const Json& row : per_rollout[i]) {
            ++c.sft_records;
            records.push_back(row);
        }
    }
    write_jsonl_output(ctx, "sft.jsonl", records, records.size(), truncated);
    write_output(ctx, "counts.json", manifest_to_json(by_source).dump(2) + "\n");
    close_run(ctx, truncated);
    std::cout << "sft_records=" << records.size() << "\n";
    return truncated ? kExitCancelled : kExitOk;
}

int cmd_prm_pairs(RunContext& ctx) {
    const std::vector<AnnotatedRollout> rollouts = load_rollout_file(ctx);
    RuleMutator mutator;
    std::vector<char> done;
    const std::vector<Json> per_rollout = run_indexed<Json>(
        rollouts.size(), ctx.cfg.workers,
        [&](size_t i) {
            Json rows = Json::array();
            for (const PrmSample& s : make_prm_pairs(
                     rollouts[i], mutator,
                     item_seed(ctx.cfg, rollouts[i].problem.id)))
                rows.push_back(prm_sample_to_json(s));
            return rows;
        },
        &g_cancelled, &done);

    const bool truncated = g_cancelled.load();
    const size_t upto = truncated ? completed_prefix(done) : per_rollout.size();

    std::vector<Json> records;
    std::map<std::string, SourceCounts> by_source;
    for (size_t i = 0; i < upto; ++i) {
        SourceCounts& c = by_source[rollouts[i].problem.source_tag];
        ++c.inputs;
        for (const Json& row : per_rollout[i]) {
            ++c.prm_samples;
            records.push_back(row);
        }
    }
    write_jsonl_output(ctx, "prm_samples.jsonl", records, records.size(),
                       truncated);
    write_output(ctx, "counts.json", manifest_to_json(by_source).dump(2) + "\n");
    close_run(ctx, truncated);
    std::cout << "prm_samples=" << records.size() << "\n";
    return truncated ? kExitCancelled : kExitOk;
}

int cmd_solve(RunContext& ctx) {
    note_template_dir(ctx);
    const std::vector<Problem> problems = load_problem_file(ctx);
    const TemplateStore templates = load_templates(ctx);
    auto policy = make_policy(ctx.cfg, templates);
    auto prm = make_prm(ctx.cfg, problems);
    const SamplingParams params = preset_params(ctx.cfg, ctx.cfg.search.preset);
    const std::string& strategy = ctx.cfg.search.strategy;

    SearchOptions opts;
    opts.selection = ctx.cfg.search.aggregation;
    opts.beam_objective = ctx.cfg.search.aggregation;

    std::vector<char> done;
    const std::vector<Json> records = run_indexed<Json>(
        problems.size(), ctx.cfg.workers,
        [&](size_t i) {
            const Problem& p = problems[i];
            SearchBudget budget = ctx.cfg.search.budget;
            budget.seed = item_seed(ctx.cfg, p.id);
            Json record;
            try {
                if (strategy == "majority") {
                    std::vector<Rollout> rollouts;
                    SearchStats stats;
                    for (int r = 0; r < budget.candidates_per_expansion;
                         ++r) {
                        SearchBudget rb = budget;
                        rb.seed = mix_seed(budget.seed,
                                           static_cast<uint64_t>(r));
                        SearchStats s;
                        rollouts.push_back(
                            quick_think(p, *policy, params, rb, opts, &s));
                        stats.policy_calls += s.policy_calls;
                        stats.prm_calls += s.prm_calls;
                        stats.steps_generated += s.steps_generated;
                    }
                    const VoteResult vote = majority_vote(rollouts);
                    record["problem_id"] = p.id;
                    record["strategy"] = "majority";
                    Json b;
                    b["max_steps"] = budget.max_steps;
                    b["candidates_per_expansion"] =
                        budget.candidates_per_expansion;
                    b["beam_width"] = budget.beam_width;
                    b["seed"] = budget.seed;
                    record["budget"] = std::move(b);
                    record["answer"] = vote.answer;
                    record["winners"] = vote.winners;
                    record["abstained"] = vote.abstained;
                    record["votes"] = rollouts.size();
                    Json st;
                    st["policy_calls"] = stats.policy_calls;
                    st["prm_calls"] = stats.prm_calls;
                    st["steps_generated"] = stats.steps_generated;
                    record["stats"] = std::move(st);
                } else {
                    const SearchResult result = [&]() -> SearchResult {
                        if (strategy == "quick") {
                            SearchStats stats;
                            Rollout r = quick_think(p, *policy, params,
                                                    budget, opts, &stats);
                            return SearchResult{r, {r}, 0, stats};
                        }
                        if (strategy == "greedy")
                            return greedy_search(p, *policy, *prm, params,
                                                 budget, opts);
                        if (strategy == "beam")
                            return beam_search(p, *policy, *prm, params,
                                               budget, opts);
                        return best_of_n(p, *policy, *prm, params, budget,
                                         ctx.cfg.search.aggregation, opts);
                    }();
                    record = search_run_record(p, strategy, budget, result);
                }
                if (p.gold_answer && record.contains("answer") &&
                    record.at("answer").is_string())
                    record["solved"] = grade_answer(
                        record.at("answer").get<std::string>(),
                        *p.gold_answer);
                else
                    record["solved"] = nullptr;
            } catch (const Error& e) {
                record = Json::object();
                record["problem_id"] = p.id;
                record["strategy"] = strategy;
                record["error"] = e.what();
                record["solved"] = nullptr;
            }
            return record;
        },
        &g_cancelled, &done);

    const bool truncated = g_cancelled.load();
    const size_t upto = truncated ? completed_prefix(done) : records.size();
    write_jsonl_output(ctx, "records.jsonl", records, upto, truncated);

    long long graded = 0, solved = 0, failures = 0;
    for (size_t i = 0; i < upto; ++i) {
        if (records[i].contains("error")) ++failures;
        if (records[i].at("solved").is_boolean()) {
            ++graded;
            if (records[i].at("solved").get<bool>()) ++solved;
        }
    }
    Json summary;
    summary["problems"] = upto;
    summary["strategy"] = strategy;
    summary["graded"] = graded;
    summary["solved"] = solved;
    summary["failures"] = failures;
    summary["accuracy"] =
        graded ? static_cast<double>(solved) / static_cast<double>(graded)
               : 0.0;
    write_output(ctx, "summary.json", summary.dump(2) + "\n");
    close_run(ctx, truncated);
    std::cout << "solved=" << solved << "/" << graded
              << " failures=" << failures << "\n";
    return truncated ? kExitCancelled : kExitOk;
}

int cmd_evaluate(RunContext& ctx) {
    if (ctx.cfg.data.prm_samples.empty())
        throw ConfigParseError(
            "\"config.data.prm_samples\" is not set; point it at a labeled "
            "step sample file");
    note_input(ctx, ctx.cfg.data.prm_samples);
    std::vector<PrmSample> samples;
    for (const Json& j : read_jsonl(ctx.cfg.data.prm_samples))
        samples.push_back(prm_sample_from_json(j));

    std::unique_ptr<PrmScorer> prm;
    if (ctx.cfg.prm.kind == PrmKind::Oracle) {
        // The oracle keys on question text exactly as samples carry it.
        // Annotation may have generated captions the problem file has never
        // seen, so when a rollout corpus is configured its questions join
        // the key set too.
        auto oracle = std::make_unique<OraclePrm>(
            OraclePrm::from_problems(load_problem_file(ctx)));
        if (!ctx.cfg.data.rollouts.empty()) {
            note_input(ctx, ctx.cfg.data.rollouts);
            for (const Json& j : read_jsonl(ctx.cfg.data.rollouts)) {
                const AnnotatedRollout r = annotated_from_json(j);
                if (r.problem.gold_answer)
                    oracle->add(annotated_question(r), *r.problem.gold_answer);
            }
        }
        prm = std::move(oracle);
    } else {
        prm = make_prm(ctx.cfg, {});
    }

    const BceResult bce = prm_bce(samples, *prm);
    Json j;
    j["n"] = bce.n;
    j["total"] = bce.total;
    j["mean"] = bce.mean;
    write_output(ctx, "bce.json", j.dump(2) + "\n");
    close_run(ctx, false);
    std::cout << "bce_mean=" << bce.mean << " n=" << bce.n << "\n";
    return kExitOk;
}

int cmd_capability_report(RunContext& ctx) {
    note_template_dir(ctx);
    const std::vector<AnnotatedRollout> rollouts = load_rollout_file(ctx);
    const TemplateStore templates = load_templates(ctx);
    auto policy = make_policy(ctx.cfg, templates);
    const SamplingParams params = preset_params(ctx.cfg, "slow");
    const AnswerGrader grader = [](const std::string& a,
                                   const std::string& g) {
        return grade_answer(a, g);
    };

    std::vector<char> done;
    using Scored = std::vector<std::pair<AtomicStep, double>>;
    const std::vector<Scored> per_rollout = run_indexed<Scored>(
        rollouts.size(), ctx.cfg.workers,
        [&](size_t i) {
            const AnnotatedRollout& r = rollouts[i];
            Problem p = r.problem;
            p.caption = r.caption;  // annotation supplies the caption
            Scored scored;
            for (size_t s = 0; s < r.steps.size(); ++s) {
                const std::vector<AtomicStep> prefix(r.steps.begin(),
                                                     r.steps.begin() +
                                                         static_cast<long>(s));
                const ReasoningState state(p, prefix);
                const double c_soft = soft_estimate(
                    state, r.steps[s], *policy, params, ctx.cfg.soft_rounds,
                    grader,
                    mix_seed(item_seed(ctx.cfg, p.id),
                             static_cast<uint64_t>(s)),
                    ctx.cfg.search.budget.max_steps);
                scored.emplace_back(r.steps[s], c_soft);
            }
            return scored;
        },
        &g_cancelled, &done);

    const bool truncated = g_cancelled.load();
    const size_t upto = truncated ? completed_prefix(done) : per_rollout.size();

    Scored actions;
    for (size_t i = 0; i < upto; ++i)
        actions.insert(actions.end(), per_rollout[i].begin(),
                       per_rollout[i].end());
    if (actions.empty())
        throw DataError("no actions to report on (empty or truncated input)");
    const std::vector<CapabilityScore> rows =
        capability_report(actions, keyword_tagger);
    write_output(ctx, "capability.json",
                 capability_report_json(rows).dump(2) + "\n");
    write_output(ctx, "capability.csv", capability_report_csv(rows));
    close_run(ctx, truncated);
    for (const CapabilityScore& r : rows)
        std::cout << r.capability << "=" << r.mean_soft << " (n=" << r.n_actions
                  << ")\n";
    return truncated ? kExitCancelled : kExitOk;
}

int cmd_scaling_sweep(RunContext& ctx) {
    note_template_dir(ctx);
    const std::vector<Problem> problems = load_problem_file(ctx);
    const TemplateStore templates = load_templates(ctx);
    auto policy = make_policy(ctx.cfg, templates);
    auto prm = make_prm(ctx.cfg, problems);

    SweepConfig sweep;
    sweep.strategy = ctx.cfg.search.strategy;
    if (sweep.strategy == "majority")
        throw ConfigParseError(
            "scaling-sweep supports quick, greedy, beam, and best_of_n");
    sweep.mode = ctx.cfg.search.aggregation;
    sweep.budget = ctx.cfg.search.budget;
    sweep.budget.seed = ctx.cfg.seed;
    sweep.params = preset_params(ctx.cfg, ctx.cfg.search.preset);
    sweep.opts.selection = ctx.cfg.search.aggregation;
    sweep.opts.beam_objective = ctx.cfg.search.aggregation;

    const std::vector<SweepCell> cells = scaling_sweep(
        problems, *policy, *prm, ctx.cfg.sweep_counts, sweep);

    std::vector<Json> rows;
    for (const SweepCell& c : cells) rows.push_back(sweep_cell_to_json(c));
    write_output(ctx, "sweep.csv", sweep_csv(cells));
    write_jsonl_output(ctx, "sweep.jsonl", rows, rows.size(), false);
    close_run(ctx, false);
    for (const SweepCell& c : cells)
        std::cout << "C=" << c.candidates << " accuracy=" << c.accuracy
                  << " failures=" << c.failures << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);

    CLI::App app{
        "stepwise: search, data generation, and evaluation over atomic "
        "reasoning steps"};
    app.require_subcommand(1);
    Overrides o;

    struct Command {
        const char* name;
        const char* help;
        int (*run)(RunContext&);
    };
    const std::vector<Command> commands = {
        {"annotate", "Generate step-by-step rollouts for a problem set",
         &cmd_annotate},
        {"filter", "Split annotated rollouts into accepted and rejected",
         &cmd_filter},
        {"mask", "Expand verified rollouts into per-turn training records",
         &cmd_mask},
        {"prm-pairs",
         "Derive positive/negative step pairs from verified rollouts",
         &cmd_prm_pairs},
        {"solve", "Run the configured search strategy over a problem set",
         &cmd_solve},
        {"evaluate", "Score a reward model's calibration on labeled steps",
         &cmd_evaluate},
        {"capability-report",
         "Estimate per-capability soft scores over annotated steps",
         &cmd_capability_report},
        {"scaling-sweep",
         "Measure accuracy as the candidate budget grows", &cmd_scaling_sweep},
    };
    for (const Command& c : commands)
        add_common_flags(app.add_subcommand(c.name, c.help), o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    const CLI::App* sub = app.get_subcommands().front();
    try {
        RunConfig cfg = resolve_config(sub, o);
        RunContext ctx = open_run(std::move(cfg), sub->get_name(),
                                  o.config_path);
        for (const Command& c : commands)
            if (sub->get_name() == c.name) return c.run(ctx);
        return kExitUnexpected;  // unreachable: require_subcommand(1)
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUnexpected;
    }
}
