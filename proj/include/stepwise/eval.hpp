// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/data_engine.hpp"
#include "stepwise/errors.hpp"
#include "stepwise/jsonl.hpp"
#include "stepwise/reward.hpp"
#include "stepwise/rng.hpp"
#include "stepwise/search.hpp"
#include "stepwise/text.hpp"

namespace stepwise {

// ---------------------------------------------------------------------------
// Answer grading.
// ---------------------------------------------------------------------------

/// True iff the normalized strings are equal, or both sides parse
/// numerically (plain literals or a/b fractions) and agree within a
/// relative tolerance of 1e-6 scaled by max(1, |gold|). Never throws; an
/// answer that cannot even be normalized matches nothing.
inline bool grade_answer(const std::string& predicted,
                         const std::string& gold) {
    std::optional<std::string> p, g;
    try {
        p = normalize_answer(predicted);
    } catch (const Error&) {
    }
    try {
        g = normalize_answer(gold);
    } catch (const Error&) {
    }
    if (!p || !g) return false;
    if (*p == *g) return true;
    const std::optional<double> pv = numeric_value(*p);
    const std::optional<double> gv = numeric_value(*g);
    if (pv && gv) {
        const double tol = 1e-6 * std::max(1.0, std::fabs(*gv));
        return std::fabs(*pv - *gv) <= tol;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Soft estimation: K rounds of outcome supervision on one candidate action.
// ---------------------------------------------------------------------------

inline constexpr int kDefaultSoftRounds = 8;

/// c_soft = (correct completions) / K over K independent single-path
/// completions of state+action; by construction the value is exactly
/// K-quantized. Backend failures abort the whole estimate — a partial K is
/// never silently reported. `max_steps` caps total path depth, so an
/// already-deep state gets proportionally shorter completions.
inline double soft_estimate(const ReasoningState& state,
                            const AtomicStep& action, StepPolicy& policy,
                            const SamplingParams& params, int k,
                            const AnswerGrader& grader, uint64_t seed = 0,
                            int max_steps = 20, const SearchOptions& opts = {},
                            SearchStats* stats_out = nullptr) {
    if (k < 1) throw DomainError("soft estimation needs K >= 1");
    if (!grader) throw DomainError("soft estimation needs a grader");
    const Problem& problem = state.problem();
    if (!problem.gold_answer)
        throw MissingGoldAnswer("soft estimation needs a gold answer for \"" +
                                problem.id + "\"");
    const ReasoningState base = state.extended(action);
    SearchStats stats;
    int correct = 0;
    for (int i = 0; i < k; ++i) {
        const uint64_t rollout_seed = mix_seed(seed, static_cast<uint64_t>(i));
        ReasoningState s = base;
        for (int t = 0;
             static_cast<int>(s.depth()) < max_steps && !s.concluded(); ++t) {
            std::vector<AtomicStep> cands = propose_steps(
                policy, s, 1, params, opts.step_template,
                mix_seed(rollout_seed, static_cast<uint64_t>(t)),
                opts.phrases);
            ++stats.policy_calls;
            ++stats.steps_generated;
            s = s.extended(std::move(cands[0]));
        }
        Rollout r = conclude_rollout(std::move(s), opts);
        if (r.final_answer && grader(*r.final_answer, *problem.gold_answer))
            ++correct;
    }
    if (stats_out) *stats_out = stats;
    return static_cast<double>(correct) / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Capability mapping.
// ---------------------------------------------------------------------------

struct CapabilitySet {
    std::vector<std::string> names;
};

inline CapabilitySet default_capability_set() {
    return {{
        "Approximation",
        "Verification",
        "Calculation",
        "Variable Definition",
        "Geometric Reasoning",
        "Conclusion Drawing",
        "Graphs Analysis",
        "Equation Formulation",
        "Image Description",
        "Knowledge Introduction",
        "Information Extraction",
        "Formula Derivation",
    }};
}

/// Reserved bucket for actions the tagger leaves untagged; always ordered
/// after the configured capabilities.
inline constexpr const char* kUnclassified = "Unclassified";

inline void validate_capability_set(const CapabilitySet& set) {
    if (set.names.empty())
        throw DomainError("capability set must not be empty");
    std::set<std::string> seen;
    for (const std::string& name : set.names) {
        if (trim(name).empty())
            throw DomainError("capability names must be non-empty");
        if (name == kUnclassified)
            throw DomainError(
                "\"Unclassified\" is reserved for untagged actions");
        if (!seen.insert(name).second)
            throw DomainError("duplicate capability name: " + name);
    }
}

using StepTagger =
    std::function<std::vector<std::string>(const AtomicStep&)>;

/// Deterministic rule-based tagger: maps step text (and action kind) onto
/// capabilities by keyword. An action may earn several tags; an action
/// matching nothing returns empty and lands in the Unclassified bucket.
inline std::vector<std::string> keyword_tagger(const AtomicStep& step) {
    const std::string text = ascii_lower(step.text);
    const auto has = [&](const char* needle) {
        return text.find(needle) != std::string::npos;
    };
    bool has_digit = false, has_operator = false;
    for (const char c : text) {
        if (c >= '0' && c <= '9') has_digit = true;
        if (c == '+' || c == '*' || c == '/' || c == '=') has_operator = true;
    }
    std::vector<std::string> tags;
    if (has("approximately") || has("approx.") || has("roughly") ||
        has("round to") || has("rounding"))
        tags.push_back("Approximation");
    if (step.action == ActionKind::Verify || has("verify") ||
        has("double-check") || has("recheck") || has("confirm"))
        tags.push_back("Verification");
    if (has("compute") || has("calculate") || has("multiply") ||
        has("divide") || has("subtract") || (has_digit && has_operator))
        tags.push_back("Calculation");
    if (has("let ") || has("denote") || has("define the variable"))
        tags.push_back("Variable Definition");
    if (has("triangle") || has("angle") || has("circle") || has("area") ||
        has("perimeter") || has("geometr"))
        tags.push_back("Geometric Reasoning");
    if (step.action == ActionKind::Conclude || has("therefore") ||
        has("conclude"))
        tags.push_back("Conclusion Drawing");
    if (has("graph") || has("plot") || has("axis") || has("chart"))
        tags.push_back("Graphs Analysis");
    if (has("equation") || has("formulate") || has("set up"))
        tags.push_back("Equation Formulation");
    if (has("image") || has("figure") || has("picture") || has("diagram") ||
        has("caption"))
        tags.push_back("Image Description");
    if (has("recall") || has("theorem") || has("by definition") ||
        has("identity"))
        tags.push_back("Knowledge Introduction");
    if (has("given") || has("from the problem") || has("the problem states"))
        tags.push_back("Information Extraction");
    if (has("derive") || has("derivation") || has("rearrang") ||
        has("substitut"))
        tags.push_back("Formula Derivation");
    return tags;
}

struct CapabilityScore {
    std::string capability;
    double mean_soft = 0.0;  // arithmetic mean of member actions' c_soft
    long long n_actions = 0;
};

/// Groups soft-estimated actions by capability. Multi-tagged actions
/// contribute to every matching group; untagged ones go to Unclassified.
/// Output follows the set's order (then Unclassified), skipping empty
/// groups, and is invariant to input permutation.
inline std::vector<CapabilityScore> capability_report(
    const std::vector<std::pair<AtomicStep, double>>& actions,
    const StepTagger& tagger,
    const CapabilitySet& set = default_capability_set()) {
    validate_capability_set(set);
    if (!tagger) throw DomainError("capability_report needs a tagger");
    std::map<std::string, std::pair<long double, long long>> groups;
    std::set<std::string> known(set.names.begin(), set.names.end());
    for (const auto& [step, c_soft] : actions) {
        validate_step(step);
        if (!(c_soft >= 0.0) || !(c_soft <= 1.0))
            throw DomainError("c_soft must lie in [0, 1]");
        std::vector<std::string> tags = tagger(step);
        std::set<std::string> unique(tags.begin(), tags.end());
        if (unique.empty()) unique.insert(kUnclassified);
        for (const std::string& tag : unique) {
            if (tag != kUnclassified && !known.count(tag))
                throw DomainError("tagger produced unknown capability: " +
                                  tag);
            auto& [sum, n] = groups[tag];
            sum += c_soft;
            ++n;
        }
    }
    std::vector<CapabilityScore> out;
    std::vector<std::string> order = set.names;
    order.push_back(kUnclassified);
    for (const std::string& name : order) {
        auto it = groups.find(name);
        if (it == groups.end()) continue;
        const auto& [sum, n] = it->second;
        out.push_back({name, static_cast<double>(sum / n), n});
    }
    return out;
}

inline Json capability_report_json(const std::vector<CapabilityScore>& rows) {
    Json j = Json::array();
    for (const CapabilityScore& r : rows) {
        Json row;
        row["capability"] = r.capability;
        row["score"] = r.mean_soft;
        row["n_actions"] = r.n_actions;
        j.push_back(std::move(row));
    }
    return j;
}

namespace detail {

inline std::string format_fixed(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    return buf;
}

inline std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

}  // namespace detail

inline std::string capability_report_csv(
    const std::vector<CapabilityScore>& rows) {
    std::string out = "capability,score,n_actions\n";
    for (const CapabilityScore& r : rows) {
        out += detail::csv_quote(r.capability) + "," +
               detail::format_fixed(r.mean_soft) + "," +
               std::to_string(r.n_actions) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// BCE as a reward-model calibration metric.
// ---------------------------------------------------------------------------

inline constexpr double kBceEpsilon = 1e-12;

struct BceResult {
    double total = 0.0;  // summed loss (paper's form, negated)
    double mean = 0.0;   // per-sample mean, corpus-size independent
    long long n = 0;
};

/// Scores each sample and accumulates binary cross-entropy, clamping only
/// the log arguments at epsilon. Reward-model errors propagate.
inline BceResult prm_bce(const std::vector<PrmSample>& samples,
                         PrmScorer& prm) {
    if (samples.empty())
        throw DomainError("BCE needs at least one sample");
    long double total = 0.0L;
    for (const PrmSample& s : samples) {
        validate_prm_sample(s);
        const double p = score_step(prm, s.question, s.history, s.candidate);
        const double arg = s.label == 1 ? p : 1.0 - p;
        total += -std::log(std::max(arg, kBceEpsilon));
    }
    BceResult out;
    out.n = static_cast<long long>(samples.size());
    out.total = static_cast<double>(total);
    out.mean = static_cast<double>(total / samples.size());
    return out;
}

// ---------------------------------------------------------------------------
// Test-time scaling sweep.
// ---------------------------------------------------------------------------

struct SweepConfig {
    std::string strategy = "best_of_n";  // quick | greedy | beam | best_of_n
    AggregationMode mode = AggregationMode::WorstAction;
    SearchBudget budget;  // candidates_per_expansion overridden per cell
    SamplingParams params;
    SearchOptions opts;
};

struct SweepCell {
    int candidates = 0;
    long long problems = 0;
    long long solved = 0;
    long long failures = 0;  // per-problem errors; counted as unsolved
    double accuracy = 0.0;   // solved / problems
    double mean_prm_calls = 0.0;
    double mean_policy_calls = 0.0;
};

/// One strategy run per (candidate count, problem), graded against the gold
/// answer. Per-problem failures are recorded and the sweep continues. The
/// per-problem seed mixes the base seed, the cell's candidate count, and the
/// problem id, so cells are mutually independent and runs reproducible.
inline std::vector<SweepCell> scaling_sweep(
    const std::vector<Problem>& problems, StepPolicy& policy, PrmScorer& prm,
    const std::vector<int>& candidate_counts, const SweepConfig& config) {
    if (problems.empty()) throw DomainError("sweep needs problems");
    if (config.strategy != "quick" && config.strategy != "greedy" &&
        config.strategy != "beam" && config.strategy != "best_of_n")
        throw DomainError("unknown sweep strategy: " + config.strategy);
    if (candidate_counts.empty())
        throw DomainError("sweep needs candidate counts");
    for (size_t i = 0; i < candidate_counts.size(); ++i) {
        if (candidate_counts[i] < 1)
            throw DomainError("candidate counts must be positive");
        if (i > 0 && candidate_counts[i] <= candidate_counts[i - 1])
            throw DomainError("candidate counts must be strictly increasing");
    }
    std::vector<SweepCell> cells;
    for (const int c : candidate_counts) {
        SweepCell cell;
        cell.candidates = c;
        long long prm_calls = 0, policy_calls = 0;
        for (const Problem& problem : problems) {
            SearchBudget budget = config.budget;
            budget.candidates_per_expansion = c;
            budget.beam_width = std::min(budget.beam_width, c);
            budget.seed = mix_seed(
                mix_seed(config.budget.seed, static_cast<uint64_t>(c)),
                fnv1a(problem.id));
            ++cell.problems;
            try {
                if (!problem.gold_answer)
                    throw MissingGoldAnswer("cannot grade \"" + problem.id +
                                            "\" without a gold answer");
                std::optional<std::string> answer;
                SearchStats stats;
                if (config.strategy == "quick") {
                    Rollout r = quick_think(problem, policy, config.params,
                                            budget, config.opts, &stats);
                    answer = r.final_answer;
                } else if (config.strategy == "greedy") {
                    SearchResult r =
                        greedy_search(problem, policy, prm, config.params,
                                      budget, config.opts);
                    answer = r.best.final_answer;
                    stats = r.stats;
                } else if (config.strategy == "beam") {
                    SearchResult r =
                        beam_search(problem, policy, prm, config.params,
                                    budget, config.opts);
                    answer = r.best.final_answer;
                    stats = r.stats;
                } else {  // "best_of_n", validated above
                    SearchResult r =
                        best_of_n(problem, policy, prm, config.params, budget,
                                  config.mode, config.opts);
                    answer = r.best.final_answer;
                    stats = r.stats;
                }
                prm_calls += stats.prm_calls;
                policy_calls += stats.policy_calls;
                if (answer && grade_answer(*answer, *problem.gold_answer))
                    ++cell.solved;
            } catch (const Error&) {
                ++cell.failures;
            }
        }
        cell.accuracy =
            static_cast<double>(cell.solved) / static_cast<double>(cell.problems);
        cell.mean_prm_calls = static_cast<double>(prm_calls) /
                              static_cast<double>(cell.problems);
        cell.mean_policy_calls = static_cast<double>(policy_calls) /
                                 static_cast<double>(cell.problems);
        cells.push_back(cell);
    }
    return cells;
}

/// Columns follow the sweep table contract; the two call columns carry
/// per-problem means.
inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
    std::string out = "candidates,accuracy,prm_calls,policy_calls\n";
    for (const SweepCell& c : cells) {
        out += std::to_string(c.candidates) + "," +
               detail::format_fixed(c.accuracy) + "," +
               detail::format_fixed(c.mean_prm_calls) + "," +
               detail::format_fixed(c.mean_policy_calls) + "\n";
    }
    return out;
}

inline Json sweep_cell_to_json(const SweepCell& c) {
    Json j;
    j["candidates"] = c.candidates;
    j["problems"] = c.problems;
    j["solved"] = c.solved;
    j["failures"] = c.failures;
    j["accuracy"] = c.accuracy;
    j["mean_prm_calls"] = c.mean_prm_calls;
    j["mean_policy_calls"] = c.mean_policy_calls;
    return j;
}

}  // namespace stepwise
