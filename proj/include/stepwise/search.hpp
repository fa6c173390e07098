// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/errors.hpp"
#include "stepwise/jsonl.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/reward.hpp"
#include "stepwise/rng.hpp"

namespace stepwise {

struct SearchStats {
    long long policy_calls = 0;    // batched sampling round-trips issued
    long long prm_calls = 0;       // scoring attempts issued
    long long steps_generated = 0; // candidate steps produced by the policy
};

struct SearchOptions {
    std::string step_template = "slow_think";
    std::string quick_template = "quick_think";
    ActionPhrases phrases;
    bool prepend_caption = true;
    /// In-flight beam ranking over the extended path's step scores. Terminal
    /// selection is `selection`; the two coincide by default.
    AggregationMode beam_objective = AggregationMode::AverageScore;
    AggregationMode selection = AggregationMode::AverageScore;
    /// When true, a candidate whose scoring call fails is dropped and the
    /// round continues with the survivors; when false the error propagates.
    bool drop_failed_candidates = true;
};

struct SearchResult {
    Rollout best;
    std::vector<Rollout> explored;
    size_t best_index = 0;  // best == explored[best_index]
    SearchStats stats;
};

namespace detail {

inline SearchResult make_search_result(std::vector<Rollout> explored,
                                       size_t best_index, SearchStats stats) {
    if (best_index >= explored.size())
        throw DomainError("search result best_index out of range");
    SearchResult r{explored[best_index], std::move(explored), best_index,
                   stats};
    return r;
}

}  // namespace detail

/// Lifts a final state into a Rollout: a concluding step with an extractable,
/// normalizable answer yields Concluded; a conclusion whose answer cannot be
/// recovered (bare conclude tag, empty payload) is demoted to
/// BudgetExhausted — the chain ended without a usable solution, which is not
/// a transport error. The aggregate is attached whenever every step carries a
/// score.
inline Rollout conclude_rollout(ReasoningState state,
                                const SearchOptions& opts = {}) {
    std::optional<std::string> answer;
    if (state.concluded()) {
        if (auto raw = extract_final_answer(state.steps().back().text,
                                            opts.phrases.conclude_markers)) {
            try {
                answer = normalize_answer(*raw);
            } catch (const EmptyAfterNormalization&) {
            }
        }
    }
    std::optional<double> agg;
    if (state.depth() > 0) {
        bool all_scored = true;
        for (const auto& s : state.steps())
            if (!s.score) all_scored = false;
        if (all_scored) agg = aggregate_state(state, opts.selection);
    }
    if (answer)
        return make_rollout(std::move(state), Termination::Concluded,
                            std::move(answer), agg);
    return make_rollout(std::move(state), Termination::BudgetExhausted,
                        std::nullopt, agg);
}

namespace detail {

/// One single-path rollout: sample one step per round until a conclusion or
/// the step cap. Backend failures either propagate (`catch_backend` false)
/// or demote the partial trajectory to a BackendError rollout.
inline Rollout complete_rollout(const Problem& problem, StepPolicy& policy,
                                const SamplingParams& params, int max_steps,
                                uint64_t seed, const std::string& template_id,
                                SearchStats& stats, const SearchOptions& opts,
                                bool catch_backend) {
    ReasoningState state(problem);
    for (int t = 0; t < max_steps && !state.concluded(); ++t) {
        std::vector<AtomicStep> cands;
        try {
            cands = propose_steps(policy, state, 1, params, template_id,
                                  mix_seed(seed, static_cast<uint64_t>(t)),
                                  opts.phrases);
        } catch (const BackendError&) {
            if (!catch_backend) throw;
            return make_rollout(std::move(state), Termination::BackendError);
        }
        ++stats.policy_calls;
        ++stats.steps_generated;
        state = state.extended(std::move(cands[0]));
    }
    return conclude_rollout(std::move(state), opts);
}

}  // namespace detail

/// Single-path sampling with no reward model in the loop: one step per
/// round until the model concludes or the step cap is reached. Hitting the
/// cap is a normal BudgetExhausted outcome, not an error.
inline Rollout quick_think(const Problem& problem, StepPolicy& policy,
                           const SamplingParams& params,
                           const SearchBudget& budget,
                           const SearchOptions& opts = {},
                           SearchStats* stats_out = nullptr) {
    validate_budget(budget);
    SearchStats stats;
    Rollout r = detail::complete_rollout(problem, policy, params,
                                         budget.max_steps, budget.seed,
                                         opts.quick_template, stats, opts,
                                         /*catch_backend=*/false);
    if (stats_out) *stats_out = stats;
    return r;
}

/// Locally optimal stepping: each round samples C candidates, scores each,
/// and appends the argmax (ties go to the lowest candidate slot). Candidates
/// whose scoring fails are dropped; a round in which every candidate fails
/// is AllCandidatesFailed.
inline SearchResult greedy_search(const Problem& problem, StepPolicy& policy,
                                  PrmScorer& prm,
                                  const SamplingParams& params,
                                  const SearchBudget& budget,
                                  const SearchOptions& opts = {}) {
    validate_budget(budget);
    SearchStats stats;
    const std::string q = prm_question(problem, opts.prepend_caption);
    ReasoningState state(problem);
    for (int t = 0; t < budget.max_steps && !state.concluded(); ++t) {
        auto cands = propose_steps(policy, state,
                                   budget.candidates_per_expansion, params,
                                   opts.step_template,
                                   mix_seed(budget.seed, static_cast<uint64_t>(t)),
                                   opts.phrases);
        ++stats.policy_calls;
        stats.steps_generated += static_cast<long long>(cands.size());

        int best_slot = -1;
        double best_score = -1.0;
        for (size_t slot = 0; slot < cands.size(); ++slot) {
            ++stats.prm_calls;
            double p = 0.0;
            try {
                p = score_step(prm, q, state.steps(), cands[slot]);
            } catch (const BackendError&) {
                if (!opts.drop_failed_candidates) throw;
                continue;
            }
            if (p > best_score) {  // strict: ties keep the lowest slot
                best_score = p;
                best_slot = static_cast<int>(slot);
            }
        }
        if (best_slot < 0)
            throw AllCandidatesFailed(
                "every candidate failed scoring in greedy round " +
                std::to_string(t + 1));
        AtomicStep chosen = cands[static_cast<size_t>(best_slot)];
        chosen.score = best_score;
        state = state.extended(std::move(chosen));
    }
    std::vector<Rollout> explored;
    explored.push_back(conclude_rollout(std::move(state), opts));
    return detail::make_search_result(std::move(explored), 0, stats);
}

/// Width-B stepwise search. Each round expands every live beam with C
/// scored candidates, ranks all extensions by the configured objective over
/// the full path (ties resolve lexicographically by (beam, slot) via the
/// stable sort), and keeps the top B. Concluded survivors freeze into a
/// finished pool and stop consuming expansions. Selection is the argmax of
/// the terminal aggregation over answer-bearing rollouts, falling back to
/// the highest-aggregate live beam when nothing concluded.
///
/// Width is deliberately not capped to C here: B > C simply leaves the beam
/// partially filled and the search degrades gracefully (user-facing entry
/// points validate B <= C before calling).
inline SearchResult beam_search(const Problem& problem, StepPolicy& policy,
                                PrmScorer& prm, const SamplingParams& params,
                                const SearchBudget& budget,
                                const SearchOptions& opts = {}) {
    validate_budget(budget);
    SearchStats stats;
    const std::string q = prm_question(problem, opts.prepend_caption);
    std::vector<ReasoningState> live{ReasoningState(problem)};
    std::vector<ReasoningState> finished;

    for (int t = 0; t < budget.max_steps && !live.empty(); ++t) {
        struct Extension {
            ReasoningState state;
            double objective;
        };
        std::vector<Extension> extensions;
        for (size_t b = 0; b < live.size(); ++b) {
            auto cands = propose_steps(
                policy, live[b], budget.candidates_per_expansion, params,
                opts.step_template,
                mix_seed(mix_seed(budget.seed, static_cast<uint64_t>(t)), b),
                opts.phrases);
            ++stats.policy_calls;
            stats.steps_generated += static_cast<long long>(cands.size());
            for (size_t slot = 0; slot < cands.size(); ++slot) {
                ++stats.prm_calls;
                double p = 0.0;
                try {
                    p = score_step(prm, q, live[b].steps(), cands[slot]);
                } catch (const BackendError&) {
                    if (!opts.drop_failed_candidates) throw;
                    continue;
                }
                AtomicStep scored = cands[slot];
                scored.score = p;
                ReasoningState ext = live[b].extended(std::move(scored));
                const double objective =
                    aggregate_state(ext, opts.beam_objective);
                extensions.push_back({std::move(ext), objective});
            }
        }
        if (extensions.empty())
            throw AllCandidatesFailed(
                "every candidate failed scoring in beam round " +
                std::to_string(t + 1));
        std::stable_sort(extensions.begin(), extensions.end(),
                         [](const Extension& a, const Extension& b) {
                             return a.objective > b.objective;
                         });
        const size_t keep = std::min<size_t>(
            static_cast<size_t>(budget.beam_width), extensions.size());
        std::vector<ReasoningState> next_live;
        for (size_t i = 0; i < keep; ++i) {
            if (extensions[i].state.concluded())
                finished.push_back(std::move(extensions[i].state));
            else
                next_live.push_back(std::move(extensions[i].state));
        }
        live = std::move(next_live);
    }

    std::vector<Rollout> explored;
    for (auto& s : finished) explored.push_back(conclude_rollout(std::move(s), opts));
    for (auto& s : live) explored.push_back(conclude_rollout(std::move(s), opts));

    auto value = [](const Rollout& r) {
        return r.aggregate_score ? *r.aggregate_score : -1.0;
    };
    size_t best = explored.size();
    for (size_t i = 0; i < explored.size(); ++i) {
        if (!explored[i].final_answer) continue;
        if (best == explored.size() || value(explored[i]) > value(explored[best]))
            best = i;
    }
    if (best == explored.size())  // nothing concluded: best-scored live path
        for (size_t i = 0; i < explored.size(); ++i)
            if (best == explored.size() ||
                value(explored[i]) > value(explored[best]))
                best = i;
    return detail::make_search_result(std::move(explored), best, stats);
}

/// C independent single-path rollouts, every step scored after completion
/// (scoring during generation would enable early pruning at the price of
/// more calls), then argmax of the aggregate under `mode`. Ties pick the
/// lowest rollout index. Rollouts whose generation dies mid-path are kept in
/// `explored` as BackendError but never selected.
inline SearchResult best_of_n(const Problem& problem, StepPolicy& policy,
                              PrmScorer& prm, const SamplingParams& params,
                              const SearchBudget& budget, AggregationMode mode,
                              SearchOptions opts = {}) {
    validate_budget(budget);
    opts.selection = mode;
    SearchStats stats;
    const std::string q = prm_question(problem, opts.prepend_caption);
    std::vector<Rollout> explored;
    for (int r = 0; r < budget.candidates_per_expansion; ++r) {
        Rollout rollout = detail::complete_rollout(
            problem, policy, params, budget.max_steps,
            mix_seed(budget.seed, static_cast<uint64_t>(r)),
            opts.quick_template, stats, opts, /*catch_backend=*/true);
        if (rollout.terminated != Termination::BackendError &&
            rollout.state.depth() > 0) {
            ReasoningState st = rollout.state;
            bool scored_all = true;
            for (size_t i = 0; i < st.depth() && scored_all; ++i) {
                const std::vector<AtomicStep> hist(
                    st.steps().begin(),
                    st.steps().begin() + static_cast<long>(i));
                ++stats.prm_calls;
                try {
                    st = st.with_score(
                        i, score_step(prm, q, hist, st.steps()[i]));
                } catch (const BackendError&) {
                    if (!opts.drop_failed_candidates) throw;
                    scored_all = false;  // unrankable; keep it unscored
                }
            }
            if (scored_all)
                rollout = make_rollout(st, rollout.terminated,
                                       rollout.final_answer,
                                       aggregate_state(st, mode));
        }
        explored.push_back(std::move(rollout));
    }

    size_t best = explored.size();
    auto better = [&](size_t a, size_t b) {  // is a strictly better than b
        const bool sa = explored[a].aggregate_score.has_value();
        const bool sb = explored[b].aggregate_score.has_value();
        if (sa != sb) return sa;
        if (!sa) return false;  // both unscored: keep earlier
        return *explored[a].aggregate_score > *explored[b].aggregate_score;
    };
    for (size_t i = 0; i < explored.size(); ++i) {
        if (explored[i].terminated != Termination::Concluded) continue;
        if (best == explored.size() || better(i, best)) best = i;
    }
    if (best == explored.size())
        throw AllCandidatesFailed("no rollout completed with an answer");
    return detail::make_search_result(std::move(explored), best, stats);
}

/// Winner of a vote over normalized final answers, with the voters and
/// abstainers (rollouts without answers) reported. Ties between equally
/// frequent answers go to the group with the higher mean aggregate score,
/// then to the group whose first voter came earliest.
struct VoteResult {
    std::string answer;
    std::vector<size_t> winners;
    std::vector<size_t> abstained;
};

inline VoteResult majority_vote(const std::vector<Rollout>& rollouts) {
    struct Group {
        std::string key;
        std::vector<size_t> members;
        double score_sum = 0.0;
        int score_n = 0;
    };
    std::vector<Group> groups;  // insertion order == earliest first voter
    VoteResult result;
    for (size_t i = 0; i < rollouts.size(); ++i) {
        if (!rollouts[i].final_answer) {
            result.abstained.push_back(i);
            continue;
        }
        const std::string key = normalize_answer(*rollouts[i].final_answer);
        Group* group = nullptr;
        for (auto& g : groups)
            if (g.key == key) group = &g;
        if (!group) {
            groups.push_back({key, {}, 0.0, 0});
            group = &groups.back();
        }
        group->members.push_back(i);
        if (rollouts[i].aggregate_score) {
            group->score_sum += *rollouts[i].aggregate_score;
            ++group->score_n;
        }
    }
    if (groups.empty())
        throw NoAnswersAvailable("no rollout carries a final answer");

    auto mean = [](const Group& g) {
        return g.score_n ? g.score_sum / g.score_n : -1.0;
    };
    size_t best = 0;
    for (size_t gi = 1; gi < groups.size(); ++gi) {
        const Group& a = groups[gi];
        const Group& b = groups[best];
        if (a.members.size() > b.members.size() ||
            (a.members.size() == b.members.size() && mean(a) > mean(b)))
            best = gi;  // equal count and mean: keep the earlier group
    }
    result.answer = groups[best].key;
    result.winners = groups[best].members;
    return result;
}

/// One JSONL run record per problem: everything needed to audit the search
/// outcome. Deterministic field order; no wall-clock content.
inline Json search_run_record(const Problem& problem,
                              const std::string& strategy,
                              const SearchBudget& budget,
                              const SearchResult& result) {
    Json j;
    j["problem_id"] = problem.id;
    j["strategy"] = strategy;
    Json b;
    b["max_steps"] = budget.max_steps;
    b["candidates_per_expansion"] = budget.candidates_per_expansion;
    b["beam_width"] = budget.beam_width;
    b["seed"] = budget.seed;
    j["budget"] = std::move(b);
    j["answer"] = result.best.final_answer ? Json(*result.best.final_answer)
                                           : Json(nullptr);
    j["aggregate"] = result.best.aggregate_score
                         ? Json(*result.best.aggregate_score)
                         : Json(nullptr);
    j["terminated"] = to_string(result.best.terminated);
    Json scores = Json::array();
    for (const auto& s : result.best.state.steps())
        scores.push_back(s.score ? Json(*s.score) : Json(nullptr));
    j["step_scores"] = std::move(scores);
    Json steps = Json::array();
    for (const auto& s : result.best.state.steps())
        steps.push_back(step_to_json(s));
    j["steps"] = std::move(steps);
    j["explored_count"] = result.explored.size();
    Json st;
    st["policy_calls"] = result.stats.policy_calls;
    st["prm_calls"] = result.stats.prm_calls;
    st["steps_generated"] = result.stats.steps_generated;
    j["stats"] = std::move(st);
    return j;
}

}  // namespace stepwise
