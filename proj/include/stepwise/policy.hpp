// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/errors.hpp"
#include "stepwise/rng.hpp"
#include "stepwise/text.hpp"

namespace stepwise {

struct SamplingParams {
    double temperature = 1.0;
    double top_p = 0.9;
    int top_k = 0;  // 0 = disabled
    int max_output_tokens = 4096;
};

inline void validate_sampling(const SamplingParams& p) {
    if (!(p.temperature >= 0.0))
        throw DomainError("temperature must be >= 0");
    if (!(p.top_p > 0.0) || !(p.top_p <= 1.0))
        throw DomainError("top_p must lie in (0,1]");
    if (p.top_k < 0) throw DomainError("top_k must be >= 0");
    if (p.max_output_tokens < 1)
        throw DomainError("max_output_tokens must be >= 1");
}

/// Phrase tables driving step classification. Detection is heuristic by
/// design — the generating model chooses its own action and we recover it
/// from surface text — so the tables are configuration, not code.
struct ActionPhrases {
    std::vector<std::string> conclude_markers = default_answer_markers();
    std::vector<std::string> conclude_tags = {"[conclude]"};
    std::vector<std::string> verify_phrases = {"verify", "double-check"};
};

/// Conclude if an answer marker or conclude tag is present, else Verify on a
/// verification phrase, else Continue. Case-insensitive, deterministic.
inline ActionKind classify_action(const std::string& step_text,
                                  const ActionPhrases& phrases = {}) {
    if (step_text.empty()) throw DomainError("cannot classify empty text");
    if (extract_final_answer(step_text, phrases.conclude_markers))
        return ActionKind::Conclude;
    for (const auto& tag : phrases.conclude_tags)
        if (contains_ci(step_text, tag)) return ActionKind::Conclude;
    for (const auto& phrase : phrases.verify_phrases)
        if (contains_ci(step_text, phrase)) return ActionKind::Verify;
    return ActionKind::Continue;
}

/// Abstract step generator. Implementations must be safe to call from many
/// threads at once; `seed` makes deterministic backends reproducible and is
/// ignored by backends whose randomness lives server-side.
class StepPolicy {
  public:
    virtual ~StepPolicy() = default;

    /// One candidate next step for `slot` (0-based within an expansion).
    virtual std::string sample_slot(const ReasoningState& state, int slot,
                                    const SamplingParams& params,
                                    const std::string& template_id,
                                    uint64_t seed) = 0;

    /// n candidates in slot order. The default loops sample_slot; remote
    /// backends override to batch or parallelize the round trip.
    virtual std::vector<std::string> sample_steps(
        const ReasoningState& state, int n, const SamplingParams& params,
        const std::string& template_id, uint64_t seed) {
        std::vector<std::string> out;
        out.reserve(static_cast<size_t>(n));
        for (int slot = 0; slot < n; ++slot)
            out.push_back(
                sample_slot(state, slot, params, template_id, seed));
        return out;
    }

    /// One auxiliary completion for a non-search turn: captioning, rewriting
    /// a short solution, judging a rollout, corrupting a step. `payload` is
    /// the turn-specific input the template wraps.
    virtual std::string complete(const Problem& problem,
                                 const std::string& template_id,
                                 const std::string& payload,
                                 const SamplingParams& params,
                                 uint64_t seed) = 0;
};

/// Deterministic scripted backend: a pure lookup table mapping
/// (problem id, history, candidate slot) to step text, and
/// (problem id, template id, payload) to completion text. Missing entries
/// surface as BackendUnavailable, mirroring a dead remote endpoint.
class ScriptedPolicy : public StepPolicy {
  public:
    void script_step(const std::string& problem_id,
                     const std::vector<std::string>& history, int slot,
                     std::string text) {
        steps_[step_key(problem_id, history, slot)] = std::move(text);
    }

    void script_completion(const std::string& problem_id,
                           const std::string& template_id,
                           const std::string& payload, std::string text) {
        completions_[completion_key(problem_id, template_id, payload)] =
            std::move(text);
    }

    std::string sample_slot(const ReasoningState& state, int slot,
                            const SamplingParams& params,
                            const std::string& /*template_id*/,
                            uint64_t /*seed*/) override {
        validate_sampling(params);
        std::vector<std::string> history;
        for (const auto& s : state.steps()) history.push_back(s.text);
        auto it = steps_.find(step_key(state.problem().id, history, slot));
        if (it == steps_.end())
            throw BackendUnavailable(
                "no scripted step for problem \"" + state.problem().id +
                "\" at depth " + std::to_string(state.depth()) + " slot " +
                std::to_string(slot));
        return it->second;
    }

    std::string complete(const Problem& problem,
                         const std::string& template_id,
                         const std::string& payload,
                         const SamplingParams& params,
                         uint64_t /*seed*/) override {
        validate_sampling(params);
        auto it = completions_.find(
            completion_key(problem.id, template_id, payload));
        if (it == completions_.end())
            throw BackendUnavailable("no scripted completion for problem \"" +
                                     problem.id + "\" template \"" +
                                     template_id + "\"");
        return it->second;
    }

  private:
    // \x1f (unit separator) keys composite lookups; scripted fixtures do not
    // contain it.
    static std::string step_key(const std::string& id,
                                const std::vector<std::string>& history,
                                int slot) {
        return id + '\x1f' + join(history, "\x1f") + '\x1f' +
               std::to_string(slot);
    }
    static std::string completion_key(const std::string& id,
                                      const std::string& template_id,
                                      const std::string& payload) {
        return id + '\x1f' + template_id + '\x1f' + payload;
    }

    std::map<std::string, std::string> steps_;
    std::map<std::string, std::string> completions_;
};

namespace detail {

/// Backends may emit the reserved separator inside a step; squeezing newline
/// runs below five keeps the step-text invariant without dropping content.
inline std::string sanitize_step_text(std::string text) {
    text = trim(text);
    while (text.find(kStepSeparator) != std::string::npos) {
        const size_t at = text.find(kStepSeparator);
        text.erase(at, 1);  // drop one newline of the run; loop to fixpoint
    }
    return text;
}

}  // namespace detail

/// Samples `n` candidate next steps and lifts them into classified
/// AtomicSteps with index |state.steps|+1, preserving backend order. An
/// empty completion is retried once for its slot, then surfaced as
/// MalformedCompletion.
inline std::vector<AtomicStep> propose_steps(
    StepPolicy& policy, const ReasoningState& state, int n,
    const SamplingParams& params, const std::string& template_id,
    uint64_t seed, const ActionPhrases& phrases = {}) {
    if (n < 1) throw DomainError("propose_steps: n must be >= 1");
    validate_sampling(params);
    if (state.concluded())
        throw DomainError("cannot propose steps from a concluded state");

    std::vector<std::string> texts =
        policy.sample_steps(state, n, params, template_id, seed);
    if (static_cast<int>(texts.size()) != n)
        throw MalformedCompletion(
            "backend returned " + std::to_string(texts.size()) +
            " candidates, wanted " + std::to_string(n));

    std::vector<AtomicStep> out;
    out.reserve(static_cast<size_t>(n));
    for (int slot = 0; slot < n; ++slot) {
        std::string text = detail::sanitize_step_text(texts[slot]);
        if (text.empty())
            text = detail::sanitize_step_text(policy.sample_slot(
                state, slot, params, template_id,
                mix_seed(seed, 0x7265747279ull)));  // one retry, fresh seed
        if (text.empty())
            throw MalformedCompletion("empty completion at slot " +
                                      std::to_string(slot));
        AtomicStep step;
        step.index = static_cast<int>(state.depth()) + 1;
        step.text = std::move(text);
        step.action = classify_action(step.text, phrases);
        validate_step(step);
        out.push_back(std::move(step));
    }
    return out;
}

}  // namespace stepwise
