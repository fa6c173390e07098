// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stepwise/errors.hpp"
#include "stepwise/text.hpp"

namespace stepwise {

/// Reserved boundary between serialized reasoning steps. Step text must never
/// contain it; the scoring serializer re-splits on it and verifies the
/// round-trip (see reward.hpp).
inline constexpr const char* kStepSeparator = "\n\n\n\n\n";

struct Problem {
    std::string id;
    std::string question;
    std::optional<std::string> image_ref;  // opaque locator; never decoded
    std::optional<std::string> caption;
    std::optional<std::string> gold_answer;
    std::string source_tag;  // dataset of origin
};

inline void validate_problem(const Problem& p) {
    if (p.id.empty()) throw DomainError("problem id must be non-empty");
    if (p.question.empty())
        throw DomainError("problem question must be non-empty: " + p.id);
}

/// What a single reasoning step does: push the derivation forward, check
/// earlier work, or commit to an answer. Conclude is terminal.
enum class ActionKind { Continue, Verify, Conclude };

inline const char* to_string(ActionKind a) {
    switch (a) {
        case ActionKind::Continue: return "continue";
        case ActionKind::Verify: return "verify";
        case ActionKind::Conclude: return "conclude";
    }
    return "continue";
}

inline ActionKind action_from_string(const std::string& s) {
    if (s == "continue") return ActionKind::Continue;
    if (s == "verify") return ActionKind::Verify;
    if (s == "conclude") return ActionKind::Conclude;
    throw DomainError("unknown action kind: " + s);
}

/// One atomic reasoning move: a minimal text unit tagged with its role.
struct AtomicStep {
    int index = 0;  // 1-based position within its state
    std::string text;
    ActionKind action = ActionKind::Continue;
    std::optional<double> score;  // reward probability, once scored
};

inline void validate_step(const AtomicStep& s) {
    if (s.index < 1) throw DomainError("step index must be >= 1");
    if (s.text.empty()) throw DomainError("step text must be non-empty");
    if (s.text.find(kStepSeparator) != std::string::npos)
        throw DomainError("step text contains the reserved separator");
    // The negated comparisons also reject NaN.
    if (s.score && (!(*s.score >= 0.0) || !(*s.score <= 1.0)))
        throw DomainError("step score outside [0,1]");
}

/// A problem plus the ordered steps taken so far. Every construction path
/// validates, so a state with an index gap or a step after a conclusion
/// cannot exist anywhere downstream.
class ReasoningState {
  public:
    explicit ReasoningState(Problem problem) : problem_(std::move(problem)) {
        validate_problem(problem_);
    }

    ReasoningState(Problem problem, std::vector<AtomicStep> steps)
        : problem_(std::move(problem)), steps_(std::move(steps)) {
        validate_problem(problem_);
        for (size_t i = 0; i < steps_.size(); ++i) {
            validate_step(steps_[i]);
            if (steps_[i].index != static_cast<int>(i) + 1)
                throw DomainError("step indices must run 1..n consecutively");
            if (i + 1 < steps_.size() &&
                steps_[i].action == ActionKind::Conclude)
                throw DomainError("no step may follow a conclusion");
        }
    }

    /// Copy with `next` appended — the only growth path.
    ReasoningState extended(AtomicStep next) const {
        validate_step(next);
        if (concluded()) throw DomainError("cannot extend a concluded state");
        if (next.index != static_cast<int>(steps_.size()) + 1)
            throw DomainError("extension step index must equal n+1");
        ReasoningState out = *this;
        out.steps_.push_back(std::move(next));
        return out;
    }

    /// Copy with the step at `pos` rescored; structure is untouched.
    ReasoningState with_score(size_t pos, double score) const {
        if (pos >= steps_.size()) throw DomainError("score position out of range");
        ReasoningState out = *this;
        out.steps_[pos].score = score;
        validate_step(out.steps_[pos]);
        return out;
    }

    const Problem& problem() const { return problem_; }
    const std::vector<AtomicStep>& steps() const { return steps_; }
    size_t depth() const { return steps_.size(); }
    bool concluded() const {
        return !steps_.empty() && steps_.back().action == ActionKind::Conclude;
    }

  private:
    Problem problem_;
    std::vector<AtomicStep> steps_;
};

enum class Termination { Concluded, BudgetExhausted, BackendError };

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::Concluded: return "concluded";
        case Termination::BudgetExhausted: return "budget_exhausted";
        case Termination::BackendError: return "backend_error";
    }
    return "budget_exhausted";
}

inline Termination termination_from_string(const std::string& s) {
    if (s == "concluded") return Termination::Concluded;
    if (s == "budget_exhausted") return Termination::BudgetExhausted;
    if (s == "backend_error") return Termination::BackendError;
    throw DomainError("unknown termination: " + s);
}

/// A finished (or abandoned) reasoning trajectory.
struct Rollout {
    ReasoningState state;
    std::optional<std::string> final_answer;  // canonical form
    std::optional<double> aggregate_score;
    Termination terminated = Termination::BudgetExhausted;
};

inline void validate_rollout(const Rollout& r) {
    if (r.terminated == Termination::Concluded && !r.final_answer)
        throw DomainError("concluded rollout must carry a final answer");
    if (r.aggregate_score) {
        if (!(*r.aggregate_score >= 0.0) || !(*r.aggregate_score <= 1.0))
            throw DomainError("aggregate score outside [0,1]");
        for (const auto& s : r.state.steps())
            if (!s.score)
                throw DomainError(
                    "aggregate score requires every step to be scored");
    }
}

inline Rollout make_rollout(
    ReasoningState state, Termination terminated,
    std::optional<std::string> final_answer = std::nullopt,
    std::optional<double> aggregate_score = std::nullopt) {
    Rollout r{std::move(state), std::move(final_answer),
              std::move(aggregate_score), terminated};
    validate_rollout(r);
    return r;
}

/// Exploration limits for one search invocation: T steps deep, C candidates
/// per expansion, B beams, and the seed every random draw derives from.
struct SearchBudget {
    int max_steps = 20;
    int candidates_per_expansion = 3;
    int beam_width = 2;
    uint64_t seed = 0;
};

/// Base sanity checks; with `for_beam` additionally requires B <= C, since a
/// beam kept wider than one expansion round's candidate count can never fill.
/// The beam strategy itself tolerates any B >= 1 (extra width just leaves the
/// beam partially filled), so only user-facing entry points pass `for_beam`.
inline void validate_budget(const SearchBudget& b, bool for_beam = false) {
    if (b.max_steps < 1) throw DomainError("max_steps must be >= 1");
    if (b.candidates_per_expansion < 1)
        throw DomainError("candidates_per_expansion must be >= 1");
    if (b.beam_width < 1) throw DomainError("beam_width must be >= 1");
    if (for_beam && b.beam_width > b.candidates_per_expansion)
        throw DomainError("beam width must not exceed candidates per expansion");
}

inline const std::vector<std::string>& default_answer_markers() {
    static const std::vector<std::string> markers = {"answer:",
                                                     "the final answer is"};
    return markers;
}

/// Payload after the LAST occurrence of any marker (case-insensitive),
/// trimmed of surrounding quotes and terminal periods. Absent when no marker
/// occurs. An empty payload is still "present": a conclusion marker must not
/// be silently reinterpreted as an ordinary step.
inline std::optional<std::string> extract_final_answer(
    const std::string& text,
    const std::vector<std::string>& markers = default_answer_markers()) {
    std::optional<size_t> payload_start;
    for (const auto& m : markers) {
        const size_t hit = rfind_ci(text, m);
        if (hit == std::string::npos) continue;
        const size_t start = hit + m.size();
        if (!payload_start || start > *payload_start) payload_start = start;
    }
    if (!payload_start) return std::nullopt;
    return strip_decoration(text.substr(*payload_start));
}

}  // namespace stepwise
