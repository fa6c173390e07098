// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/errors.hpp"
#include "stepwise/jsonl.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/rng.hpp"
#include "stepwise/text.hpp"

namespace stepwise {

// ---------------------------------------------------------------------------
// Annotated rollouts: the unit the data pipeline produces and refines.
// ---------------------------------------------------------------------------

enum class Provenance { DynamicPrompt, ShortCotAugment };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::DynamicPrompt: return "dynamic_prompt";
        case Provenance::ShortCotAugment: return "short_cot_augment";
    }
    throw DomainError("unknown provenance");
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "dynamic_prompt") return Provenance::DynamicPrompt;
    if (s == "short_cot_augment") return Provenance::ShortCotAugment;
    throw DomainError("unknown provenance: " + s);
}

struct AnnotatedRollout {
    Problem problem;
    std::string caption;  // generated (dynamic) or copied from the problem
    std::vector<AtomicStep> steps;
    std::optional<std::string> final_answer;  // canonical; present iff usable
    Provenance provenance = Provenance::DynamicPrompt;
    bool verified = false;  // set only by filter_rollout acceptance
    Termination terminated = Termination::BudgetExhausted;
};

inline void validate_annotated(const AnnotatedRollout& r) {
    validate_problem(r.problem);
    if (r.steps.empty())
        throw DomainError("annotated rollout needs at least one step");
    for (size_t i = 0; i < r.steps.size(); ++i) {
        validate_step(r.steps[i]);
        if (r.steps[i].index != static_cast<int>(i) + 1)
            throw DomainError("annotated step indices must run 1..n");
        if (r.steps[i].action == ActionKind::Conclude &&
            i + 1 != r.steps.size())
            throw DomainError("no step may follow a concluding step");
    }
    if (r.final_answer && r.final_answer->empty())
        throw DomainError("final answer must be non-empty when present");
    if (r.terminated == Termination::Concluded) {
        if (r.steps.back().action != ActionKind::Conclude)
            throw DomainError("a concluded rollout must end in a Conclude");
        if (!r.final_answer)
            throw DomainError("a concluded rollout needs a final answer");
    }
    if (r.verified && r.terminated != Termination::Concluded)
        throw DomainError("only concluded rollouts can be verified");
}

/// Question text as the reward model should see it: the rollout's caption
/// (when any) prepended on its own line.
inline std::string annotated_question(const AnnotatedRollout& r) {
    if (trim(r.caption).empty()) return r.problem.question;
    return "Caption: " + r.caption + "\n" + r.problem.question;
}

// ---------------------------------------------------------------------------
// Annotation protocol helpers.
// ---------------------------------------------------------------------------

/// Payload sent on the dedicated caption turn that opens every dynamic
/// annotation; the template keys its caption instructions off this text.
inline constexpr const char* kCaptionRequestPayload = "(awaiting caption)";

/// Running-state payload fed back to the annotator each step turn.
inline std::string annotate_history(const std::vector<AtomicStep>& steps) {
    if (steps.empty()) return "(none yet)";
    std::string out;
    for (size_t i = 0; i < steps.size(); ++i) {
        if (i) out += '\n';
        out += std::to_string(steps[i].index) + ". " + steps[i].text;
    }
    return out;
}

namespace detail {

/// Removes one trailing [continue]/[verify]/[conclude] tag. The tag, when
/// present, is authoritative; free-text classification is only a fallback.
inline std::optional<ActionKind> strip_action_tag(std::string& text) {
    const std::pair<const char*, ActionKind> tags[] = {
        {"[continue]", ActionKind::Continue},
        {"[verify]", ActionKind::Verify},
        {"[conclude]", ActionKind::Conclude},
    };
    std::string t = trim(text);
    const std::string lower = ascii_lower(t);
    for (const auto& [tag, kind] : tags) {
        const std::string lt(tag);
        if (lower.size() >= lt.size() &&
            lower.compare(lower.size() - lt.size(), lt.size(), lt) == 0) {
            text = trim(t.substr(0, t.size() - lt.size()));
            return kind;
        }
    }
    text = std::move(t);
    return std::nullopt;
}

inline std::optional<std::string> parse_caption(const std::string& reply) {
    std::string t = trim(reply);
    std::string first = t.substr(0, t.find('\n'));
    const std::string lower = ascii_lower(first);
    const std::string prefix = "caption:";
    if (lower.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
    return trim(first.substr(prefix.size()));
}

/// Splits a reply into blocks separated by lines containing only "---".
inline std::vector<std::string> split_dashed_blocks(const std::string& reply) {
    std::vector<std::string> blocks;
    std::string current;
    auto flush = [&] {
        std::string t = trim(current);
        if (!t.empty()) blocks.push_back(std::move(t));
        current.clear();
    };
    size_t start = 0;
    while (start <= reply.size()) {
        const size_t nl = reply.find('\n', start);
        std::string line = reply.substr(
            start, nl == std::string::npos ? std::string::npos : nl - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line) == "---") {
            flush();
        } else {
            current += line;
            current += '\n';
        }
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    flush();
    return blocks;
}

}  // namespace detail

/// Turns one raw annotator reply into a validated step at `index`.
inline AtomicStep parse_annotated_step(const std::string& raw, int index,
                                       const ActionPhrases& phrases = {}) {
    std::string text = detail::sanitize_step_text(raw);
    auto tagged = detail::strip_action_tag(text);
    if (text.empty())
        throw MalformedCompletion("annotator produced an empty step");
    const ActionKind action = tagged ? *tagged : classify_action(text, phrases);
    AtomicStep step{index, text, action, {}};
    validate_step(step);
    return step;
}

// ---------------------------------------------------------------------------
// Dynamic-prompting annotation: one caption turn, then one call per step,
// exploring exactly one linear path.
// ---------------------------------------------------------------------------

inline AnnotatedRollout annotate_dynamic(const Problem& problem,
                                         StepPolicy& policy,
                                         const SamplingParams& params,
                                         int max_steps, uint64_t seed = 0,
                                         const ActionPhrases& phrases = {}) {
    validate_problem(problem);
    validate_sampling(params);
    if (max_steps < 1) throw DomainError("max_steps must be at least 1");
    constexpr uint64_t kRetrySalt = 0x7265747279ull;  // "retry"

    std::string caption;
    {
        const uint64_t turn_seed = mix_seed(seed, 0);
        std::string reply = policy.complete(
            problem, "dynamic_annotate", kCaptionRequestPayload, params,
            turn_seed);
        auto parsed = detail::parse_caption(reply);
        if (!parsed) {
            reply = policy.complete(problem, "dynamic_annotate",
                                    kCaptionRequestPayload, params,
                                    mix_seed(turn_seed, kRetrySalt));
            parsed = detail::parse_caption(reply);
        }
        if (!parsed)
            throw MalformedCompletion(
                "caption turn did not produce a \"Caption:\" line");
        // The caption turn answers "<description>, or none"; the literal
        // no-figure reply must not be recorded as if it were a caption.
        if (ascii_lower(*parsed) != "none") caption = *parsed;
    }

    std::vector<AtomicStep> steps;
    for (int t = 1; t <= max_steps; ++t) {
        const uint64_t turn_seed = mix_seed(seed, static_cast<uint64_t>(t));
        const std::string payload = annotate_history(steps);
        const int index = static_cast<int>(steps.size()) + 1;
        std::string reply = policy.complete(problem, "dynamic_annotate",
                                            payload, params, turn_seed);
        AtomicStep step;
        try {
            step = parse_annotated_step(reply, index, phrases);
        } catch (const MalformedCompletion&) {
            reply = policy.complete(problem, "dynamic_annotate", payload,
                                    params, mix_seed(turn_seed, kRetrySalt));
            step = parse_annotated_step(reply, index, phrases);
        }
        steps.push_back(std::move(step));
        if (steps.back().action == ActionKind::Conclude) break;
    }

    AnnotatedRollout out;
    out.problem = problem;
    out.caption = std::move(caption);
    out.steps = std::move(steps);
    out.provenance = Provenance::DynamicPrompt;
    out.verified = false;
    out.terminated = Termination::BudgetExhausted;
    const AtomicStep& last = out.steps.back();
    if (last.action == ActionKind::Conclude) {
        auto payload = extract_final_answer(last.text, phrases.conclude_markers);
        if (payload && !payload->empty()) {
            try {
                out.final_answer = normalize_answer(*payload);
                out.terminated = Termination::Concluded;
            } catch (const EmptyAfterNormalization&) {
                // Decoration-only answers leave the rollout unconcluded.
            }
        }
    }
    validate_annotated(out);
    return out;
}

// ---------------------------------------------------------------------------
// Short-CoT augmentation: one templated call expanding a terse solution into
// delimited atomic steps.
// ---------------------------------------------------------------------------

inline AnnotatedRollout augment_short_cot(const Problem& problem,
                                          const std::string& short_cot,
                                          StepPolicy& policy,
                                          const SamplingParams& params,
                                          uint64_t seed = 0,
                                          const ActionPhrases& phrases = {}) {
    validate_problem(problem);
    validate_sampling(params);
    if (trim(short_cot).empty())
        throw DomainError("short CoT to augment must be non-empty");

    const std::string reply =
        policy.complete(problem, "augment", short_cot, params, seed);
    const std::vector<std::string> blocks = detail::split_dashed_blocks(reply);
    if (blocks.size() < 2)
        throw UnparseableAugmentation(
            "augmentation recovered " + std::to_string(blocks.size()) +
            " steps; need at least 2");

    std::vector<AtomicStep> steps;
    try {
        for (const std::string& block : blocks) {
            steps.push_back(parse_annotated_step(
                block, static_cast<int>(steps.size()) + 1, phrases));
            if (steps.back().action == ActionKind::Conclude) break;
        }
    } catch (const MalformedCompletion& e) {
        throw UnparseableAugmentation(e.what());
    }
    if (steps.size() < 2)
        throw UnparseableAugmentation(
            "augmentation concluded before any reasoning step");
    if (steps.back().action != ActionKind::Conclude) {
        if (!problem.gold_answer)
            throw UnparseableAugmentation(
                "no concluding step recovered and no gold answer to "
                "synthesize one");
        AtomicStep conclude{static_cast<int>(steps.size()) + 1,
                            "Answer: " + *problem.gold_answer,
                            ActionKind::Conclude,
                            {}};
        validate_step(conclude);
        steps.push_back(std::move(conclude));
    }
    auto payload =
        extract_final_answer(steps.back().text, phrases.conclude_markers);
    if (!payload || payload->empty())
        throw UnparseableAugmentation(
            "concluding step has no extractable answer");

    AnnotatedRollout out;
    out.problem = problem;
    out.caption = problem.caption.value_or("");
    out.steps = std::move(steps);
    out.final_answer = normalize_answer(*payload);
    out.provenance = Provenance::ShortCotAugment;
    out.verified = false;
    out.terminated = Termination::Concluded;
    validate_annotated(out);
    return out;
}

// ---------------------------------------------------------------------------
// Answer double-check filtering.
// ---------------------------------------------------------------------------

using AnswerGrader =
    std::function<bool(const std::string& final_answer,
                       const std::string& gold_answer)>;

struct FilterVerdict {
    bool accepted = false;
    std::string reason;
};

/// Transcript handed to the judge backend: the numbered steps plus both
/// answers, so approval is auditable from the payload alone.
inline std::string filter_payload(const AnnotatedRollout& r) {
    std::string out = annotate_history(r.steps);
    out += "\nFinal answer: " + r.final_answer.value_or("(none)");
    out += "\nExpected answer: " + r.problem.gold_answer.value_or("(none)");
    return out;
}

/// Accepts iff the grader matches the gold answer and, when a judge backend
/// is supplied, the judge approves. Sets rollout.verified accordingly.
inline FilterVerdict filter_rollout(AnnotatedRollout& rollout,
                                    const AnswerGrader& grader,
                                    StepPolicy* judge = nullptr,
                                    const SamplingParams& judge_params = {},
                                    uint64_t seed = 0) {
    if (!grader) throw DomainError("filter_rollout needs a grader");
    if (!rollout.problem.gold_answer)
        throw MissingGoldAnswer("cannot filter \"" + rollout.problem.id +
                                "\": problem has no gold answer");
    rollout.verified = false;
    if (!rollout.final_answer ||
        rollout.terminated != Termination::Concluded)
        return {false, "not-concluded"};
    if (!grader(*rollout.final_answer, *rollout.problem.gold_answer))
        return {false, "answer-mismatch"};
    if (judge) {
        const std::string reply =
            judge->complete(rollout.problem, "filter", filter_payload(rollout),
                            judge_params, seed);
        const std::string verdict = trim(reply);
        const std::string lower = ascii_lower(verdict);
        if (lower.compare(0, 7, "approve") == 0) {
            // fall through to acceptance
        } else if (lower.compare(0, 6, "reject") == 0) {
            return {false, verdict};
        } else {
            throw MalformedCompletion(
                "judge reply is neither APPROVE nor REJECT: " + verdict);
        }
    }
    rollout.verified = true;
    return {true, "accepted"};
}

// ---------------------------------------------------------------------------
// Progressive masking into SFT records.
// ---------------------------------------------------------------------------

struct SftRecord {
    std::string problem_ref;
    std::vector<AtomicStep> context;  // steps 1..t-1, possibly empty
    std::string target;               // step t text, verbatim
    int turn_index = 1;               // t, 1-based
};

inline void validate_sft_record(const SftRecord& r) {
    if (r.problem_ref.empty())
        throw DomainError("sft record needs a problem reference");
    if (r.turn_index < 1) throw DomainError("turn_index must be at least 1");
    if (static_cast<int>(r.context.size()) != r.turn_index - 1)
        throw DomainError("context length must equal turn_index - 1");
    for (size_t i = 0; i < r.context.size(); ++i) {
        validate_step(r.context[i]);
        if (r.context[i].index != static_cast<int>(i) + 1)
            throw DomainError("context step indices must run 1..t-1");
    }
    if (trim(r.target).empty())
        throw DomainError("sft target must be non-empty");
}

/// One record per step: record t masks everything from step t on and keeps
/// steps 1..t-1 as context.
inline std::vector<SftRecord> mask_to_sft(const AnnotatedRollout& rollout) {
    if (!rollout.verified)
        throw UnverifiedRollout("only verified rollouts may be masked; \"" +
                                rollout.problem.id + "\" is not");
    std::vector<SftRecord> out;
    out.reserve(rollout.steps.size());
    for (size_t t = 0; t < rollout.steps.size(); ++t) {
        SftRecord rec;
        rec.problem_ref = rollout.problem.id;
        rec.context.assign(rollout.steps.begin(), rollout.steps.begin() + t);
        rec.target = rollout.steps[t].text;
        rec.turn_index = static_cast<int>(t) + 1;
        validate_sft_record(rec);
        out.push_back(std::move(rec));
    }
    return out;
}

/// Inverse of mask_to_sft: folds targets over contexts back into the step
/// texts, checking the records are mutually consistent prefixes.
inline std::vector<std::string> replay_sft(std::vector<SftRecord> records) {
    if (records.empty())
        throw DataError("cannot replay an empty sft record list");
    std::sort(records.begin(), records.end(),
              [](const SftRecord& a, const SftRecord& b) {
                  return a.turn_index < b.turn_index;
              });
    std::vector<std::string> targets;
    for (size_t t = 0; t < records.size(); ++t) {
        const SftRecord& rec = records[t];
        if (rec.problem_ref != records[0].problem_ref)
            throw DataError("sft records mix problems");
        if (rec.turn_index != static_cast<int>(t) + 1)
            throw DataError("sft records are not a contiguous turn range");
        if (rec.context.size() != t)
            throw DataError("context length must equal turn_index - 1");
        for (size_t i = 0; i < t; ++i)
            if (rec.context[i].text != targets[i])
                throw DataError(
                    "sft record context disagrees with earlier targets");
        targets.push_back(rec.target);
    }
    return targets;
}

// ---------------------------------------------------------------------------
// Positive/negative pair generation for reward-model training.
// ---------------------------------------------------------------------------

struct PrmSample {
    std::string question;
    std::vector<AtomicStep> history;  // steps 1..t-1
    AtomicStep candidate;             // step t (possibly mutated)
    int label = 1;                    // 1 = on-path, 0 = corrupted
    std::optional<std::string> mutation_note;
};

inline void validate_prm_sample(const PrmSample& s) {
    if (trim(s.question).empty())
        throw DomainError("prm sample needs a question");
    for (size_t i = 0; i < s.history.size(); ++i) {
        validate_step(s.history[i]);
        if (s.history[i].index != static_cast<int>(i) + 1)
            throw DomainError("prm sample history indices must run 1..t-1");
    }
    validate_step(s.candidate);
    if (s.candidate.index != static_cast<int>(s.history.size()) + 1)
        throw DomainError("prm sample candidate must extend its history");
    if (s.label != 0 && s.label != 1)
        throw DomainError("prm sample label must be 0 or 1");
    if (s.label == 0 && (!s.mutation_note || s.mutation_note->empty()))
        throw DomainError("negative samples must carry a mutation note");
    if (s.label == 1 && s.mutation_note)
        throw DomainError("positive samples must not carry a mutation note");
}

struct Mutation {
    AtomicStep step;
    std::string note;
};

class StepMutator {
  public:
    virtual ~StepMutator() = default;
    /// Returns a corrupted variant of the step, or nullopt when the step
    /// offers nothing to corrupt.
    virtual std::optional<Mutation> mutate(const Problem& problem,
                                           const AtomicStep& step,
                                           uint64_t seed) = 0;
};

/// Deterministic rule-based corruption: last-digit flip, else operator
/// swap, else adjacent-word transposition.
class RuleMutator : public StepMutator {
  public:
    std::optional<Mutation> mutate(const Problem&, const AtomicStep& step,
                                   uint64_t) override {
        std::string text = step.text;
        for (size_t i = text.size(); i-- > 0;) {
            const unsigned char c =
                static_cast<unsigned char>(text[i]);
            if (c >= '0' && c <= '9') {
                text[i] = static_cast<char>('0' + (c - '0' + 1) % 10);
                return Mutation{{step.index, text, step.action, {}},
                                "digit-flip"};
            }
        }
        static const std::pair<char, char> kSwaps[] = {
            {'+', '-'}, {'-', '+'}, {'*', '/'}, {'/', '*'}};
        for (size_t i = text.size(); i-- > 0;) {
            for (const auto& [from, to] : kSwaps) {
                if (text[i] == from) {
                    text[i] = to;
                    return Mutation{{step.index, text, step.action, {}},
                                    "operator-swap"};
                }
            }
        }
        const std::vector<std::string> words = split_on(text, " ");
        for (size_t i = 0; i + 1 < words.size(); ++i) {
            if (!is_alpha_word(words[i]) || !is_alpha_word(words[i + 1]) ||
                words[i] == words[i + 1])
                continue;
            std::vector<std::string> swapped = words;
            std::swap(swapped[i], swapped[i + 1]);
            return Mutation{
                {step.index, join(swapped, " "), step.action, {}},
                "word-swap"};
        }
        return std::nullopt;
    }

  private:
    static bool is_alpha_word(const std::string& w) {
        if (w.empty()) return false;
        for (const char c : w)
            if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')))
                return false;
        return true;
    }
};

/// Production-grade corruption: asks a backend to rewrite the step with a
/// subtle error via the "mutate" template.
class TemplateMutator : public StepMutator {
  public:
    TemplateMutator(StepPolicy& policy, SamplingParams params,
                    std::string template_id = "mutate")
        : policy_(&policy),
          params_(std::move(params)),
          template_id_(std::move(template_id)) {}

    std::optional<Mutation> mutate(const Problem& problem,
                                   const AtomicStep& step,
                                   uint64_t seed) override {
        const std::string reply = policy_->complete(problem, template_id_,
                                                    step.text, params_, seed);
        std::string text = detail::sanitize_step_text(reply);
        if (text.empty() || text == step.text) return std::nullopt;
        return Mutation{{step.index, std::move(text), step.action, {}},
                        "model-rewrite"};
    }

  private:
    StepPolicy* policy_;
    SamplingParams params_;
    std::string template_id_;
};

/// For each step t: a label-1 sample with the step verbatim and, when the
/// mutator yields a usable corruption, a label-0 sample over the identical
/// history. A failed mutation forfeits the negative, never the positive.
inline std::vector<PrmSample> make_prm_pairs(const AnnotatedRollout& rollout,
                                             StepMutator& mutator,
                                             uint64_t seed = 0) {
    if (!rollout.verified)
        throw UnverifiedRollout(
            "only verified rollouts may generate reward pairs; \"" +
            rollout.problem.id + "\" is not");
    std::vector<PrmSample> out;
    const std::string question = annotated_question(rollout);
    std::vector<AtomicStep> history;
    for (size_t t = 0; t < rollout.steps.size(); ++t) {
        const AtomicStep& step = rollout.steps[t];
        PrmSample positive{question, history, step, 1, {}};
        positive.candidate.score = std::nullopt;
        validate_prm_sample(positive);
        out.push_back(std::move(positive));
        try {
            auto mut = mutator.mutate(rollout.problem, step,
                                      mix_seed(seed, t));
            if (mut && !mut->note.empty()) {
                mut->step.text = detail::sanitize_step_text(mut->step.text);
                mut->step.index = step.index;
                mut->step.score = std::nullopt;
                if (!mut->step.text.empty() && mut->step.text != step.text) {
                    PrmSample negative{question, history, mut->step, 0,
                                       mut->note};
                    validate_prm_sample(negative);
                    out.push_back(std::move(negative));
                }
            }
        } catch (const Error&) {
            // Backend or domain failure while mutating: skip the negative.
        }
        history.push_back(step);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSONL schemas.
// ---------------------------------------------------------------------------

inline Json annotated_to_json(const AnnotatedRollout& r) {
    validate_annotated(r);
    Json j;
    j["problem"] = problem_to_json(r.problem);
    j["caption"] = r.caption;
    Json steps = Json::array();
    for (const AtomicStep& s : r.steps) steps.push_back(step_to_json(s));
    j["steps"] = std::move(steps);
    if (r.final_answer) j["final_answer"] = *r.final_answer;
    j["provenance"] = to_string(r.provenance);
    j["verified"] = r.verified;
    j["terminated"] = to_string(r.terminated);
    return j;
}

inline AnnotatedRollout annotated_from_json(const Json& j) {
    detail::reject_unknown_keys(j, {"problem", "caption", "steps",
                                    "final_answer", "provenance", "verified",
                                    "terminated"},
                                "annotated rollout");
    AnnotatedRollout r;
    if (!j.contains("problem"))
        throw DataError("annotated rollout missing \"problem\"");
    r.problem = problem_from_json(j.at("problem"));
    r.caption =
        detail::optional_string(j, "caption", "annotated rollout")
            .value_or("");
    if (!j.contains("steps") || !j.at("steps").is_array())
        throw DataError("annotated rollout needs a \"steps\" array");
    for (const Json& s : j.at("steps")) r.steps.push_back(step_from_json(s));
    r.final_answer =
        detail::optional_string(j, "final_answer", "annotated rollout");
    r.provenance = provenance_from_string(
        detail::require_string(j, "provenance", "annotated rollout"));
    if (!j.contains("verified") || !j.at("verified").is_boolean())
        throw DataError("annotated rollout needs a boolean \"verified\"");
    r.verified = j.at("verified").get<bool>();
    r.terminated = termination_from_string(
        detail::require_string(j, "terminated", "annotated rollout"));
    validate_annotated(r);
    return r;
}

inline Json sft_record_to_json(const SftRecord& r) {
    validate_sft_record(r);
    Json j;
    j["problem_ref"] = r.problem_ref;
    Json ctx = Json::array();
    for (const AtomicStep& s : r.context) ctx.push_back(step_to_json(s));
    j["context"] = std::move(ctx);
    j["target"] = r.target;
    j["turn_index"] = r.turn_index;
    return j;
}

inline SftRecord sft_record_from_json(const Json& j) {
    detail::reject_unknown_keys(
        j, {"problem_ref", "context", "target", "turn_index"}, "sft record");
    SftRecord r;
    r.problem_ref = detail::require_string(j, "problem_ref", "sft record");
    if (!j.contains("context") || !j.at("context").is_array())
        throw DataError("sft record needs a \"context\" array");
    for (const Json& s : j.at("context"))
        r.context.push_back(step_from_json(s));
    r.target = detail::require_string(j, "target", "sft record");
    if (!j.contains("turn_index") ||
        !j.at("turn_index").is_number_integer())
        throw DataError("sft record needs an integer \"turn_index\"");
    r.turn_index = j.at("turn_index").get<int>();
    validate_sft_record(r);
    return r;
}

inline Json prm_sample_to_json(const PrmSample& s) {
    validate_prm_sample(s);
    Json j;
    j["question"] = s.question;
    Json hist = Json::array();
    for (const AtomicStep& h : s.history) hist.push_back(step_to_json(h));
    j["history"] = std::move(hist);
    j["candidate"] = step_to_json(s.candidate);
    j["label"] = s.label;
    if (s.mutation_note) j["mutation_note"] = *s.mutation_note;
    return j;
}

inline PrmSample prm_sample_from_json(const Json& j) {
    detail::reject_unknown_keys(
        j, {"question", "history", "candidate", "label", "mutation_note"},
        "prm sample");
    PrmSample s;
    s.question = detail::require_string(j, "question", "prm sample");
    if (!j.contains("history") || !j.at("history").is_array())
        throw DataError("prm sample needs a \"history\" array");
    for (const Json& h : j.at("history"))
        s.history.push_back(step_from_json(h));
    if (!j.contains("candidate"))
        throw DataError("prm sample missing \"candidate\"");
    s.candidate = step_from_json(j.at("candidate"));
    if (!j.contains("label") || !j.at("label").is_number_integer())
        throw DataError("prm sample needs an integer \"label\"");
    s.label = j.at("label").get<int>();
    s.mutation_note =
        detail::optional_string(j, "mutation_note", "prm sample");
    validate_prm_sample(s);
    return s;
}

// ---------------------------------------------------------------------------
// Annotation inputs and the pipeline manifest.
// ---------------------------------------------------------------------------

/// A problem plus, optionally, the terse solution that routes it to
/// augmentation instead of dynamic prompting.
struct AnnotateInput {
    Problem problem;
    std::optional<std::string> short_cot;
};

inline AnnotateInput annotate_input_from_json(const Json& j) {
    Json rest = j;
    AnnotateInput in;
    if (rest.contains("short_cot")) {
        in.short_cot = detail::require_string(rest, "short_cot",
                                              "annotation input");
        rest.erase("short_cot");
    }
    in.problem = problem_from_json(rest);
    return in;
}

inline std::vector<AnnotateInput> load_annotate_inputs(
    const std::string& path) {
    std::vector<AnnotateInput> out;
    std::map<std::string, bool> seen;
    for (const Json& j : read_jsonl(path)) {
        AnnotateInput in = annotate_input_from_json(j);
        if (seen.count(in.problem.id))
            throw DataError("duplicate problem id in " + path + ": " +
                            in.problem.id);
        seen[in.problem.id] = true;
        out.push_back(std::move(in));
    }
    return out;
}

/// Per-source tallies for the pipeline manifest.
struct SourceCounts {
    long long inputs = 0;
    long long concluded = 0;
    long long quarantined = 0;
    long long accepted = 0;
    long long rejected = 0;
    long long sft_records = 0;
    long long prm_samples = 0;
};

inline Json counts_to_json(const SourceCounts& c) {
    Json j;
    j["inputs"] = c.inputs;
    j["concluded"] = c.concluded;
    j["quarantined"] = c.quarantined;
    j["accepted"] = c.accepted;
    j["rejected"] = c.rejected;
    j["sft_records"] = c.sft_records;
    j["prm_samples"] = c.prm_samples;
    return j;
}

inline Json manifest_to_json(
    const std::map<std::string, SourceCounts>& by_source) {
    SourceCounts total;
    Json rows = Json::object();
    for (const auto& [tag, c] : by_source) {
        rows[tag] = counts_to_json(c);
        total.inputs += c.inputs;
        total.concluded += c.concluded;
        total.quarantined += c.quarantined;
        total.accepted += c.accepted;
        total.rejected += c.rejected;
        total.sft_records += c.sft_records;
        total.prm_samples += c.prm_samples;
    }
    Json j;
    j["by_source"] = std::move(rows);
    j["total"] = counts_to_json(total);
    return j;
}

}  // namespace stepwise
