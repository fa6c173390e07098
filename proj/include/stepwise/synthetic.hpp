// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/data_engine.hpp"
#include "stepwise/errors.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/reward.hpp"
#include "stepwise/rng.hpp"
#include "stepwise/text.hpp"

namespace stepwise {

/// Deterministic full b-ary reasoning tree: every node carries a seeded
/// score in [0,1], internal nodes are Continue steps, and each leaf
/// concludes with a distinct answer. The node's path is encoded in its step
/// text, so stateless policy/scorer mocks can locate themselves from the
/// text alone. Used by search benchmarks and audits; no model involved.
class ScriptedTree {
  public:
    ScriptedTree(int branching, int depth, uint64_t seed)
        : branching_(branching), depth_(depth), seed_(seed) {
        if (branching < 1 || depth < 1)
            throw DomainError("tree branching and depth must be >= 1");
    }

    int branching() const { return branching_; }
    int depth() const { return depth_; }

    double node_score(const std::vector<int>& path) const {
        check_path(path);
        uint64_t h = mix_seed(seed_, 0x74726565ull);  // distinct root salt
        for (int c : path) h = mix_seed(h, static_cast<uint64_t>(c) + 1);
        return static_cast<double>(mix_seed(h, 0x73636f7265ull) >> 11) *
               0x1.0p-53;
    }

    std::string step_text(const std::vector<int>& path) const {
        check_path(path);
        if (static_cast<int>(path.size()) == depth_)
            return "Answer: leaf-" + encode(path);
        return "branch " + encode(path) + ": push the derivation forward";
    }

    /// Canonical form of a leaf's answer.
    std::string leaf_answer(const std::vector<int>& path) const {
        check_path(path);
        return "leaf-" + encode(path);
    }

    /// Recovers a node's path from its step text.
    std::vector<int> path_of(const std::string& text) const {
        std::string enc;
        const std::string leaf_prefix = "Answer: leaf-";
        const std::string branch_prefix = "branch ";
        if (text.rfind(leaf_prefix, 0) == 0) {
            enc = text.substr(leaf_prefix.size());
        } else if (text.rfind(branch_prefix, 0) == 0) {
            const size_t colon = text.find(':', branch_prefix.size());
            if (colon == std::string::npos)
                throw BackendUnavailable("not a tree step: " + text);
            enc = text.substr(branch_prefix.size(),
                              colon - branch_prefix.size());
        } else {
            throw BackendUnavailable("not a tree step: " + text);
        }
        std::vector<int> path;
        for (const auto& part : split_on(enc, ".")) {
            if (part.empty()) throw BackendUnavailable("bad tree path: " + enc);
            path.push_back(std::stoi(part));
        }
        check_path(path);
        return path;
    }

    static std::string encode(const std::vector<int>& path) {
        std::string enc;
        for (size_t i = 0; i < path.size(); ++i) {
            if (i) enc += '.';
            enc += std::to_string(path[i]);
        }
        return enc;
    }

  private:
    void check_path(const std::vector<int>& path) const {
        if (path.empty() || static_cast<int>(path.size()) > depth_)
            throw DomainError("tree path depth out of range");
        for (int c : path)
            if (c < 0 || c >= branching_)
                throw DomainError("tree child index out of range");
    }

    int branching_;
    int depth_;
    uint64_t seed_;
};

/// Policy walking a ScriptedTree: candidate `slot` at any state is the
/// current node's slot-th child. Asking for more candidates than the tree
/// branches is a caller error surfaced as BackendUnavailable.
class TreePolicy : public StepPolicy {
  public:
    explicit TreePolicy(ScriptedTree tree) : tree_(std::move(tree)) {}

    std::string sample_slot(const ReasoningState& state, int slot,
                            const SamplingParams& params,
                            const std::string& /*template_id*/,
                            uint64_t /*seed*/) override {
        validate_sampling(params);
        if (slot < 0 || slot >= tree_.branching())
            throw BackendUnavailable("tree offers only " +
                                     std::to_string(tree_.branching()) +
                                     " children per node");
        std::vector<int> path;
        if (state.depth() > 0)
            path = tree_.path_of(state.steps().back().text);
        if (static_cast<int>(path.size()) >= tree_.depth())
            throw BackendUnavailable("tree leaf has no children");
        path.push_back(slot);
        return tree_.step_text(path);
    }

    std::string complete(const Problem&, const std::string&,
                         const std::string&, const SamplingParams&,
                         uint64_t) override {
        throw BackendUnavailable("tree policy has no auxiliary completions");
    }

  private:
    ScriptedTree tree_;
};

/// Scorer for a ScriptedTree: the probability of a candidate step is its
/// node's seeded score, located from the final serialized segment.
class TreePrm : public PrmScorer {
  public:
    explicit TreePrm(ScriptedTree tree) : tree_(std::move(tree)) {}

    double score(const std::string& serialized) override {
        auto segments = split_on(serialized, kStepSeparator);
        if (segments.size() < 2)
            throw BackendUnavailable("serialized input has no candidate");
        return tree_.node_score(tree_.path_of(segments.back()));
    }

  private:
    ScriptedTree tree_;
};

/// Policy with a known per-rollout success rate: each round it concludes
/// with probability `conclude_p`; a conclusion is the gold answer with
/// probability `success_p`, otherwise a unique wrong answer. All draws are
/// pure functions of (problem id, slot, seed), so runs reproduce exactly.
/// This is the ground-truth generator behind accuracy-vs-candidates
/// benchmarks: with an oracle scorer, best-of-C succeeds iff any rollout
/// does, i.e. with probability 1-(1-success_p)^C.
class SyntheticPolicy : public StepPolicy {
  public:
    SyntheticPolicy(double success_p, double conclude_p = 0.6)
        : success_p_(success_p), conclude_p_(conclude_p) {
        if (!(success_p >= 0.0) || !(success_p <= 1.0) ||
            !(conclude_p > 0.0) || !(conclude_p <= 1.0))
            throw DomainError("synthetic policy probabilities out of range");
    }

    std::string sample_slot(const ReasoningState& state, int slot,
                            const SamplingParams& params,
                            const std::string& /*template_id*/,
                            uint64_t seed) override {
        validate_sampling(params);
        const Problem& p = state.problem();
        if (!p.gold_answer)
            throw MissingGoldAnswer(
                "synthetic policy needs a gold answer for problem " + p.id);
        Rng rng(mix_seed(mix_seed(seed, fnv1a(p.id)),
                         static_cast<uint64_t>(slot) + 0x5349ull));
        if (rng.bernoulli(conclude_p_)) {
            if (rng.bernoulli(success_p_)) return "Answer: " + *p.gold_answer;
            return "Answer: wrong-" + std::to_string(rng.raw());
        }
        return "keep working on the derivation (tick " +
               std::to_string(rng.raw() % 997) + ")";
    }

    std::string complete(const Problem&, const std::string&,
                         const std::string&, const SamplingParams&,
                         uint64_t) override {
        throw BackendUnavailable(
            "synthetic policy has no auxiliary completions");
    }

  private:
    double success_p_;
    double conclude_p_;
};

/// Scorer that knows the gold answers: a concluding step scores 1.0 when its
/// answer matches gold and 0.0 otherwise; non-concluding steps score 1.0.
/// Keyed by the serialized question segment.
class OraclePrm : public PrmScorer {
  public:
    void add(const std::string& question_text, const std::string& gold) {
        gold_[question_text] = normalize_answer(gold);
    }

    static OraclePrm from_problems(const std::vector<Problem>& problems,
                                   bool prepend_caption = true) {
        OraclePrm oracle;
        for (const auto& p : problems) {
            if (!p.gold_answer)
                throw MissingGoldAnswer(
                    "oracle scorer needs a gold answer for problem " + p.id);
            oracle.add(prm_question(p, prepend_caption), *p.gold_answer);
        }
        return oracle;
    }

    double score(const std::string& serialized) override {
        auto segments = split_on(serialized, kStepSeparator);
        if (segments.size() < 2)
            throw BackendUnavailable("serialized input has no candidate");
        auto it = gold_.find(segments.front());
        if (it == gold_.end())
            throw BackendUnavailable("oracle scorer does not know question");
        if (auto raw = extract_final_answer(segments.back())) {
            try {
                return normalize_answer(*raw) == it->second ? 1.0 : 0.0;
            } catch (const EmptyAfterNormalization&) {
                return 0.0;
            }
        }
        return 1.0;
    }

  private:
    std::unordered_map<std::string, std::string> gold_;
};

/// Stateless pseudo-random scorer: a uniform value derived from the hash of
/// the serialized input. Deterministic, uncorrelated with correctness;
/// useful for exercising search plumbing at scale.
class HashPrm : public PrmScorer {
  public:
    double score(const std::string& serialized) override {
        return static_cast<double>(fnv1a(serialized) >> 11) * 0x1.0p-53;
    }
};

/// Deterministic stand-in for the annotation model: speaks every auxiliary
/// template the data pipeline uses (captioning, step proposal, short-CoT
/// expansion, judging, step corruption). Every reply is a pure function of
/// (problem id, turn, seed), so pipeline runs reproduce byte-for-byte.
class MockAnnotator : public StepPolicy {
  public:
    /// `working_steps` non-concluding steps precede the conclusion.
    explicit MockAnnotator(int working_steps = 2)
        : working_steps_(working_steps) {
        if (working_steps < 1)
            throw DomainError("mock annotator needs at least 1 working step");
    }

    std::string sample_slot(const ReasoningState& state, int slot,
                            const SamplingParams& params,
                            const std::string& /*template_id*/,
                            uint64_t seed) override {
        validate_sampling(params);
        return next_step(state.problem(), static_cast<int>(state.depth()),
                         mix_seed(seed, static_cast<uint64_t>(slot)));
    }

    std::string complete(const Problem& problem,
                         const std::string& template_id,
                         const std::string& payload,
                         const SamplingParams& params,
                         uint64_t seed) override {
        validate_sampling(params);
        if (template_id == "dynamic_annotate") {
            if (payload == kCaptionRequestPayload) return caption_of(problem);
            return next_step(problem, history_depth(payload), seed);
        }
        if (template_id == "augment") {
            return "Restate the terse solution as an explicit derivation "
                   "(tick " +
                   std::to_string(tick(problem, 0, seed)) +
                   ").\n---\nDouble-check the derivation against the problem "
                   "statement.\n---\nAnswer: " +
                   answer_of(problem);
        }
        if (template_id == "filter") return "APPROVE";
        if (template_id == "mutate") return "Suppose instead: " + payload;
        throw BackendUnavailable("mock annotator has no template \"" +
                                 template_id + "\"");
    }

  private:
    static std::string caption_of(const Problem& p) {
        if (!p.image_ref) return "Caption: none";
        return "Caption: the figure referenced by problem " + p.id;
    }

    static std::string answer_of(const Problem& p) {
        return p.gold_answer ? *p.gold_answer : "unknown-" + p.id;
    }

    static uint64_t tick(const Problem& p, int depth, uint64_t seed) {
        return mix_seed(mix_seed(seed, fnv1a(p.id)),
                        static_cast<uint64_t>(depth)) %
               997;
    }

    /// Number of prior steps encoded in a numbered-history payload.
    static int history_depth(const std::string& payload) {
        if (payload == "(none yet)") return 0;
        return static_cast<int>(
            std::count(payload.begin(), payload.end(), '\n')) +
               1;
    }

    std::string next_step(const Problem& p, int depth, uint64_t seed) const {
        if (depth >= working_steps_) return "Answer: " + answer_of(p);
        const std::string t = std::to_string(tick(p, depth, seed));
        if (depth % 2 == 1)
            return "Double-check the relation extracted so far (check " + t +
                   "). [verify]";
        return "Extract the key quantities and set up the relation (tick " +
               t + "). [continue]";
    }

    int working_steps_;
};

}  // namespace stepwise
