// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <list>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/errors.hpp"
#include "stepwise/text.hpp"

namespace stepwise {

/// How a chain of per-step probabilities becomes one path score: its weakest
/// action, its final action, or the mean over all actions.
enum class AggregationMode { WorstAction, LastAction, AverageScore };

/// CLI/config spelling.
inline const char* to_string(AggregationMode m) {
    switch (m) {
        case AggregationMode::WorstAction: return "min";
        case AggregationMode::LastAction: return "last";
        case AggregationMode::AverageScore: return "avg";
    }
    return "avg";
}

inline AggregationMode aggregation_from_string(const std::string& s) {
    if (s == "min") return AggregationMode::WorstAction;
    if (s == "last") return AggregationMode::LastAction;
    if (s == "avg") return AggregationMode::AverageScore;
    throw DomainError("unknown aggregation mode: " + s +
                      " (expected min, avg, or last)");
}

/// Joins question, history texts, and candidate text with the reserved
/// five-newline separator — the exact text a scoring backend consumes. After
/// joining, the result is split back and compared segment-for-segment, so a
/// successful serialization is guaranteed to round-trip byte-exactly; any
/// ambiguity (a segment containing the separator, or adjacent segments whose
/// newlines merge into one) is SeparatorCollision.
inline std::string serialize_prm_input(const std::string& question,
                                       const std::vector<AtomicStep>& history,
                                       const AtomicStep& candidate) {
    if (candidate.index != static_cast<int>(history.size()) + 1)
        throw DomainError("candidate step index must equal |history|+1");
    std::vector<std::string> segments;
    segments.reserve(history.size() + 2);
    segments.push_back(question);
    for (const auto& h : history) segments.push_back(h.text);
    segments.push_back(candidate.text);
    for (const auto& seg : segments)
        if (seg.find(kStepSeparator) != std::string::npos)
            throw SeparatorCollision(
                "segment contains the reserved separator");
    const std::string joined = join(segments, kStepSeparator);
    if (split_on(joined, kStepSeparator) != segments)
        throw SeparatorCollision(
            "segment boundaries merge with the separator");
    return joined;
}

/// The question text a scorer sees; the image caption is prepended when
/// present (the scorer is text-only) unless disabled in config.
inline std::string prm_question(const Problem& p, bool prepend_caption = true) {
    if (prepend_caption && p.caption)
        return "Caption: " + *p.caption + "\n" + p.question;
    return p.question;
}

/// Abstract correctness scorer: serialized reasoning text in, probability
/// out. Implementations must be safe for concurrent calls.
class PrmScorer {
  public:
    virtual ~PrmScorer() = default;
    virtual double score(const std::string& serialized) = 0;
};

/// Probability that `candidate` is a correct continuation of (question,
/// history), from the given backend. A reply outside [0,1] (or NaN) is
/// rejected as InvalidProbability — never clamped.
inline double score_step(PrmScorer& backend, const std::string& question,
                         const std::vector<AtomicStep>& history,
                         const AtomicStep& candidate) {
    const std::string input =
        serialize_prm_input(question, history, candidate);
    const double p = backend.score(input);
    if (!(p >= 0.0) || !(p <= 1.0))
        throw InvalidProbability("backend probability outside [0,1]: " +
                                 std::to_string(p));
    return p;
}

inline double aggregate(const std::vector<double>& scores,
                        AggregationMode mode) {
    if (scores.empty())
        throw EmptyScoreList("aggregate requires at least one score");
    for (double s : scores)
        if (!(s >= 0.0) || !(s <= 1.0))
            throw DomainError("aggregate input outside [0,1]");
    switch (mode) {
        case AggregationMode::WorstAction:
            return *std::min_element(scores.begin(), scores.end());
        case AggregationMode::LastAction:
            return scores.back();
        case AggregationMode::AverageScore: {
            double sum = 0.0;
            for (double s : scores) sum += s;
            return sum / static_cast<double>(scores.size());
        }
    }
    throw DomainError("unreachable aggregation mode");
}

/// All step scores of a state, in order; every step must already be scored.
inline std::vector<double> collect_scores(const ReasoningState& state) {
    std::vector<double> out;
    out.reserve(state.depth());
    for (const auto& s : state.steps()) {
        if (!s.score)
            throw DomainError("step " + std::to_string(s.index) +
                              " has no score");
        out.push_back(*s.score);
    }
    return out;
}

inline double aggregate_state(const ReasoningState& state,
                              AggregationMode mode) {
    return aggregate(collect_scores(state), mode);
}

/// Scores every still-unscored step of `state` in order and returns the
/// fully scored copy.
inline ReasoningState score_state(PrmScorer& backend,
                                  const ReasoningState& state,
                                  bool prepend_caption = true) {
    const std::string q = prm_question(state.problem(), prepend_caption);
    ReasoningState out = state;
    for (size_t i = 0; i < out.steps().size(); ++i) {
        if (out.steps()[i].score) continue;
        const std::vector<AtomicStep> history(out.steps().begin(),
                                              out.steps().begin() +
                                                  static_cast<long>(i));
        out = out.with_score(
            i, score_step(backend, q, history, out.steps()[i]));
    }
    return out;
}

/// Deterministic mock scorer: an explicit table from serialized input to
/// probability. A missing key is an error, never a default score.
class TablePrm : public PrmScorer {
  public:
    void set(const std::string& serialized, double p) {
        if (!(p >= 0.0) || !(p <= 1.0))
            throw DomainError("table probability outside [0,1]");
        table_[serialized] = p;
    }

    void set_for(const std::string& question,
                 const std::vector<AtomicStep>& history,
                 const AtomicStep& candidate, double p) {
        set(serialize_prm_input(question, history, candidate), p);
    }

    double score(const std::string& serialized) override {
        auto it = table_.find(serialized);
        if (it == table_.end())
            throw BackendUnavailable("no scored entry for serialized input");
        return it->second;
    }

  private:
    std::unordered_map<std::string, double> table_;
};

/// Synchronized bounded LRU in front of any scorer. Sibling candidates in a
/// beam share long prefixes, and remote scoring calls are the cost center,
/// so repeated inputs must not pay twice. The inner call runs outside the
/// lock; concurrent misses on one key may both call through (idempotent).
class CachingPrm : public PrmScorer {
  public:
    CachingPrm(PrmScorer& inner, size_t capacity)
        : inner_(inner), capacity_(capacity) {
        if (capacity_ == 0) throw DomainError("cache capacity must be >= 1");
    }

    double score(const std::string& serialized) override {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = index_.find(serialized);
            if (it != index_.end()) {
                order_.splice(order_.begin(), order_, it->second);
                ++hits_;
                return it->second->second;
            }
            ++misses_;
        }
        const double p = inner_.score(serialized);
        std::lock_guard<std::mutex> lock(mutex_);
        if (index_.find(serialized) == index_.end()) {
            order_.emplace_front(serialized, p);
            index_[serialized] = order_.begin();
            if (index_.size() > capacity_) {
                index_.erase(order_.back().first);
                order_.pop_back();
            }
        }
        return p;
    }

    size_t hits() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return hits_;
    }
    size_t misses() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return misses_;
    }

  private:
    PrmScorer& inner_;
    size_t capacity_;
    mutable std::mutex mutex_;
    std::list<std::pair<std::string, double>> order_;
    std::unordered_map<std::string,
                       std::list<std::pair<std::string, double>>::iterator>
        index_;
    size_t hits_ = 0;
    size_t misses_ = 0;
};

}  // namespace stepwise
