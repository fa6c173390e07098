// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stepwise/core.hpp"
#include "stepwise/errors.hpp"

namespace stepwise {

/// Project-wide JSON alias. The ordered flavor keeps keys in insertion order,
/// which makes every serialization byte-reproducible for a given build.
using Json = nlohmann::ordered_json;

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path.string());
    out << content;
    if (!out) throw DataError("write failed: " + path.string());
}

inline Json parse_json(const std::string& text, const std::string& where) {
    Json j = Json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw DataError("invalid JSON in " + where);
    return j;
}

/// Reads one JSON object per line; blank lines are skipped. Errors carry the
/// 1-based line number so a bad record in a large file can be found.
inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::vector<Json> records;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        records.push_back(
            parse_json(line, path.string() + ":" + std::to_string(lineno)));
    }
    return records;
}

/// One compact object per line, LF-terminated.
inline void write_jsonl(const std::filesystem::path& path,
                        const std::vector<Json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    write_file(path, out);
}

// --- domain type <-> JSON -------------------------------------------------

namespace detail {

inline std::string require_string(const Json& j, const std::string& key,
                                  const std::string& where) {
    if (!j.contains(key) || !j[key].is_string())
        throw DataError("missing or non-string \"" + key + "\" in " + where);
    return j[key].get<std::string>();
}

inline std::optional<std::string> optional_string(const Json& j,
                                                  const std::string& key,
                                                  const std::string& where) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string())
        throw DataError("non-string \"" + key + "\" in " + where);
    return j[key].get<std::string>();
}

inline void reject_unknown_keys(const Json& j,
                                const std::vector<std::string>& allowed,
                                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw DataError("unexpected key \"" + it.key() + "\" in " + where);
    }
}

}  // namespace detail

inline Json problem_to_json(const Problem& p) {
    Json j;
    j["id"] = p.id;
    j["question"] = p.question;
    if (p.image_ref) j["image_ref"] = *p.image_ref;
    if (p.caption) j["caption"] = *p.caption;
    if (p.gold_answer) j["gold_answer"] = *p.gold_answer;
    j["source_tag"] = p.source_tag;
    return j;
}

inline Problem problem_from_json(const Json& j,
                                 const std::string& where = "problem") {
    if (!j.is_object()) throw DataError("problem record must be an object: " + where);
    detail::reject_unknown_keys(
        j, {"id", "question", "image_ref", "caption", "gold_answer",
            "source_tag"},
        where);
    Problem p;
    p.id = detail::require_string(j, "id", where);
    p.question = detail::require_string(j, "question", where);
    p.image_ref = detail::optional_string(j, "image_ref", where);
    p.caption = detail::optional_string(j, "caption", where);
    p.gold_answer = detail::optional_string(j, "gold_answer", where);
    p.source_tag = detail::require_string(j, "source_tag", where);
    validate_problem(p);
    return p;
}

/// Loads a problem dataset, enforcing id uniqueness within the file.
inline std::vector<Problem> load_problems(const std::filesystem::path& path) {
    std::vector<Problem> problems;
    std::vector<std::string> seen;
    size_t lineno = 0;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where =
            path.string() + ":" + std::to_string(lineno);
        Problem p = problem_from_json(parse_json(line, where), where);
        for (const auto& id : seen)
            if (id == p.id)
                throw DataError("duplicate problem id \"" + p.id + "\" at " +
                                where);
        seen.push_back(p.id);
        problems.push_back(std::move(p));
    }
    return problems;
}

inline Json step_to_json(const AtomicStep& s) {
    Json j;
    j["index"] = s.index;
    j["text"] = s.text;
    j["action"] = to_string(s.action);
    if (s.score) j["score"] = *s.score;
    return j;
}

inline AtomicStep step_from_json(const Json& j,
                                 const std::string& where = "step") {
    if (!j.is_object()) throw DataError("step record must be an object: " + where);
    detail::reject_unknown_keys(j, {"index", "text", "action", "score"}, where);
    AtomicStep s;
    if (!j.contains("index") || !j["index"].is_number_integer())
        throw DataError("missing or non-integer \"index\" in " + where);
    s.index = j["index"].get<int>();
    s.text = detail::require_string(j, "text", where);
    s.action = action_from_string(detail::require_string(j, "action", where));
    if (j.contains("score") && !j["score"].is_null()) {
        if (!j["score"].is_number())
            throw DataError("non-numeric \"score\" in " + where);
        s.score = j["score"].get<double>();
    }
    validate_step(s);
    return s;
}

inline Json rollout_to_json(const Rollout& r) {
    Json j;
    j["problem"] = problem_to_json(r.state.problem());
    Json steps = Json::array();
    for (const auto& s : r.state.steps()) steps.push_back(step_to_json(s));
    j["steps"] = std::move(steps);
    if (r.final_answer) j["final_answer"] = *r.final_answer;
    if (r.aggregate_score) j["aggregate_score"] = *r.aggregate_score;
    j["terminated"] = to_string(r.terminated);
    return j;
}

inline Rollout rollout_from_json(const Json& j,
                                 const std::string& where = "rollout") {
    if (!j.is_object())
        throw DataError("rollout record must be an object: " + where);
    detail::reject_unknown_keys(
        j, {"problem", "steps", "final_answer", "aggregate_score",
            "terminated"},
        where);
    if (!j.contains("problem") || !j.contains("steps") ||
        !j["steps"].is_array())
        throw DataError("rollout needs \"problem\" and \"steps\" in " + where);
    Problem p = problem_from_json(j["problem"], where);
    std::vector<AtomicStep> steps;
    for (const auto& sj : j["steps"]) steps.push_back(step_from_json(sj, where));
    Rollout r{ReasoningState(std::move(p), std::move(steps)),
              detail::optional_string(j, "final_answer", where), std::nullopt,
              termination_from_string(
                  detail::require_string(j, "terminated", where))};
    if (j.contains("aggregate_score") && !j["aggregate_score"].is_null()) {
        if (!j["aggregate_score"].is_number())
            throw DataError("non-numeric \"aggregate_score\" in " + where);
        r.aggregate_score = j["aggregate_score"].get<double>();
    }
    validate_rollout(r);
    return r;
}

}  // namespace stepwise
