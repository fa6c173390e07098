// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/errors.hpp"
#include "stepwise/eval.hpp"
#include "stepwise/jsonl.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/remote.hpp"
#include "stepwise/reward.hpp"
#include "stepwise/synthetic.hpp"
#include "stepwise/templates.hpp"

namespace stepwise {

// ---------------------------------------------------------------------------
// Resolved run configuration. The file format is JSON: one human-editable
// structured file; secrets never appear in it and are pulled from the
// environment by the variable names it declares.
// ---------------------------------------------------------------------------

enum class PolicyKind { RemoteChat, Synthetic, MockAnnotator };
enum class PrmKind { Remote, Oracle, Hash };

struct PolicyConfig {
    PolicyKind kind = PolicyKind::Synthetic;
    // remote_chat
    std::string endpoint;
    std::string path = "/v1/chat/completions";
    std::string model = "default";
    std::string auth_env = "STEPWISE_API_TOKEN";
    std::string api_token;  // resolved from the environment, never the file
    bool send_top_k = false;
    bool batch_completions = false;
    int max_in_flight = 4;
    int timeout_sec = 120;
    int retry_attempts = 3;
    int retry_base_delay_ms = 500;
    // synthetic
    double success_rate = 0.3;
    double conclude_rate = 0.6;
    // annotator
    int working_steps = 2;
};

struct PrmConfig {
    PrmKind kind = PrmKind::Oracle;
    std::string endpoint;
    std::string path = "/score";
    std::string auth_env = "STEPWISE_API_TOKEN";
    std::string api_token;
    int max_in_flight = 4;
    int timeout_sec = 120;
    int retry_attempts = 3;
    int retry_base_delay_ms = 500;
};

struct SearchConfig {
    std::string strategy = "beam";  // quick | greedy | beam | best_of_n | majority
    SearchBudget budget;            // T=20, C=3, B=2 defaults
    AggregationMode aggregation = AggregationMode::WorstAction;
    std::string preset = "slow";    // direct | cot | quick | slow
};

/// The four inference settings, as sampling parameters.
struct PresetTable {
    SamplingParams direct{0.0, 1.0, 0, 4096};
    SamplingParams cot{0.0, 1.0, 0, 4096};
    SamplingParams quick{0.5, 0.9, 10, 4096};
    SamplingParams slow{1.0, 0.9, 10, 4096};
};

struct DataPaths {
    std::string problems = "data/sample_problems.jsonl";
    std::string rollouts;     // annotated rollouts consumed downstream
    std::string prm_samples;  // labeled step samples for calibration
};

struct RunConfig {
    uint64_t seed = 0;
    int workers = 2;
    std::string template_dir = "templates";
    std::string output_dir = "runs";
    PolicyConfig policy;
    PrmConfig prm;
    SearchConfig search;
    PresetTable presets;
    DataPaths data;
    std::vector<int> sweep_counts = {1, 2, 4, 8};
    int soft_rounds = kDefaultSoftRounds;
    bool filter_judge = false;  // route filtering through the policy judge
};

inline const SamplingParams& preset_params(const RunConfig& config,
                                           const std::string& name) {
    if (name == "direct") return config.presets.direct;
    if (name == "cot") return config.presets.cot;
    if (name == "quick") return config.presets.quick;
    if (name == "slow") return config.presets.slow;
    throw ConfigParseError("unknown preset \"" + name +
                           "\" (expected direct, cot, quick, or slow)");
}

inline const std::vector<std::string>& known_strategies() {
    static const std::vector<std::string> names = {
        "quick", "greedy", "beam", "best_of_n", "majority"};
    return names;
}

namespace detail {

// Strict typed field access; every violation is a configuration fault.

inline void cfg_check_object(const Json& j, const std::string& where) {
    if (!j.is_object())
        throw ConfigParseError("\"" + where + "\" must be an object");
}

inline void cfg_reject_unknown(const Json& j,
                               const std::vector<std::string>& allowed,
                               const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw UnknownKeyError(where + "." + it.key());
    }
}

inline std::string cfg_string(const Json& j, const std::string& key,
                              std::string fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string())
        throw ConfigParseError("\"" + where + "." + key +
                               "\" must be a string");
    return j.at(key).get<std::string>();
}

inline bool cfg_bool(const Json& j, const std::string& key, bool fallback,
                     const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean())
        throw ConfigParseError("\"" + where + "." + key +
                               "\" must be a boolean");
    return j.at(key).get<bool>();
}

inline int cfg_int(const Json& j, const std::string& key, int fallback,
                   const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer())
        throw ConfigParseError("\"" + where + "." + key +
                               "\" must be an integer");
    return j.at(key).get<int>();
}

inline uint64_t cfg_uint64(const Json& j, const std::string& key,
                           uint64_t fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer() ||
        (j.at(key).is_number_integer() && j.at(key).is_number_unsigned() == false &&
         j.at(key).get<long long>() < 0))
        throw ConfigParseError("\"" + where + "." + key +
                               "\" must be a non-negative integer");
    return j.at(key).get<uint64_t>();
}

inline double cfg_double(const Json& j, const std::string& key,
                         double fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number())
        throw ConfigParseError("\"" + where + "." + key +
                               "\" must be a number");
    return j.at(key).get<double>();
}

inline SamplingParams cfg_preset(const Json& j, const std::string& key,
                                 SamplingParams fallback,
                                 const std::string& where) {
    if (!j.contains(key)) return fallback;
    const Json& p = j.at(key);
    const std::string sub = where + "." + key;
    cfg_check_object(p, sub);
    cfg_reject_unknown(
        p, {"temperature", "top_p", "top_k", "max_output_tokens"}, sub);
    SamplingParams out = fallback;
    out.temperature = cfg_double(p, "temperature", out.temperature, sub);
    out.top_p = cfg_double(p, "top_p", out.top_p, sub);
    out.top_k = cfg_int(p, "top_k", out.top_k, sub);
    out.max_output_tokens =
        cfg_int(p, "max_output_tokens", out.max_output_tokens, sub);
    try {
        validate_sampling(out);
    } catch (const DomainError& e) {
        throw ConfigParseError("\"" + sub + "\": " + e.what());
    }
    return out;
}

inline void resolve_auth(const std::string& backend_label,
                         const std::string& auth_env,
                         const std::map<std::string, std::string>& env,
                         std::string& token_out) {
    if (auth_env.empty())
        throw MissingEndpointError(backend_label +
                                   " needs a non-empty auth_env name");
    auto it = env.find(auth_env);
    if (it == env.end())
        throw MissingEndpointError(
            backend_label + " selected but environment variable \"" +
            auth_env + "\" is not set (set it, empty for no auth)");
    token_out = it->second;
}

}  // namespace detail

/// Parses and fully resolves a configuration object. Unknown keys anywhere
/// in the tree are rejected; remote backends must name a reachable endpoint
/// and an auth environment variable that is actually set.
inline RunConfig load_config_json(const Json& j,
                                  const std::map<std::string, std::string>& env) {
    detail::cfg_check_object(j, "config");
    detail::cfg_reject_unknown(
        j,
        {"seed", "workers", "template_dir", "output_dir", "policy", "prm",
         "search", "presets", "data", "sweep_counts", "soft_rounds",
         "filter_judge"},
        "config");

    RunConfig cfg;
    cfg.seed = detail::cfg_uint64(j, "seed", cfg.seed, "config");
    cfg.workers = detail::cfg_int(j, "workers", cfg.workers, "config");
    if (cfg.workers < 1)
        throw ConfigParseError("\"config.workers\" must be >= 1");
    cfg.template_dir =
        detail::cfg_string(j, "template_dir", cfg.template_dir, "config");
    cfg.output_dir =
        detail::cfg_string(j, "output_dir", cfg.output_dir, "config");
    cfg.soft_rounds =
        detail::cfg_int(j, "soft_rounds", cfg.soft_rounds, "config");
    if (cfg.soft_rounds < 1)
        throw ConfigParseError("\"config.soft_rounds\" must be >= 1");
    cfg.filter_judge =
        detail::cfg_bool(j, "filter_judge", cfg.filter_judge, "config");

    if (j.contains("policy")) {
        const Json& p = j.at("policy");
        detail::cfg_check_object(p, "config.policy");
        detail::cfg_reject_unknown(
            p,
            {"kind", "endpoint", "path", "model", "auth_env", "send_top_k",
             "batch_completions", "max_in_flight", "timeout_sec",
             "retry_attempts", "retry_base_delay_ms", "success_rate",
             "conclude_rate", "working_steps"},
            "config.policy");
        PolicyConfig& pc = cfg.policy;
        const std::string kind =
            detail::cfg_string(p, "kind", "synthetic", "config.policy");
        if (kind == "remote_chat") pc.kind = PolicyKind::RemoteChat;
        else if (kind == "synthetic") pc.kind = PolicyKind::Synthetic;
        else if (kind == "annotator") pc.kind = PolicyKind::MockAnnotator;
        else
            throw ConfigParseError(
                "\"config.policy.kind\" must be remote_chat, synthetic, or "
                "annotator; got \"" + kind + "\"");
        pc.endpoint =
            detail::cfg_string(p, "endpoint", pc.endpoint, "config.policy");
        pc.path = detail::cfg_string(p, "path", pc.path, "config.policy");
        pc.model = detail::cfg_string(p, "model", pc.model, "config.policy");
        pc.auth_env =
            detail::cfg_string(p, "auth_env", pc.auth_env, "config.policy");
        pc.send_top_k =
            detail::cfg_bool(p, "send_top_k", pc.send_top_k, "config.policy");
        pc.batch_completions = detail::cfg_bool(
            p, "batch_completions", pc.batch_completions, "config.policy");
        pc.max_in_flight = detail::cfg_int(p, "max_in_flight",
                                           pc.max_in_flight, "config.policy");
        pc.timeout_sec = detail::cfg_int(p, "timeout_sec", pc.timeout_sec,
                                         "config.policy");
        pc.retry_attempts = detail::cfg_int(p, "retry_attempts",
                                            pc.retry_attempts, "config.policy");
        pc.retry_base_delay_ms = detail::cfg_int(
            p, "retry_base_delay_ms", pc.retry_base_delay_ms, "config.policy");
        pc.success_rate = detail::cfg_double(p, "success_rate",
                                             pc.success_rate, "config.policy");
        pc.conclude_rate = detail::cfg_double(
            p, "conclude_rate", pc.conclude_rate, "config.policy");
        pc.working_steps = detail::cfg_int(p, "working_steps",
                                           pc.working_steps, "config.policy");
        if (pc.max_in_flight < 1 || pc.timeout_sec < 1 ||
            pc.retry_attempts < 1 || pc.retry_base_delay_ms < 0 ||
            pc.working_steps < 1)
            throw ConfigParseError("\"config.policy\" limits must be positive");
        if (!(pc.success_rate >= 0.0) || !(pc.success_rate <= 1.0) ||
            !(pc.conclude_rate > 0.0) || !(pc.conclude_rate <= 1.0))
            throw ConfigParseError(
                "\"config.policy\" rates must lie in [0,1]");
    }

    if (j.contains("prm")) {
        const Json& p = j.at("prm");
        detail::cfg_check_object(p, "config.prm");
        detail::cfg_reject_unknown(
            p,
            {"kind", "endpoint", "path", "auth_env", "max_in_flight",
             "timeout_sec", "retry_attempts", "retry_base_delay_ms"},
            "config.prm");
        PrmConfig& pc = cfg.prm;
        const std::string kind =
            detail::cfg_string(p, "kind", "oracle", "config.prm");
        if (kind == "remote") pc.kind = PrmKind::Remote;
        else if (kind == "oracle") pc.kind = PrmKind::Oracle;
        else if (kind == "hash") pc.kind = PrmKind::Hash;
        else
            throw ConfigParseError(
                "\"config.prm.kind\" must be remote, oracle, or hash; got \"" +
                kind + "\"");
        pc.endpoint =
            detail::cfg_string(p, "endpoint", pc.endpoint, "config.prm");
        pc.path = detail::cfg_string(p, "path", pc.path, "config.prm");
        pc.auth_env =
            detail::cfg_string(p, "auth_env", pc.auth_env, "config.prm");
        pc.max_in_flight =
            detail::cfg_int(p, "max_in_flight", pc.max_in_flight, "config.prm");
        pc.timeout_sec =
            detail::cfg_int(p, "timeout_sec", pc.timeout_sec, "config.prm");
        pc.retry_attempts = detail::cfg_int(p, "retry_attempts",
                                            pc.retry_attempts, "config.prm");
        pc.retry_base_delay_ms = detail::cfg_int(
            p, "retry_base_delay_ms", pc.retry_base_delay_ms, "config.prm");
        if (pc.max_in_flight < 1 || pc.timeout_sec < 1 ||
            pc.retry_attempts < 1 || pc.retry_base_delay_ms < 0)
            throw ConfigParseError("\"config.prm\" limits must be positive");
    }

    if (j.contains("search")) {
        const Json& s = j.at("search");
        detail::cfg_check_object(s, "config.search");
        detail::cfg_reject_unknown(s,
                                   {"strategy", "beam_width", "candidates",
                                    "max_steps", "aggregation", "preset"},
                                   "config.search");
        SearchConfig& sc = cfg.search;
        sc.strategy =
            detail::cfg_string(s, "strategy", sc.strategy, "config.search");
        sc.budget.beam_width = detail::cfg_int(
            s, "beam_width", sc.budget.beam_width, "config.search");
        sc.budget.candidates_per_expansion = detail::cfg_int(
            s, "candidates", sc.budget.candidates_per_expansion,
            "config.search");
        sc.budget.max_steps = detail::cfg_int(s, "max_steps",
                                              sc.budget.max_steps,
                                              "config.search");
        if (s.contains("aggregation")) {
            const std::string agg = detail::cfg_string(
                s, "aggregation", "min", "config.search");
            if (agg == "min") sc.aggregation = AggregationMode::WorstAction;
            else if (agg == "avg")
                sc.aggregation = AggregationMode::AverageScore;
            else if (agg == "last") sc.aggregation = AggregationMode::LastAction;
            else
                throw ConfigParseError(
                    "\"config.search.aggregation\" must be min, avg, or "
                    "last; got \"" + agg + "\"");
        }
        sc.preset = detail::cfg_string(s, "preset", sc.preset, "config.search");
    }

    if (j.contains("presets")) {
        const Json& p = j.at("presets");
        detail::cfg_check_object(p, "config.presets");
        detail::cfg_reject_unknown(p, {"direct", "cot", "quick", "slow"},
                                   "config.presets");
        cfg.presets.direct = detail::cfg_preset(p, "direct",
                                                cfg.presets.direct,
                                                "config.presets");
        cfg.presets.cot =
            detail::cfg_preset(p, "cot", cfg.presets.cot, "config.presets");
        cfg.presets.quick = detail::cfg_preset(p, "quick", cfg.presets.quick,
                                               "config.presets");
        cfg.presets.slow = detail::cfg_preset(p, "slow", cfg.presets.slow,
                                              "config.presets");
    }

    if (j.contains("data")) {
        const Json& d = j.at("data");
        detail::cfg_check_object(d, "config.data");
        detail::cfg_reject_unknown(d, {"problems", "rollouts", "prm_samples"},
                                   "config.data");
        cfg.data.problems = detail::cfg_string(d, "problems",
                                               cfg.data.problems,
                                               "config.data");
        cfg.data.rollouts = detail::cfg_string(d, "rollouts",
                                               cfg.data.rollouts,
                                               "config.data");
        cfg.data.prm_samples = detail::cfg_string(
            d, "prm_samples", cfg.data.prm_samples, "config.data");
    }

    if (j.contains("sweep_counts")) {
        if (!j.at("sweep_counts").is_array())
            throw ConfigParseError(
                "\"config.sweep_counts\" must be an array of integers");
        cfg.sweep_counts.clear();
        for (const Json& c : j.at("sweep_counts")) {
            if (!c.is_number_integer())
                throw ConfigParseError(
                    "\"config.sweep_counts\" must be an array of integers");
            cfg.sweep_counts.push_back(c.get<int>());
        }
    }
    if (cfg.sweep_counts.empty())
        throw ConfigParseError("\"config.sweep_counts\" must be non-empty");
    for (size_t i = 0; i < cfg.sweep_counts.size(); ++i) {
        if (cfg.sweep_counts[i] < 1)
            throw ConfigParseError(
                "\"config.sweep_counts\" entries must be >= 1");
        if (i > 0 && cfg.sweep_counts[i] <= cfg.sweep_counts[i - 1])
            throw ConfigParseError(
                "\"config.sweep_counts\" must be strictly increasing");
    }

    // Cross-field validation.
    bool known_strategy = false;
    for (const auto& s : known_strategies())
        if (cfg.search.strategy == s) known_strategy = true;
    if (!known_strategy)
        throw ConfigParseError("\"config.search.strategy\" must be one of "
                               "quick, greedy, beam, best_of_n, majority; "
                               "got \"" + cfg.search.strategy + "\"");
    preset_params(cfg, cfg.search.preset);  // throws on unknown name
    try {
        validate_budget(cfg.search.budget,
                        /*for_beam=*/cfg.search.strategy == "beam");
    } catch (const DomainError& e) {
        throw ConfigParseError(std::string("\"config.search\": ") + e.what());
    }

    if (cfg.policy.kind == PolicyKind::RemoteChat) {
        if (cfg.policy.endpoint.empty())
            throw MissingEndpointError(
                "policy kind remote_chat selected without "
                "\"config.policy.endpoint\"");
        detail::resolve_auth("remote chat policy", cfg.policy.auth_env, env,
                             cfg.policy.api_token);
    }
    if (cfg.prm.kind == PrmKind::Remote) {
        if (cfg.prm.endpoint.empty())
            throw MissingEndpointError(
                "prm kind remote selected without \"config.prm.endpoint\"");
        detail::resolve_auth("remote reward model", cfg.prm.auth_env, env,
                             cfg.prm.api_token);
    }
    return cfg;
}

/// Snapshot of the process environment, for the default load path.
inline std::map<std::string, std::string> environment_snapshot(char** envp) {
    std::map<std::string, std::string> env;
    for (char** e = envp; e && *e; ++e) {
        const std::string entry(*e);
        const size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        env[entry.substr(0, eq)] = entry.substr(eq + 1);
    }
    return env;
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::map<std::string, std::string>& env) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const DataError& e) {
        throw ConfigParseError(e.what());
    }
    Json j = Json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
        throw ConfigParseError("config file is not valid JSON: " +
                               path.string());
    return load_config_json(j, env);
}

// ---------------------------------------------------------------------------
// Backend factories: one place that turns configuration into live backends.
// ---------------------------------------------------------------------------

inline std::unique_ptr<StepPolicy> make_policy(const RunConfig& cfg,
                                               const TemplateStore& templates) {
    switch (cfg.policy.kind) {
        case PolicyKind::RemoteChat: {
            RemoteChatConfig rc;
            rc.base_url = cfg.policy.endpoint;
            rc.path = cfg.policy.path;
            rc.model = cfg.policy.model;
            rc.api_token = cfg.policy.api_token;
            rc.send_top_k = cfg.policy.send_top_k;
            rc.batch_completions = cfg.policy.batch_completions;
            rc.max_in_flight = cfg.policy.max_in_flight;
            rc.timeout_sec = cfg.policy.timeout_sec;
            rc.retry.attempts = cfg.policy.retry_attempts;
            rc.retry.base_delay_ms = cfg.policy.retry_base_delay_ms;
            rc.retry.jitter_seed = cfg.seed;
            return std::make_unique<RemoteChatPolicy>(std::move(rc),
                                                      templates);
        }
        case PolicyKind::Synthetic:
            return std::make_unique<SyntheticPolicy>(cfg.policy.success_rate,
                                                     cfg.policy.conclude_rate);
        case PolicyKind::MockAnnotator:
            return std::make_unique<MockAnnotator>(cfg.policy.working_steps);
    }
    throw ConfigParseError("unhandled policy kind");
}

/// `problems` feeds the oracle scorer its gold answers; remote and hash
/// scorers ignore it.
inline std::unique_ptr<PrmScorer> make_prm(const RunConfig& cfg,
                                           const std::vector<Problem>& problems) {
    switch (cfg.prm.kind) {
        case PrmKind::Remote: {
            RemotePrmConfig rc;
            rc.base_url = cfg.prm.endpoint;
            rc.path = cfg.prm.path;
            rc.api_token = cfg.prm.api_token;
            rc.max_in_flight = cfg.prm.max_in_flight;
            rc.timeout_sec = cfg.prm.timeout_sec;
            rc.retry.attempts = cfg.prm.retry_attempts;
            rc.retry.base_delay_ms = cfg.prm.retry_base_delay_ms;
            rc.retry.jitter_seed = cfg.seed;
            return std::make_unique<RemotePrm>(std::move(rc));
        }
        case PrmKind::Oracle:
            return std::make_unique<OraclePrm>(
                OraclePrm::from_problems(problems));
        case PrmKind::Hash:
            return std::make_unique<HashPrm>();
    }
    throw ConfigParseError("unhandled prm kind");
}

}  // namespace stepwise
