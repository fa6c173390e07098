// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>

#include "stepwise/core.hpp"
#include "stepwise/errors.hpp"
#include "stepwise/jsonl.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/reward.hpp"
#include "stepwise/rng.hpp"
#include "stepwise/templates.hpp"

namespace stepwise {

/// Transport retry policy. Only idempotent requests pass through this
/// client (stateless completions and scores), so retrying is always safe.
struct HttpRetry {
    int attempts = 3;
    int base_delay_ms = 500;  // doubled per attempt
    double multiplier = 2.0;
    uint64_t jitter_seed = 0;
};

inline void validate_retry(const HttpRetry& r) {
    if (r.attempts < 1) throw DomainError("retry attempts must be >= 1");
    if (r.base_delay_ms < 0) throw DomainError("retry delay must be >= 0");
    if (!(r.multiplier >= 1.0))
        throw DomainError("retry multiplier must be >= 1");
}

struct RemoteChatConfig {
    std::string base_url;  // e.g. "http://127.0.0.1:8080"
    std::string path = "/v1/chat/completions";
    std::string model = "default";
    std::string api_token;          // empty = no Authorization header
    bool send_top_k = false;        // only when the endpoint supports it
    bool batch_completions = false; // one request with n vs. n requests
    int max_in_flight = 4;
    int timeout_sec = 120;
    HttpRetry retry;
};

struct RemotePrmConfig {
    std::string base_url;
    std::string path = "/score";
    std::string api_token;
    int max_in_flight = 4;
    int timeout_sec = 120;
    HttpRetry retry;
};

namespace detail {

/// Bounds concurrent outbound requests.
class RequestGate {
  public:
    explicit RequestGate(int max_in_flight)
        : budget_(max_in_flight > 0 ? max_in_flight : 1) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return budget_ > 0; });
        --budget_;
    }
    void release() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            ++budget_;
        }
        cv_.notify_one();
    }

  private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int budget_;
};

struct GateHold {
    RequestGate& gate;
    explicit GateHold(RequestGate& g) : gate(g) { gate.acquire(); }
    ~GateHold() { gate.release(); }
};

struct HttpReply {
    int status = 0;
    std::string body;
};

inline bool retryable_status(int status) {
    return status == 429 || status >= 500;
}

/// Runs `send` under the retry policy: transport failures and 429/5xx
/// replies back off and retry; other statuses return immediately.
template <typename SendFn>
HttpReply with_retries(const HttpRetry& retry, Rng& jitter,
                       std::mutex& jitter_mutex, const std::string& what,
                       SendFn&& send) {
    validate_retry(retry);
    std::string last_error = "no attempts made";
    double delay_ms = retry.base_delay_ms;
    for (int attempt = 1; attempt <= retry.attempts; ++attempt) {
        if (attempt > 1 && delay_ms > 0) {
            double jitter_ms;
            {
                std::lock_guard<std::mutex> lock(jitter_mutex);
                jitter_ms = jitter.uniform() * delay_ms / 2.0;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(
                static_cast<long long>(delay_ms + jitter_ms)));
            delay_ms *= retry.multiplier;
        }
        std::optional<HttpReply> reply = send();
        if (!reply) {
            last_error = "transport failure";
            continue;
        }
        if (retryable_status(reply->status)) {
            last_error = "HTTP " + std::to_string(reply->status);
            continue;
        }
        return *reply;
    }
    throw BackendUnavailable(what + " failed after " +
                             std::to_string(retry.attempts) +
                             " attempts: " + last_error);
}

/// A reply that fails to parse is a backend fault, not a data-file fault.
inline Json parse_reply(const std::string& body, const std::string& what) {
    Json j = Json::parse(body, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded())
        throw MalformedCompletion(what + " is not valid JSON");
    return j;
}

inline std::string chat_history_block(const std::vector<AtomicStep>& steps) {
    if (steps.empty()) return "(none yet)";
    std::string out;
    for (size_t i = 0; i < steps.size(); ++i) {
        if (i) out += '\n';
        out += std::to_string(steps[i].index) + ". " + steps[i].text;
    }
    return out;
}

inline std::string caption_block(const std::optional<std::string>& caption) {
    if (!caption || trim(*caption).empty()) return "";
    return "Caption: " + *caption + "\n";
}

}  // namespace detail

inline constexpr const char* kChatSystemPrompt =
    "You follow the task's output format exactly.";

/// OpenAI-compatible chat-completions client. Each request renders one
/// template into a system+user message pair; sampling fields temperature,
/// top_p, and max_tokens always ride along, top_k only when the endpoint
/// advertises support. Multi-candidate expansion defaults to n independent
/// requests; `batch_completions` switches to a single request with "n".
class RemoteChatPolicy : public StepPolicy {
  public:
    RemoteChatPolicy(RemoteChatConfig config, TemplateStore templates)
        : config_(std::move(config)),
          templates_(std::move(templates)),
          gate_(config_.max_in_flight),
          jitter_(config_.retry.jitter_seed) {
        if (config_.base_url.empty())
            throw MissingEndpointError(
                "remote chat backend selected without an endpoint URL");
        validate_retry(config_.retry);
    }

    std::string sample_slot(const ReasoningState& state, int slot,
                            const SamplingParams& params,
                            const std::string& template_id,
                            uint64_t seed) override {
        validate_sampling(params);
        const Json body = request_body(
            render_for_state(state, template_id), params,
            mix_seed(seed, static_cast<uint64_t>(slot)), /*n=*/1);
        const Json reply = post_json(config_.path, body, "chat completion");
        return extract_contents(reply, 1).front();
    }

    std::vector<std::string> sample_steps(const ReasoningState& state, int n,
                                          const SamplingParams& params,
                                          const std::string& template_id,
                                          uint64_t seed) override {
        if (!config_.batch_completions)
            return StepPolicy::sample_steps(state, n, params, template_id,
                                            seed);
        validate_sampling(params);
        const Json body = request_body(render_for_state(state, template_id),
                                       params, seed, n);
        const Json reply = post_json(config_.path, body, "chat completion");
        return extract_contents(reply, n);
    }

    std::string complete(const Problem& problem,
                         const std::string& template_id,
                         const std::string& payload,
                         const SamplingParams& params,
                         uint64_t seed) override {
        validate_sampling(params);
        // The payload fills {{payload}} for rewrite-style templates and
        // {{history}} for running-state ones; unused slots are harmless.
        const std::string rendered = templates_.render_id(
            template_id, {{"question", problem.question},
                          {"caption_block", detail::caption_block(problem.caption)},
                          {"history", payload},
                          {"payload", payload}});
        const Json body = request_body(rendered, params, seed, /*n=*/1);
        const Json reply = post_json(config_.path, body, "chat completion");
        return extract_contents(reply, 1).front();
    }

  private:
    std::string render_for_state(const ReasoningState& state,
                                 const std::string& template_id) {
        const Problem& p = state.problem();
        return templates_.render_id(
            template_id,
            {{"question", p.question},
             {"caption_block", detail::caption_block(p.caption)},
             {"history", detail::chat_history_block(state.steps())}});
    }

    Json request_body(const std::string& user_content,
                      const SamplingParams& params, uint64_t seed,
                      int n) const {
        Json body;
        body["model"] = config_.model;
        Json messages = Json::array();
        messages.push_back(
            {{"role", "system"}, {"content", kChatSystemPrompt}});
        messages.push_back({{"role", "user"}, {"content", user_content}});
        body["messages"] = std::move(messages);
        body["temperature"] = params.temperature;
        body["top_p"] = params.top_p;
        body["max_tokens"] = params.max_output_tokens;
        if (config_.send_top_k && params.top_k > 0)
            body["top_k"] = params.top_k;
        body["seed"] = seed;
        if (n > 1) body["n"] = n;
        return body;
    }

    Json post_json(const std::string& path, const Json& body,
                   const std::string& what) {
        detail::GateHold hold(gate_);
        const std::string payload = body.dump();
        const detail::HttpReply reply = detail::with_retries(
            config_.retry, jitter_, jitter_mutex_, what,
            [&]() -> std::optional<detail::HttpReply> {
                httplib::Client client(config_.base_url);
                client.set_connection_timeout(config_.timeout_sec, 0);
                client.set_read_timeout(config_.timeout_sec, 0);
                client.set_write_timeout(config_.timeout_sec, 0);
                httplib::Headers headers;
                if (!config_.api_token.empty())
                    headers.emplace("Authorization",
                                    "Bearer " + config_.api_token);
                auto result =
                    client.Post(path, headers, payload, "application/json");
                if (!result) return std::nullopt;
                return detail::HttpReply{result->status, result->body};
            });
        if (reply.status != 200)
            throw BackendUnavailable(what + " rejected with HTTP " +
                                     std::to_string(reply.status));
        return detail::parse_reply(reply.body, what + " response");
    }

    /// Pulls exactly n assistant messages out of a chat reply, in choice
    /// index order when indices are present.
    static std::vector<std::string> extract_contents(const Json& reply,
                                                     int n) {
        if (!reply.contains("choices") || !reply.at("choices").is_array())
            throw MalformedCompletion(
                "chat reply carries no \"choices\" array");
        const Json& choices = reply.at("choices");
        if (static_cast<int>(choices.size()) != n)
            throw MalformedCompletion(
                "chat reply carries " + std::to_string(choices.size()) +
                " choices, wanted " + std::to_string(n));
        std::vector<std::pair<long long, std::string>> rows;
        bool all_indexed = true;
        for (const Json& choice : choices) {
            if (!choice.contains("message") ||
                !choice.at("message").contains("content") ||
                !choice.at("message").at("content").is_string())
                throw MalformedCompletion(
                    "chat choice carries no message content");
            long long index = static_cast<long long>(rows.size());
            if (choice.contains("index") &&
                choice.at("index").is_number_integer())
                index = choice.at("index").get<long long>();
            else
                all_indexed = false;
            rows.emplace_back(
                index, choice.at("message").at("content").get<std::string>());
        }
        if (all_indexed)
            std::stable_sort(rows.begin(), rows.end(),
                             [](const auto& a, const auto& b) {
                                 return a.first < b.first;
                             });
        std::vector<std::string> out;
        for (auto& [index, text] : rows) out.push_back(std::move(text));
        return out;
    }

    RemoteChatConfig config_;
    TemplateStore templates_;
    detail::RequestGate gate_;
    Rng jitter_;
    std::mutex jitter_mutex_;
};

/// Remote reward-model client. Wire contract: POST {"text": serialized}
/// answered by {"step_probs": [p_1..p_k]}; only the last element — the
/// score of the final segment — is consumed.
class RemotePrm : public PrmScorer {
  public:
    explicit RemotePrm(RemotePrmConfig config)
        : config_(std::move(config)),
          gate_(config_.max_in_flight),
          jitter_(config_.retry.jitter_seed) {
        if (config_.base_url.empty())
            throw MissingEndpointError(
                "remote reward backend selected without an endpoint URL");
        validate_retry(config_.retry);
    }

    double score(const std::string& serialized) override {
        Json body;
        body["text"] = serialized;
        detail::GateHold hold(gate_);
        const std::string payload = body.dump();
        const detail::HttpReply reply = detail::with_retries(
            config_.retry, jitter_, jitter_mutex_, "step scoring",
            [&]() -> std::optional<detail::HttpReply> {
                httplib::Client client(config_.base_url);
                client.set_connection_timeout(config_.timeout_sec, 0);
                client.set_read_timeout(config_.timeout_sec, 0);
                client.set_write_timeout(config_.timeout_sec, 0);
                httplib::Headers headers;
                if (!config_.api_token.empty())
                    headers.emplace("Authorization",
                                    "Bearer " + config_.api_token);
                auto result = client.Post(config_.path, headers, payload,
                                          "application/json");
                if (!result) return std::nullopt;
                return detail::HttpReply{result->status, result->body};
            });
        if (reply.status != 200)
            throw BackendUnavailable("step scoring rejected with HTTP " +
                                     std::to_string(reply.status));
        const Json j = detail::parse_reply(reply.body, "score response");
        if (!j.contains("step_probs") || !j.at("step_probs").is_array() ||
            j.at("step_probs").empty())
            throw MalformedCompletion(
                "score reply carries no \"step_probs\" array");
        const Json& last = j.at("step_probs").back();
        if (!last.is_number())
            throw InvalidProbability("step probability is not numeric");
        const double p = last.get<double>();
        if (!(p >= 0.0) || !(p <= 1.0))
            throw InvalidProbability("step probability " +
                                     std::to_string(p) +
                                     " lies outside [0,1]");
        return p;
    }

  private:
    RemotePrmConfig config_;
    detail::RequestGate gate_;
    Rng jitter_;
    std::mutex jitter_mutex_;
};

}  // namespace stepwise
