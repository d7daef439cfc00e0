#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mtpatcher/result.hpp"

namespace mtpatcher::gateway {

using Json = nlohmann::json;

struct ChatMessage {
    std::string role;  // "system", "user" or "assistant"
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

/// A single chat-completion request. request_key() is a content hash of
/// (model, messages, temperature) and addresses the response cache.
class ChatRequest {
public:
    static Result<ChatRequest> create(std::string model, std::vector<ChatMessage> messages,
                                      double temperature, int max_tokens);

    const std::string& model() const { return model_; }
    const std::vector<ChatMessage>& messages() const { return messages_; }
    double temperature() const { return temperature_; }
    int max_tokens() const { return max_tokens_; }
    const std::string& request_key() const { return request_key_; }

    /// The request body in the chat-completions wire convention.
    Json to_wire() const;

private:
    ChatRequest() = default;
    std::string model_;
    std::vector<ChatMessage> messages_;
    double temperature_ = 0.0;
    int max_tokens_ = 0;
    std::string request_key_;
};

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct ChatResponse {
    std::string content;  // may be empty if the backend genuinely returned empty content
    TokenUsage usage;
    bool cached = false;
};

enum class BackendKind { Remote, ScriptedMock, Command };

/// Where completions come from. Remote speaks the chat-completions HTTP
/// convention; ScriptedMock replays canned responses from a script file;
/// Command pipes the last user message through a shell command (used to
/// wrap local MT binaries).
struct BackendSpec {
    BackendKind kind = BackendKind::ScriptedMock;
    std::string model;           // default model name stamped on requests
    std::string endpoint_url;    // Remote only
    std::string credential_env = "MTPATCHER_API_KEY";  // Remote only
    std::string script_path;     // ScriptedMock only
    std::string command;         // Command only

    static Result<BackendSpec> from_json(const Json& j);
    Status validate() const;
    /// Stable identity used to reuse one backend instance per spec.
    std::string fingerprint() const;
};

struct RetryPolicy {
    int max_attempts = 5;
    int base_delay_ms = 1000;
    double factor = 2.0;
    int max_delay_ms = 30000;
    bool jitter = true;  // full jitter: uniform in [0, computed delay]
};

struct GatewayConfig {
    std::string cache_dir;  // empty disables the response cache
    RetryPolicy retry;
    int timeout_ms = 120000;  // per-attempt HTTP read timeout
};

/// One transport attempt. Implementations return the raw response body in
/// the chat-completions shape; parsing, retries and caching live in Gateway.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual Result<std::string> send(const ChatRequest& request) = 0;
};

struct GatewayStats {
    std::uint64_t cache_hits = 0;
    std::uint64_t cache_misses = 0;
    std::uint64_t backend_calls = 0;  // transport attempts, retries included
    std::uint64_t retries = 0;
};

/// Chat-completion client: disk cache consulted first, transient failures
/// (network, 429, 5xx) retried with exponential backoff, per-record errors
/// returned as values. Safe for concurrent use.
class Gateway {
public:
    explicit Gateway(GatewayConfig config);

    Result<ChatResponse> complete(const BackendSpec& backend, const ChatRequest& request);
    Result<ChatResponse> complete(ChatBackend& backend, const ChatRequest& request);

    /// Runs requests on a worker pool of `parallelism` threads. The result
    /// order always matches the request order; per-item failures are typed
    /// values and never abort the batch.
    std::vector<Result<ChatResponse>> complete_batch(const BackendSpec& backend,
                                                     const std::vector<ChatRequest>& requests,
                                                     int parallelism);
    std::vector<Result<ChatResponse>> complete_batch(ChatBackend& backend,
                                                     const std::vector<ChatRequest>& requests,
                                                     int parallelism);

    GatewayStats stats() const;
    const GatewayConfig& config() const { return config_; }

private:
    Result<ChatBackend*> backend_for(const BackendSpec& spec);

    GatewayConfig config_;
    std::mutex backends_mutex_;
    std::unordered_map<std::string, std::unique_ptr<ChatBackend>> backends_;
    std::atomic<std::uint64_t> cache_hits_{0};
    std::atomic<std::uint64_t> cache_misses_{0};
    std::atomic<std::uint64_t> backend_calls_{0};
    std::atomic<std::uint64_t> retries_{0};
};

/// Builds a standalone backend instance; Gateway uses the same factory.
Result<std::unique_ptr<ChatBackend>> make_backend(const BackendSpec& spec,
                                                  int timeout_ms = 120000);

/// Parses a chat-completions response body into content + usage.
Result<ChatResponse> parse_completion_body(const std::string& body);

/// Serializes content into a minimal chat-completions body (what the
/// scripted mock emits, and what tests feed through the cache).
std::string make_completion_body(const std::string& content);

}  // namespace mtpatcher::gateway
