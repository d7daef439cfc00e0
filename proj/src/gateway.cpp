#include "mtpatcher/gateway.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mtpatcher/text.hpp"

namespace mtpatcher::gateway {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// ChatRequest
// ---------------------------------------------------------------------------

Result<ChatRequest> ChatRequest::create(std::string model, std::vector<ChatMessage> messages,
                                        double temperature, int max_tokens) {
    if (model.empty()) return make_error(ErrorCode::InvalidArgument, "ChatRequest.model empty");
    if (messages.empty())
        return make_error(ErrorCode::InvalidArgument, "ChatRequest.messages empty");
    if (messages.front().role != "system" && messages.front().role != "user")
        return make_error(ErrorCode::InvalidArgument,
                          "first message role must be system or user, got: " +
                              messages.front().role);
    for (const auto& m : messages) {
        if (m.role != "system" && m.role != "user" && m.role != "assistant")
            return make_error(ErrorCode::InvalidArgument, "bad message role: " + m.role);
    }
    if (temperature < 0.0)
        return make_error(ErrorCode::InvalidArgument, "temperature must be >= 0");
    if (max_tokens <= 0)
        return make_error(ErrorCode::InvalidArgument, "max_tokens must be positive");

    ChatRequest r;
    r.model_ = std::move(model);
    r.messages_ = std::move(messages);
    r.temperature_ = temperature;
    r.max_tokens_ = max_tokens;

    // max_tokens is a transport knob, not part of the cache identity.
    Json key_material = Json::array();
    for (const auto& m : r.messages_) key_material.push_back(Json::array({m.role, m.content}));
    Json canonical{{"model", r.model_},
                   {"messages", std::move(key_material)},
                   {"temperature", r.temperature_}};
    r.request_key_ = text::sha256_hex(canonical.dump());
    return r;
}

Json ChatRequest::to_wire() const {
    Json messages = Json::array();
    for (const auto& m : messages_)
        messages.push_back(Json{{"role", m.role}, {"content", m.content}});
    return Json{{"model", model_},
                {"messages", std::move(messages)},
                {"temperature", temperature_},
                {"max_tokens", max_tokens_}};
}

// ---------------------------------------------------------------------------
// Response body handling
// ---------------------------------------------------------------------------

Result<ChatResponse> parse_completion_body(const std::string& body) {
    Json j = Json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        return make_error(ErrorCode::MalformedResponse, "response body is not a JSON object");
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
        return make_error(ErrorCode::MalformedResponse, "response has no choices");
    const Json& first = j["choices"][0];
    if (!first.contains("message") || !first["message"].is_object() ||
        !first["message"].contains("content") || !first["message"]["content"].is_string())
        return make_error(ErrorCode::MalformedResponse, "choices[0].message.content missing");

    ChatResponse resp;
    resp.content = first["message"]["content"].get<std::string>();
    if (j.contains("usage") && j["usage"].is_object()) {
        const Json& u = j["usage"];
        if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number_integer())
            resp.usage.prompt_tokens = u["prompt_tokens"].get<std::int64_t>();
        if (u.contains("completion_tokens") && u["completion_tokens"].is_number_integer())
            resp.usage.completion_tokens = u["completion_tokens"].get<std::int64_t>();
    }
    return resp;
}

std::string make_completion_body(const std::string& content) {
    Json body{{"choices",
               Json::array({Json{{"index", 0},
                                 {"message", Json{{"role", "assistant"}, {"content", content}}},
                                 {"finish_reason", "stop"}}})},
              {"usage", Json{{"prompt_tokens", 0}, {"completion_tokens", 0}}}};
    return body.dump();
}

// ---------------------------------------------------------------------------
// BackendSpec
// ---------------------------------------------------------------------------

namespace {

const char* kind_name(BackendKind k) {
    switch (k) {
        case BackendKind::Remote: return "remote";
        case BackendKind::ScriptedMock: return "scripted_mock";
        case BackendKind::Command: return "command";
    }
    return "unknown";
}

}  // namespace

Result<BackendSpec> BackendSpec::from_json(const Json& j) {
    if (!j.is_object()) return make_error(ErrorCode::ConfigError, "backend spec must be an object");
    BackendSpec spec;
    std::string kind = j.value("kind", std::string());
    if (kind == "remote") {
        spec.kind = BackendKind::Remote;
    } else if (kind == "scripted_mock") {
        spec.kind = BackendKind::ScriptedMock;
    } else if (kind == "command") {
        spec.kind = BackendKind::Command;
    } else {
        return make_error(ErrorCode::ConfigError, "backend kind must be remote, scripted_mock or command");
    }
    spec.model = j.value("model", std::string());
    spec.endpoint_url = j.value("endpoint_url", std::string());
    spec.credential_env = j.value("credential_env", std::string("MTPATCHER_API_KEY"));
    spec.script_path = j.value("script", std::string());
    spec.command = j.value("command", std::string());
    if (auto bad = spec.validate(); !bad) return bad.error();
    return spec;
}

Status BackendSpec::validate() const {
    if (model.empty())
        return make_error(ErrorCode::ConfigError, "backend spec needs a model name");
    switch (kind) {
        case BackendKind::Remote:
            if (endpoint_url.empty())
                return make_error(ErrorCode::ConfigError, "remote backend needs endpoint_url");
            if (credential_env.empty())
                return make_error(ErrorCode::ConfigError, "remote backend needs credential_env");
            break;
        case BackendKind::ScriptedMock:
            if (script_path.empty())
                return make_error(ErrorCode::ConfigError, "scripted_mock backend needs script");
            break;
        case BackendKind::Command:
            if (command.empty())
                return make_error(ErrorCode::ConfigError, "command backend needs command");
            break;
    }
    return ok_status();
}

std::string BackendSpec::fingerprint() const {
    Json j{{"kind", kind_name(kind)},   {"model", model},
           {"endpoint_url", endpoint_url}, {"credential_env", credential_env},
           {"script", script_path},     {"command", command}};
    return text::sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Remote backend
// ---------------------------------------------------------------------------

namespace {

struct SplitUrl {
    std::string base;  // scheme://host[:port]
    std::string path;
};

Result<SplitUrl> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        return make_error(ErrorCode::ConfigError, "endpoint_url missing scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    if (path_start == std::string::npos) {
        out.base = url;
        out.path = "/v1/chat/completions";
    } else {
        out.base = url.substr(0, path_start);
        out.path = url.substr(path_start);
        if (out.path == "/") out.path = "/v1/chat/completions";
    }
    return out;
}

class RemoteBackend : public ChatBackend {
public:
    RemoteBackend(BackendSpec spec, int timeout_ms)
        : spec_(std::move(spec)), timeout_ms_(timeout_ms) {}

    Result<std::string> send(const ChatRequest& request) override {
        const char* credential = std::getenv(spec_.credential_env.c_str());
        if (credential == nullptr || *credential == '\0')
            return make_error(ErrorCode::AuthError,
                              "credential env var not set: " + spec_.credential_env);

        auto url = split_url(spec_.endpoint_url);
        if (!url) return url.error();

        httplib::Client client(url->base);
        client.set_connection_timeout(std::chrono::milliseconds(timeout_ms_));
        client.set_read_timeout(std::chrono::milliseconds(timeout_ms_));
        client.set_write_timeout(std::chrono::milliseconds(timeout_ms_));

        httplib::Headers headers{{"Authorization", std::string("Bearer ") + credential}};
        auto res = client.Post(url->path, headers, request.to_wire().dump(), "application/json");

        if (!res)
            return make_error(ErrorCode::NetworkError,
                              "transport failure: " + httplib::to_string(res.error()));
        if (res->status == 200) return res->body;
        if (res->status == 401 || res->status == 403)
            return make_error(ErrorCode::AuthError,
                              "credential rejected (HTTP " + std::to_string(res->status) + ")");
        if (res->status == 429 || res->status >= 500)
            return make_error(ErrorCode::BackendBusy,
                              "HTTP " + std::to_string(res->status));
        return make_error(ErrorCode::RequestRejected,
                          "HTTP " + std::to_string(res->status) + ": " +
                              res->body.substr(0, 200));
    }

private:
    BackendSpec spec_;
    int timeout_ms_;
};

// ---------------------------------------------------------------------------
// Scripted mock backend
// ---------------------------------------------------------------------------

/// One script entry. `match` holds one or more needles that must all hit;
/// `exact` switches from substring to whole-text comparison. `fail`
/// injects a typed failure instead of returning the response.
struct ScriptEntry {
    std::vector<std::string> needles;
    std::vector<int> needle_ids;  // indices into the deduplicated needle set
    bool exact = false;
    std::string response;
    std::string fail;  // "", "auth", "rate_limit", "malformed", "network"
};

/// Multi-pattern substring search so large scripts (thousands of entries)
/// stay O(request length + hits) per request instead of one scan per entry.
class NeedleAutomaton {
public:
    int add(const std::string& needle) {
        auto [it, inserted] = ids_.emplace(needle, static_cast<int>(ids_.size()));
        if (inserted) patterns_.push_back(needle);
        return it->second;
    }

    int pattern_count() const { return static_cast<int>(patterns_.size()); }

    void build() {
        nodes_.clear();
        nodes_.emplace_back();
        for (int p = 0; p < static_cast<int>(patterns_.size()); ++p) {
            int node = 0;
            for (unsigned char c : patterns_[p]) {
                auto it = nodes_[node].next.find(c);
                if (it == nodes_[node].next.end()) {
                    nodes_[node].next.emplace(c, static_cast<int>(nodes_.size()));
                    node = static_cast<int>(nodes_.size());
                    nodes_.emplace_back();
                } else {
                    node = it->second;
                }
            }
            nodes_[node].outputs.push_back(p);
        }
        // Breadth-first failure links; each node inherits its fail node's outputs.
        std::vector<int> queue;
        for (auto& [c, child] : nodes_[0].next) {
            nodes_[child].fail = 0;
            queue.push_back(child);
        }
        for (std::size_t head = 0; head < queue.size(); ++head) {
            int node = queue[head];
            for (auto& [c, child] : nodes_[node].next) {
                int fall = nodes_[node].fail;
                while (fall != 0 && nodes_[fall].next.find(c) == nodes_[fall].next.end())
                    fall = nodes_[fall].fail;
                auto it = nodes_[fall].next.find(c);
                nodes_[child].fail = (it != nodes_[fall].next.end() && it->second != child)
                                         ? it->second
                                         : 0;
                const auto& inherited = nodes_[nodes_[child].fail].outputs;
                nodes_[child].outputs.insert(nodes_[child].outputs.end(), inherited.begin(),
                                             inherited.end());
                queue.push_back(child);
            }
        }
    }

    // Marks hits[p] = true for every pattern p occurring in text.
    void scan(std::string_view text, std::vector<char>& hits) const {
        int node = 0;
        for (unsigned char c : text) {
            while (node != 0 && nodes_[node].next.find(c) == nodes_[node].next.end())
                node = nodes_[node].fail;
            auto it = nodes_[node].next.find(c);
            node = it != nodes_[node].next.end() ? it->second : 0;
            for (int p : nodes_[node].outputs) hits[p] = 1;
        }
        // The empty needle matches everything.
        for (int p = 0; p < pattern_count(); ++p)
            if (patterns_[p].empty()) hits[p] = 1;
    }

private:
    struct Node {
        std::unordered_map<unsigned char, int> next;
        int fail = 0;
        std::vector<int> outputs;  // pattern indices ending here
    };
    std::vector<Node> nodes_;
    std::vector<std::string> patterns_;
    std::unordered_map<std::string, int> ids_;
};

class ScriptedMockBackend : public ChatBackend {
public:
    explicit ScriptedMockBackend(std::vector<ScriptEntry> entries)
        : entries_(std::move(entries)) {
        for (auto& entry : entries_) {
            entry.needle_ids.clear();
            for (const auto& needle : entry.needles)
                entry.needle_ids.push_back(automaton_.add(needle));
        }
        automaton_.build();
    }

    static Result<std::unique_ptr<ChatBackend>> load(const std::string& path) {
        std::ifstream in(path);
        if (!in)
            return make_error(ErrorCode::ConfigError, "cannot open mock script: " + path);
        std::vector<ScriptEntry> entries;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (text::trim(line).empty()) continue;
            Json j = Json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                return make_error(ErrorCode::ConfigError,
                                  path + ":" + std::to_string(line_no) + ": not a JSON object");
            ScriptEntry entry;
            if (j.contains("match") && j["match"].is_string()) {
                entry.needles.push_back(j["match"].get<std::string>());
            } else if (j.contains("match") && j["match"].is_array()) {
                for (const auto& m : j["match"]) {
                    if (!m.is_string())
                        return make_error(ErrorCode::ConfigError,
                                          path + ":" + std::to_string(line_no) +
                                              ": match entries must be strings");
                    entry.needles.push_back(m.get<std::string>());
                }
            } else {
                return make_error(ErrorCode::ConfigError,
                                  path + ":" + std::to_string(line_no) + ": missing match");
            }
            std::string kind = j.value("kind", std::string("substring"));
            if (kind == "exact") {
                entry.exact = true;
            } else if (kind != "substring") {
                return make_error(ErrorCode::ConfigError,
                                  path + ":" + std::to_string(line_no) + ": bad kind " + kind);
            }
            entry.response = j.value("response", std::string());
            entry.fail = j.value("fail", std::string());
            if (!entry.fail.empty() && entry.fail != "auth" && entry.fail != "rate_limit" &&
                entry.fail != "malformed" && entry.fail != "network")
                return make_error(ErrorCode::ConfigError,
                                  path + ":" + std::to_string(line_no) + ": bad fail mode " +
                                      entry.fail);
            entries.push_back(std::move(entry));
        }
        return std::unique_ptr<ChatBackend>(new ScriptedMockBackend(std::move(entries)));
    }

    Result<std::string> send(const ChatRequest& request) override {
        std::string joined;
        for (const auto& m : request.messages()) {
            if (!joined.empty()) joined += '\n';
            joined += m.content;
        }
        std::vector<char> hits(automaton_.pattern_count(), 0);
        automaton_.scan(joined, hits);
        for (const auto& entry : entries_) {
            if (!matches(entry, joined, hits)) continue;
            if (entry.fail == "auth")
                return make_error(ErrorCode::AuthError, "scripted auth failure");
            if (entry.fail == "rate_limit")
                return make_error(ErrorCode::BackendBusy, "scripted rate limit");
            if (entry.fail == "network")
                return make_error(ErrorCode::NetworkError, "scripted network failure");
            if (entry.fail == "malformed") return std::string("this is not a completion body");
            return make_completion_body(entry.response);
        }
        return make_error(ErrorCode::NoScriptMatch,
                          "no script entry matches request starting: " + joined.substr(0, 160));
    }

private:
    static bool matches(const ScriptEntry& entry, const std::string& joined,
                        const std::vector<char>& hits) {
        if (entry.exact) {
            for (const auto& needle : entry.needles)
                if (joined != needle) return false;
            return true;
        }
        for (int id : entry.needle_ids)
            if (!hits[id]) return false;
        return true;
    }

    std::vector<ScriptEntry> entries_;
    NeedleAutomaton automaton_;
};

// ---------------------------------------------------------------------------
// Command backend
// ---------------------------------------------------------------------------

class CommandBackend : public ChatBackend {
public:
    explicit CommandBackend(std::string command) : command_(std::move(command)) {}

    Result<std::string> send(const ChatRequest& request) override {
        // The command sees the last user message on stdin and must print the
        // completion on stdout.
        const std::string* prompt = nullptr;
        for (const auto& m : request.messages())
            if (m.role == "user") prompt = &m.content;
        if (prompt == nullptr)
            return make_error(ErrorCode::InvalidArgument, "command backend needs a user message");

        static std::atomic<std::uint64_t> counter{0};
        auto tag = std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
        fs::path in_path = fs::temp_directory_path() / ("mtpatcher_cmd_in." + tag);
        fs::path out_path = fs::temp_directory_path() / ("mtpatcher_cmd_out." + tag);
        {
            std::ofstream in(in_path, std::ios::binary);
            in << *prompt << '\n';
        }

        std::string shell = command_ + " < '" + in_path.string() + "' > '" + out_path.string() +
                            "' 2>/dev/null";
        int status = std::system(shell.c_str());

        std::string output;
        {
            std::ifstream out(out_path, std::ios::binary);
            std::ostringstream buf;
            buf << out.rdbuf();
            output = buf.str();
        }
        std::error_code ignored;
        fs::remove(in_path, ignored);
        fs::remove(out_path, ignored);

        if (status != 0)
            return make_error(ErrorCode::RequestRejected,
                              "command exited with status " + std::to_string(status));
        while (!output.empty() && (output.back() == '\n' || output.back() == '\r'))
            output.pop_back();
        return make_completion_body(output);
    }

private:
    std::string command_;
};

}  // namespace

Result<std::unique_ptr<ChatBackend>> make_backend(const BackendSpec& spec, int timeout_ms) {
    if (auto bad = spec.validate(); !bad) return bad.error();
    switch (spec.kind) {
        case BackendKind::Remote:
            return std::unique_ptr<ChatBackend>(new RemoteBackend(spec, timeout_ms));
        case BackendKind::ScriptedMock:
            return ScriptedMockBackend::load(spec.script_path);
        case BackendKind::Command:
            return std::unique_ptr<ChatBackend>(new CommandBackend(spec.command));
    }
    return make_error(ErrorCode::ConfigError, "unknown backend kind");
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

namespace {

int backoff_delay_ms(const RetryPolicy& policy, int attempt) {
    double delay = static_cast<double>(policy.base_delay_ms);
    for (int i = 1; i < attempt; ++i) delay *= policy.factor;
    if (delay > policy.max_delay_ms) delay = policy.max_delay_ms;
    if (!policy.jitter) return static_cast<int>(delay);
    thread_local std::mt19937_64 rng(std::random_device{}() ^
                                     std::hash<std::thread::id>{}(std::this_thread::get_id()));
    std::uniform_int_distribution<int> dist(0, static_cast<int>(delay));
    return dist(rng);
}

std::string cache_file_for(const std::string& cache_dir, const std::string& key) {
    return (fs::path(cache_dir) / key.substr(0, 2) / (key + ".resp")).string();
}

bool read_file(const std::string& path, std::string& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::ostringstream buf;
    buf << in.rdbuf();
    out = buf.str();
    return true;
}

void write_file_atomic(const std::string& path, const std::string& body) {
    static std::atomic<std::uint64_t> counter{0};
    fs::path target(path);
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary);
        out << body;
    }
    fs::rename(tmp, target, ec);
    if (ec) fs::remove(tmp, ec);
}

}  // namespace

Gateway::Gateway(GatewayConfig config) : config_(std::move(config)) {}

Result<ChatBackend*> Gateway::backend_for(const BackendSpec& spec) {
    std::lock_guard lock(backends_mutex_);
    auto key = spec.fingerprint();
    auto it = backends_.find(key);
    if (it != backends_.end()) return it->second.get();
    auto made = make_backend(spec, config_.timeout_ms);
    if (!made) return made.error();
    auto [inserted, _] = backends_.emplace(key, std::move(*made));
    return inserted->second.get();
}

Result<ChatResponse> Gateway::complete(const BackendSpec& backend, const ChatRequest& request) {
    auto instance = backend_for(backend);
    if (!instance) return instance.error();
    return complete(**instance, request);
}

Result<ChatResponse> Gateway::complete(ChatBackend& backend, const ChatRequest& request) {
    const bool cache_enabled = !config_.cache_dir.empty();
    std::string cache_path;
    if (cache_enabled) {
        cache_path = cache_file_for(config_.cache_dir, request.request_key());
        std::string body;
        if (read_file(cache_path, body)) {
            if (auto parsed = parse_completion_body(body)) {
                cache_hits_.fetch_add(1);
                parsed->cached = true;
                return parsed;
            }
            // Unreadable cache entries are treated as misses and rewritten.
        }
        cache_misses_.fetch_add(1);
    }

    const RetryPolicy& retry = config_.retry;
    for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
        backend_calls_.fetch_add(1);
        auto body = backend.send(request);
        if (body) {
            auto parsed = parse_completion_body(*body);
            if (!parsed) return parsed.error();
            if (cache_enabled) write_file_atomic(cache_path, *body);
            return parsed;
        }
        ErrorCode code = body.code();
        bool transient = code == ErrorCode::BackendBusy || code == ErrorCode::NetworkError;
        if (!transient) return body.error();
        if (attempt == retry.max_attempts) {
            if (code == ErrorCode::BackendBusy)
                return make_error(ErrorCode::RateLimitExhausted,
                                  "gave up after " + std::to_string(retry.max_attempts) +
                                      " attempts: " + body.error().message);
            return make_error(ErrorCode::NetworkError,
                              "gave up after " + std::to_string(retry.max_attempts) +
                                  " attempts: " + body.error().message);
        }
        retries_.fetch_add(1);
        int delay = backoff_delay_ms(retry, attempt);
        if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
    return make_error(ErrorCode::NetworkError, "retry loop exited unexpectedly");
}

std::vector<Result<ChatResponse>> Gateway::complete_batch(const BackendSpec& backend,
                                                          const std::vector<ChatRequest>& requests,
                                                          int parallelism) {
    auto instance = backend_for(backend);
    if (!instance)
        return std::vector<Result<ChatResponse>>(requests.size(),
                                                 Result<ChatResponse>(instance.error()));
    return complete_batch(**instance, requests, parallelism);
}

std::vector<Result<ChatResponse>> Gateway::complete_batch(ChatBackend& backend,
                                                          const std::vector<ChatRequest>& requests,
                                                          int parallelism) {
    std::vector<Result<ChatResponse>> results(
        requests.size(),
        Result<ChatResponse>(make_error(ErrorCode::StageFailure, "request not processed")));
    if (requests.empty()) return results;
    if (parallelism < 1) parallelism = 1;

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= requests.size()) break;
            results[i] = complete(backend, requests[i]);
        }
    };

    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(parallelism),
                                                requests.size());
    if (workers <= 1) {
        worker();
        return results;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return results;
}

GatewayStats Gateway::stats() const {
    return GatewayStats{cache_hits_.load(), cache_misses_.load(), backend_calls_.load(),
                        retries_.load()};
}

}  // namespace mtpatcher::gateway
