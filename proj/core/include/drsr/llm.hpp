#pragma once

// Chat backends for the three model roles: a live OpenAI-compatible HTTP
// client, a replay backend driven by a JSON script, and a scripted backend
// for tests.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace drsr::llm {

enum class Role : std::uint8_t { main, data, idea };

[[nodiscard]] std::string_view to_string(Role r) noexcept;
/// Throws std::invalid_argument.
[[nodiscard]] Role role_from_string(std::string_view s);

struct Sampling {
    double temperature = 0.8;
    std::optional<int> top_k;
    double top_p = 0.95;

    /// data: 0.6 / 30 / 0.3; main and idea: 0.8 / none / 0.95.
    [[nodiscard]] static Sampling defaults_for(Role r) noexcept;
    bool operator==(const Sampling&) const = default;
};

[[nodiscard]] nlohmann::json to_json(const Sampling& s);
/// Fields missing from `j` keep the values of `base`.
[[nodiscard]] Sampling sampling_from_json(const nlohmann::json& j, Sampling base);

struct ChatRequest {
    Role role = Role::main;
    std::string system_prompt;
    std::string user_prompt;
    Sampling sampling;
    std::size_t n_samples = 1;

    /// Throws std::invalid_argument.
    void validate() const;
};

struct ChatResponse {
    std::vector<std::string> completions;
    std::uint64_t latency_ms = 0;
    std::string backend_id;
};

enum class BackendErrorKind : std::uint8_t { transport, exhausted, malformed };

class BackendError : public std::runtime_error {
public:
    BackendError(BackendErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] BackendErrorKind kind() const noexcept { return kind_; }

private:
    BackendErrorKind kind_;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// Returns exactly req.n_samples completions or throws BackendError.
    virtual ChatResponse complete(const ChatRequest& req) = 0;
    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual bool uses_network() const noexcept { return false; }
};

struct ReplayEntry {
    Role role = Role::main;
    std::size_t sequence_index = 0;
    std::vector<std::string> completions;
};

/// Serves scripted completions in per-role order. Request i of a role gets
/// the entry with that role and sequence_index i.
class ReplayBackend final : public ChatBackend {
public:
    /// Throws BackendError(malformed) on duplicate (role, index) pairs.
    explicit ReplayBackend(std::vector<ReplayEntry> script, std::string name = "replay");
    ReplayBackend(ReplayBackend&& other) noexcept;

    /// Throws BackendError(malformed) on a schema violation.
    static ReplayBackend from_json(const nlohmann::json& j, std::string name = "replay");
    /// Throws std::runtime_error if unreadable, BackendError if malformed.
    static ReplayBackend from_file(const std::filesystem::path& path);

    ChatResponse complete(const ChatRequest& req) override;
    [[nodiscard]] std::string id() const override { return "replay:" + name_; }

    /// Requests served so far for `role`.
    [[nodiscard]] std::size_t served(Role role) const;

private:
    std::map<std::pair<Role, std::size_t>, std::vector<std::string>> entries_;
    std::map<Role, std::size_t> cursor_;
    std::string name_;
    mutable std::mutex mu_;
};

[[nodiscard]] nlohmann::json to_json(const std::vector<ReplayEntry>& script);

/// Answers through a callback; records every request. For tests.
class ScriptedBackend final : public ChatBackend {
public:
    /// Receives the request and its per-role sequence number.
    using Handler = std::function<std::vector<std::string>(const ChatRequest&, std::size_t)>;

    explicit ScriptedBackend(Handler handler, std::string name = "scripted");

    ChatResponse complete(const ChatRequest& req) override;
    [[nodiscard]] std::string id() const override { return "scripted:" + name_; }

    [[nodiscard]] std::vector<ChatRequest> requests() const;

private:
    Handler handler_;
    std::string name_;
    std::map<Role, std::size_t> cursor_;
    std::vector<ChatRequest> requests_;
    mutable std::mutex mu_;
};

struct HttpConfig {
    /// Base URL including the API prefix, e.g. https://api.openai.com/v1.
    std::string base_url;
    std::string api_key;
    std::string model;
    std::size_t max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::seconds timeout{120};
    std::size_t max_concurrency = 4;

    /// Reads DRSR_API_BASE, DRSR_API_KEY and DRSR_MODEL; explicit values in
    /// `overrides` win over the environment.
    [[nodiscard]] static HttpConfig from_env(const HttpConfig& overrides);
    [[nodiscard]] static HttpConfig from_env();
};

/// OpenAI-compatible chat-completions client.
class OpenAiBackend final : public ChatBackend {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    /// Throws std::invalid_argument for an empty or unsupported base URL or model.
    explicit OpenAiBackend(HttpConfig cfg, Sleeper sleeper = {});

    ChatResponse complete(const ChatRequest& req) override;
    [[nodiscard]] std::string id() const override;
    [[nodiscard]] bool uses_network() const noexcept override { return true; }

private:
    struct Reply {
        int status = 0;
        std::string body;
        std::string transport_error;
    };

    Reply post(const nlohmann::json& body);
    std::vector<std::string> request_choices(const ChatRequest& req, std::size_t n);
    void acquire();
    void release();

    HttpConfig cfg_;
    Sleeper sleeper_;
    std::string scheme_host_;
    std::string path_prefix_;
    bool send_top_k_ = true;
    bool allow_n_ = true;
    std::mutex mu_;
    std::condition_variable cv_;
    std::size_t in_flight_ = 0;
};

}  // namespace drsr::llm
