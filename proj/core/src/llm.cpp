#include "drsr/llm.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <thread>

#include <httplib.h>

#include "drsr/util.hpp"

namespace drsr::llm {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t elapsed_ms(Clock::time_point start) {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count());
}

std::string env_or(const char* name, const std::string& fallback) {
    if (!fallback.empty()) return fallback;
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
}

bool mentions(const std::string& body, std::string_view needle) { return body.find(needle) != std::string::npos; }

}  // namespace

std::string_view to_string(Role r) noexcept {
    switch (r) {
        case Role::main: return "main";
        case Role::data: return "data";
        case Role::idea: return "idea";
    }
    return "?";
}

Role role_from_string(std::string_view s) {
    for (auto r : {Role::main, Role::data, Role::idea})
        if (to_string(r) == s) return r;
    throw std::invalid_argument("unknown role '" + std::string(s) + "'");
}

Sampling Sampling::defaults_for(Role r) noexcept {
    if (r == Role::data) return {0.6, 30, 0.3};
    return {0.8, std::nullopt, 0.95};
}

nlohmann::json to_json(const Sampling& s) {
    nlohmann::json j{{"temperature", s.temperature}, {"top_p", s.top_p}};
    j["top_k"] = s.top_k ? nlohmann::json(*s.top_k) : nlohmann::json(nullptr);
    return j;
}

Sampling sampling_from_json(const nlohmann::json& j, Sampling base) {
    if (!j.is_object()) throw std::invalid_argument("sampling settings must be a JSON object");
    try {
        base.temperature = j.value("temperature", base.temperature);
        base.top_p = j.value("top_p", base.top_p);
        if (j.contains("top_k")) {
            if (j.at("top_k").is_null()) {
                base.top_k.reset();
            } else {
                base.top_k = j.at("top_k").get<int>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("sampling settings: ") + e.what());
    }
    if (!(base.temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
    if (!(base.top_p > 0.0 && base.top_p <= 1.0)) throw std::invalid_argument("top_p must lie in (0, 1]");
    if (base.top_k && *base.top_k <= 0) throw std::invalid_argument("top_k must be positive");
    return base;
}

void ChatRequest::validate() const {
    if (!(sampling.temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
    if (!(sampling.top_p > 0.0 && sampling.top_p <= 1.0)) throw std::invalid_argument("top_p must lie in (0, 1]");
    if (sampling.top_k && *sampling.top_k <= 0) throw std::invalid_argument("top_k must be positive");
    if (n_samples == 0) throw std::invalid_argument("n_samples must be at least 1");
}

// ---------------------------------------------------------------------------
// Replay

ReplayBackend::ReplayBackend(std::vector<ReplayEntry> script, std::string name) : name_(std::move(name)) {
    for (auto& e : script) {
        auto key = std::pair{e.role, e.sequence_index};
        if (!entries_.emplace(key, std::move(e.completions)).second)
            throw BackendError(BackendErrorKind::malformed, "replay script repeats role '" +
                                                                std::string(to_string(key.first)) + "' index " +
                                                                std::to_string(key.second));
    }
}

ReplayBackend::ReplayBackend(ReplayBackend&& other) noexcept {
    std::lock_guard lock(other.mu_);
    entries_ = std::move(other.entries_);
    cursor_ = std::move(other.cursor_);
    name_ = std::move(other.name_);
}

ReplayBackend ReplayBackend::from_json(const nlohmann::json& j, std::string name) {
    if (!j.is_array()) throw BackendError(BackendErrorKind::malformed, "replay script must be a JSON array");
    std::vector<ReplayEntry> script;
    std::size_t pos = 0;
    for (const auto& item : j) {
        const std::string where = "replay script entry " + std::to_string(pos++);
        try {
            ReplayEntry e;
            const auto& m = item.at("match");
            e.role = role_from_string(m.at("role").get<std::string>());
            e.sequence_index = m.at("sequence_index").get<std::size_t>();
            e.completions = item.at("completions").get<std::vector<std::string>>();
            script.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw BackendError(BackendErrorKind::malformed, where + ": " + ex.what());
        } catch (const std::invalid_argument& ex) {
            throw BackendError(BackendErrorKind::malformed, where + ": " + ex.what());
        }
    }
    return ReplayBackend(std::move(script), std::move(name));
}

ReplayBackend ReplayBackend::from_file(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& ex) {
        throw BackendError(BackendErrorKind::malformed, path.string() + ": " + ex.what());
    }
    return from_json(j, path.filename().string());
}

ChatResponse ReplayBackend::complete(const ChatRequest& req) {
    req.validate();
    std::lock_guard lock(mu_);
    auto& cur = cursor_[req.role];
    auto it = entries_.find({req.role, cur});
    if (it == entries_.end())
        throw BackendError(BackendErrorKind::exhausted, "replay script exhausted for role '" +
                                                            std::string(to_string(req.role)) + "' at index " +
                                                            std::to_string(cur));
    if (it->second.size() != req.n_samples)
        throw BackendError(BackendErrorKind::malformed,
                           "replay entry for role '" + std::string(to_string(req.role)) + "' index " +
                               std::to_string(cur) + " holds " + std::to_string(it->second.size()) +
                               " completions, request wants " + std::to_string(req.n_samples));
    ++cur;
    return {it->second, 0, id()};
}

std::size_t ReplayBackend::served(Role role) const {
    std::lock_guard lock(mu_);
    auto it = cursor_.find(role);
    return it == cursor_.end() ? 0 : it->second;
}

nlohmann::json to_json(const std::vector<ReplayEntry>& script) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : script)
        j.push_back({{"match", {{"role", std::string(to_string(e.role))}, {"sequence_index", e.sequence_index}}},
                     {"completions", e.completions}});
    return j;
}

// ---------------------------------------------------------------------------
// Scripted

ScriptedBackend::ScriptedBackend(Handler handler, std::string name)
    : handler_(std::move(handler)), name_(std::move(name)) {
    if (!handler_) throw std::invalid_argument("ScriptedBackend needs a handler");
}

ChatResponse ScriptedBackend::complete(const ChatRequest& req) {
    req.validate();
    std::size_t seq = 0;
    {
        std::lock_guard lock(mu_);
        seq = cursor_[req.role]++;
        requests_.push_back(req);
    }
    auto out = handler_(req, seq);
    if (out.size() != req.n_samples)
        throw BackendError(BackendErrorKind::malformed, "scripted handler returned " + std::to_string(out.size()) +
                                                            " completions, request wants " +
                                                            std::to_string(req.n_samples));
    return {std::move(out), 0, id()};
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
    std::lock_guard lock(mu_);
    return requests_;
}

// ---------------------------------------------------------------------------
// HTTP

HttpConfig HttpConfig::from_env() { return from_env(HttpConfig{}); }

HttpConfig HttpConfig::from_env(const HttpConfig& overrides) {
    HttpConfig c = overrides;
    c.base_url = env_or("DRSR_API_BASE", overrides.base_url);
    c.api_key = env_or("DRSR_API_KEY", overrides.api_key);
    c.model = env_or("DRSR_MODEL", overrides.model);
    return c;
}

OpenAiBackend::OpenAiBackend(HttpConfig cfg, Sleeper sleeper) : cfg_(std::move(cfg)), sleeper_(std::move(sleeper)) {
    if (cfg_.base_url.empty()) throw std::invalid_argument("chat backend: base URL is empty (set DRSR_API_BASE)");
    if (cfg_.model.empty()) throw std::invalid_argument("chat backend: model is empty (set DRSR_MODEL)");
    if (cfg_.max_concurrency == 0) throw std::invalid_argument("chat backend: max_concurrency must be positive");
    const auto scheme_end = cfg_.base_url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("chat backend: base URL needs http:// or https://");
    const auto scheme = cfg_.base_url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https")
        throw std::invalid_argument("chat backend: unsupported URL scheme '" + scheme + "'");
    const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
    scheme_host_ = cfg_.base_url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? std::string() : cfg_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string OpenAiBackend::id() const { return "openai:" + cfg_.model + "@" + scheme_host_ + path_prefix_; }

void OpenAiBackend::acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < cfg_.max_concurrency; });
    ++in_flight_;
}

void OpenAiBackend::release() {
    {
        std::lock_guard lock(mu_);
        --in_flight_;
    }
    cv_.notify_one();
}

OpenAiBackend::Reply OpenAiBackend::post(const nlohmann::json& body) {
    httplib::Client client(scheme_host_);
    client.set_connection_timeout(cfg_.timeout);
    client.set_read_timeout(cfg_.timeout);
    client.set_write_timeout(cfg_.timeout);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    acquire();
    auto res = client.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
    release();
    Reply r;
    if (!res) {
        r.transport_error = httplib::to_string(res.error());
        return r;
    }
    r.status = res->status;
    r.body = res->body;
    return r;
}

std::vector<std::string> OpenAiBackend::request_choices(const ChatRequest& req, std::size_t n) {
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) sleeper_(cfg_.initial_backoff * (1LL << std::min<std::size_t>(attempt - 1, 16)));
        nlohmann::json body{{"model", cfg_.model},
                            {"messages",
                             {{{"role", "system"}, {"content", req.system_prompt}},
                              {{"role", "user"}, {"content", req.user_prompt}}}},
                            {"temperature", req.sampling.temperature},
                            {"top_p", req.sampling.top_p},
                            {"n", n}};
        bool with_top_k = false;
        {
            std::lock_guard lock(mu_);
            with_top_k = send_top_k_ && req.sampling.top_k.has_value();
        }
        if (with_top_k) body["top_k"] = *req.sampling.top_k;

        const auto reply = post(body);
        if (!reply.transport_error.empty()) {
            last_error = "transport error: " + reply.transport_error;
            continue;
        }
        if (reply.status == 429 || reply.status >= 500) {
            last_error = "HTTP " + std::to_string(reply.status);
            continue;
        }
        if (reply.status >= 400) {
            if (with_top_k && mentions(reply.body, "top_k")) {
                {
                    std::lock_guard lock(mu_);
                    send_top_k_ = false;
                }
                std::cerr << "warning: chat endpoint rejected top_k; continuing without it\n";
                --attempt;  // not a transient failure; retry immediately
                continue;
            }
            if (n > 1) return {};
            throw BackendError(BackendErrorKind::transport,
                               "chat endpoint returned HTTP " + std::to_string(reply.status) + ": " +
                                   reply.body.substr(0, 500));
        }
        try {
            const auto j = nlohmann::json::parse(reply.body);
            std::vector<std::string> out;
            for (const auto& choice : j.at("choices")) {
                const auto& content = choice.at("message").at("content");
                out.push_back(content.is_null() ? std::string() : content.get<std::string>());
            }
            return out;
        } catch (const nlohmann::json::exception& ex) {
            throw BackendError(BackendErrorKind::malformed, std::string("malformed chat response: ") + ex.what());
        }
    }
    throw BackendError(BackendErrorKind::transport, "chat request failed after " +
                                                        std::to_string(cfg_.max_retries + 1) +
                                                        " attempts: " + last_error);
}

ChatResponse OpenAiBackend::complete(const ChatRequest& req) {
    req.validate();
    const auto start = Clock::now();
    bool batch = false;
    {
        std::lock_guard lock(mu_);
        batch = allow_n_ && req.n_samples > 1;
    }
    std::vector<std::string> out;
    if (batch) {
        out = request_choices(req, req.n_samples);
        if (out.size() != req.n_samples) {
            std::cerr << "warning: chat endpoint did not honour n=" << req.n_samples
                      << "; falling back to single requests\n";
            std::lock_guard lock(mu_);
            allow_n_ = false;
            out.clear();
        }
    }
    while (out.size() < req.n_samples) {
        auto one = request_choices(req, 1);
        if (one.empty()) throw BackendError(BackendErrorKind::malformed, "chat response holds no choices");
        out.push_back(std::move(one.front()));
    }
    return {std::move(out), elapsed_ms(start), id()};
}

}  // namespace drsr::llm
