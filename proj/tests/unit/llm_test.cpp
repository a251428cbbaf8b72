#include <gtest/gtest.h>

#include <cstdlib>

#include "drsr/llm.hpp"
#include "mock_chat_server.hpp"
#include "test_support.hpp"

using namespace drsr;
using namespace drsr::llm;

namespace {

ChatRequest request(Role role, std::size_t n = 1) {
    ChatRequest r;
    r.role = role;
    r.system_prompt = "system";
    r.user_prompt = "user";
    r.sampling = Sampling::defaults_for(role);
    r.n_samples = n;
    return r;
}

HttpConfig http_for(const testkit::MockChatServer& server) {
    HttpConfig cfg;
    cfg.base_url = server.base_url();
    cfg.model = "mock-model";
    cfg.api_key = "secret";
    cfg.max_retries = 2;
    cfg.initial_backoff = std::chrono::milliseconds(1);
    cfg.timeout = std::chrono::seconds(5);
    return cfg;
}

}  // namespace

TEST(Sampling, RoleDefaults) {
    const auto data = Sampling::defaults_for(Role::data);
    EXPECT_DOUBLE_EQ(data.temperature, 0.6);
    EXPECT_EQ(data.top_k, 30);
    EXPECT_DOUBLE_EQ(data.top_p, 0.3);
    for (auto r : {Role::main, Role::idea}) {
        const auto s = Sampling::defaults_for(r);
        EXPECT_DOUBLE_EQ(s.temperature, 0.8);
        EXPECT_FALSE(s.top_k.has_value());
        EXPECT_DOUBLE_EQ(s.top_p, 0.95);
    }
    const auto merged = sampling_from_json({{"temperature", 0.1}}, data);
    EXPECT_DOUBLE_EQ(merged.temperature, 0.1);
    EXPECT_EQ(merged.top_k, 30);
    EXPECT_EQ(sampling_from_json(to_json(data), {}), data);
}

TEST(Request, Validation) {
    auto r = request(Role::main, 0);
    EXPECT_THROW(r.validate(), std::invalid_argument);
    r = request(Role::main);
    r.sampling.temperature = -1;
    EXPECT_THROW(r.validate(), std::invalid_argument);
    EXPECT_THROW((void)role_from_string("critic"), std::invalid_argument);
    EXPECT_EQ(role_from_string("idea"), Role::idea);
}

TEST(Replay, ServesPerRoleInOrder) {
    ReplayBackend b({{Role::main, 0, {"a", "b"}}, {Role::main, 1, {"c", "d"}}, {Role::data, 0, {"insight"}}});
    EXPECT_EQ(b.complete(request(Role::main, 2)).completions, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(b.complete(request(Role::data)).completions, (std::vector<std::string>{"insight"}));
    EXPECT_EQ(b.complete(request(Role::main, 2)).completions, (std::vector<std::string>{"c", "d"}));
    EXPECT_EQ(b.served(Role::main), 2u);
    EXPECT_EQ(b.served(Role::idea), 0u);
    EXPECT_FALSE(b.uses_network());
}

TEST(Replay, RolesAreIsolated) {
    ReplayBackend b({{Role::main, 0, {"m0"}}, {Role::idea, 0, {"i0"}}, {Role::idea, 1, {"i1"}}});
    EXPECT_EQ(b.complete(request(Role::idea)).completions.front(), "i0");
    EXPECT_EQ(b.complete(request(Role::idea)).completions.front(), "i1");
    // Idea traffic does not advance the main cursor.
    EXPECT_EQ(b.complete(request(Role::main)).completions.front(), "m0");
}

TEST(Replay, ExhaustionAndMismatch) {
    ReplayBackend b({{Role::main, 0, {"only"}}});
    try {
        (void)b.complete(request(Role::main, 2));
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::malformed);
    }
    ReplayBackend c({{Role::main, 0, {"only"}}});
    (void)c.complete(request(Role::main));
    try {
        (void)c.complete(request(Role::main));
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::exhausted);
    }
    EXPECT_THROW(ReplayBackend({{Role::main, 0, {"a"}}, {Role::main, 0, {"b"}}}), BackendError);
}

TEST(Replay, JsonRoundTrip) {
    const auto script = testkit::replay_script(3, 2);
    auto b = ReplayBackend::from_json(to_json(script));
    EXPECT_EQ(b.complete(request(Role::main, 2)).completions, script.front().completions);
    EXPECT_THROW((void)ReplayBackend::from_json(nlohmann::json::object()), BackendError);
    EXPECT_THROW((void)ReplayBackend::from_json(nlohmann::json::array({{{"completions", {"x"}}}})), BackendError);
}

TEST(Scripted, RecordsRequests) {
    ScriptedBackend b(testkit::scripted_answer);
    (void)b.complete(request(Role::main, 3));
    (void)b.complete(request(Role::data));
    const auto reqs = b.requests();
    ASSERT_EQ(reqs.size(), 2u);
    EXPECT_EQ(reqs[0].n_samples, 3u);
    EXPECT_EQ(reqs[1].role, Role::data);
}

TEST(HttpConfigEnv, ExplicitValuesWin) {
    ::setenv("DRSR_API_BASE", "http://env.example/v1", 1);
    ::setenv("DRSR_MODEL", "env-model", 1);
    ::setenv("DRSR_API_KEY", "env-key", 1);
    const auto from_env = HttpConfig::from_env();
    EXPECT_EQ(from_env.base_url, "http://env.example/v1");
    EXPECT_EQ(from_env.model, "env-model");
    EXPECT_EQ(from_env.api_key, "env-key");
    HttpConfig over;
    over.model = "explicit";
    EXPECT_EQ(HttpConfig::from_env(over).model, "explicit");
    ::unsetenv("DRSR_API_BASE");
    ::unsetenv("DRSR_MODEL");
    ::unsetenv("DRSR_API_KEY");
}

TEST(OpenAi, RejectsBadConfig) {
    HttpConfig cfg;
    cfg.model = "m";
    EXPECT_THROW(OpenAiBackend{cfg}, std::invalid_argument);
    cfg.base_url = "ftp://x/v1";
    EXPECT_THROW(OpenAiBackend{cfg}, std::invalid_argument);
}

TEST(OpenAi, SendsWireFormat) {
    testkit::MockChatServer server;
    OpenAiBackend b(http_for(server));
    auto resp = b.complete(request(Role::data));
    ASSERT_EQ(resp.completions.size(), 1u);
    const auto bodies = server.bodies();
    ASSERT_EQ(bodies.size(), 1u);
    EXPECT_EQ(bodies[0].at("model"), "mock-model");
    EXPECT_EQ(bodies[0].at("messages").size(), 2u);
    EXPECT_EQ(bodies[0].at("top_k"), 30);
    EXPECT_DOUBLE_EQ(bodies[0].at("temperature").get<double>(), 0.6);
    EXPECT_EQ(server.auth_headers()[0], "Bearer secret");
    EXPECT_TRUE(b.uses_network());
}

TEST(OpenAi, RetriesTransientFailures) {
    std::atomic<int> calls{0};
    testkit::MockChatServer server([&](const nlohmann::json&, std::size_t call) -> testkit::MockReply {
        ++calls;
        if (call == 0) return {500, "oops"};
        if (call == 1) return {429, "slow down"};
        return {200, testkit::chat_body({"ok"})};
    });
    std::vector<std::chrono::milliseconds> sleeps;
    OpenAiBackend b(http_for(server), [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
    auto resp = b.complete(request(Role::main));
    EXPECT_EQ(resp.completions.front(), "ok");
    EXPECT_EQ(calls.load(), 3);
    ASSERT_EQ(sleeps.size(), 2u);
    EXPECT_EQ(sleeps[1], 2 * sleeps[0]);
}

TEST(OpenAi, GivesUpAfterRetries) {
    testkit::MockChatServer server([](const nlohmann::json&, std::size_t) { return testkit::MockReply{503, "down"}; });
    OpenAiBackend b(http_for(server), [](std::chrono::milliseconds) {});
    try {
        (void)b.complete(request(Role::main));
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::transport);
    }
    EXPECT_EQ(server.bodies().size(), 3u);
}

TEST(OpenAi, DropsUnsupportedTopK) {
    testkit::MockChatServer server([](const nlohmann::json& body, std::size_t) -> testkit::MockReply {
        if (body.contains("top_k")) return {400, R"({"error":"unknown parameter top_k"})"};
        return {200, testkit::chat_body({"fine"})};
    });
    OpenAiBackend b(http_for(server), [](std::chrono::milliseconds) {});
    EXPECT_EQ(b.complete(request(Role::data)).completions.front(), "fine");
    EXPECT_EQ(b.complete(request(Role::data)).completions.front(), "fine");
    const auto bodies = server.bodies();
    ASSERT_EQ(bodies.size(), 3u);
    EXPECT_FALSE(bodies[2].contains("top_k"));
}

TEST(OpenAi, FallsBackToSingleRequests) {
    testkit::MockChatServer server([](const nlohmann::json& body, std::size_t call) -> testkit::MockReply {
        if (body.value("n", 1) > 1) return {400, R"({"error":"n must be 1"})"};
        return {200, testkit::chat_body({"c" + std::to_string(call)})};
    });
    OpenAiBackend b(http_for(server), [](std::chrono::milliseconds) {});
    const auto resp = b.complete(request(Role::main, 3));
    EXPECT_EQ(resp.completions.size(), 3u);
    // A second batch goes straight to single requests.
    (void)b.complete(request(Role::main, 2));
    EXPECT_EQ(server.bodies().size(), 1u + 3u + 2u);
}

TEST(OpenAi, MalformedBody) {
    testkit::MockChatServer server([](const nlohmann::json&, std::size_t) { return testkit::MockReply{200, "{}"}; });
    OpenAiBackend b(http_for(server), [](std::chrono::milliseconds) {});
    try {
        (void)b.complete(request(Role::main));
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::malformed);
    }
}

TEST(OpenAi, UnreachableEndpointIsTransport) {
    HttpConfig cfg;
    cfg.base_url = "http://127.0.0.1:1/v1";
    cfg.model = "m";
    cfg.max_retries = 1;
    cfg.timeout = std::chrono::seconds(2);
    OpenAiBackend b(cfg, [](std::chrono::milliseconds) {});
    try {
        (void)b.complete(request(Role::main));
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::transport);
    }
}
