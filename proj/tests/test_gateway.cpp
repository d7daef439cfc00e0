#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "mtpatcher/gateway.hpp"
#include "support.hpp"

using namespace mtpatcher;
using testsupport::ScriptBuilder;
using testsupport::TempDir;

namespace {

gateway::ChatRequest simple_request(const std::string& prompt,
                                    const std::string& model = "mock-model",
                                    double temperature = 0.0, int max_tokens = 64) {
    auto r = gateway::ChatRequest::create(model, {{"user", prompt}}, temperature, max_tokens);
    REQUIRE(r.ok());
    return *r;
}

}  // namespace

TEST_SUITE("llm_gateway") {

TEST_CASE("request creation validates roles, temperature and token budget") {
    CHECK(gateway::ChatRequest::create("", {{"user", "x"}}, 0.0, 8).code() ==
          ErrorCode::InvalidArgument);
    CHECK(gateway::ChatRequest::create("m", {}, 0.0, 8).code() == ErrorCode::InvalidArgument);
    CHECK(gateway::ChatRequest::create("m", {{"assistant", "x"}}, 0.0, 8).code() ==
          ErrorCode::InvalidArgument);
    CHECK(gateway::ChatRequest::create("m", {{"user", "x"}, {"tool", "y"}}, 0.0, 8).code() ==
          ErrorCode::InvalidArgument);
    CHECK(gateway::ChatRequest::create("m", {{"user", "x"}}, -0.1, 8).code() ==
          ErrorCode::InvalidArgument);
    CHECK(gateway::ChatRequest::create("m", {{"user", "x"}}, 0.0, 0).code() ==
          ErrorCode::InvalidArgument);
    CHECK(gateway::ChatRequest::create("m", {{"system", "s"}, {"user", "x"}}, 0.0, 8).ok());
}

TEST_CASE("request keys identify model, messages and temperature but not max_tokens") {
    auto base = simple_request("hello");
    CHECK(base.request_key() == simple_request("hello").request_key());
    CHECK(base.request_key() == simple_request("hello", "mock-model", 0.0, 4096).request_key());
    CHECK(base.request_key() != simple_request("hello!").request_key());
    CHECK(base.request_key() != simple_request("hello", "other-model").request_key());
    CHECK(base.request_key() != simple_request("hello", "mock-model", 0.7).request_key());
    CHECK(base.request_key().size() == 64);
}

TEST_CASE("wire format carries all four request fields") {
    auto wire = simple_request("ping", "m1", 0.5, 77).to_wire();
    CHECK(wire["model"] == "m1");
    CHECK(wire["temperature"] == 0.5);
    CHECK(wire["max_tokens"] == 77);
    REQUIRE(wire["messages"].is_array());
    CHECK(wire["messages"][0]["role"] == "user");
    CHECK(wire["messages"][0]["content"] == "ping");
}

TEST_CASE("completion bodies round-trip through parse") {
    auto parsed = gateway::parse_completion_body(gateway::make_completion_body("the answer"));
    REQUIRE(parsed.ok());
    CHECK(parsed->content == "the answer");
    CHECK_FALSE(parsed->cached);

    CHECK(gateway::parse_completion_body("not json").code() == ErrorCode::MalformedResponse);
    CHECK(gateway::parse_completion_body("{}").code() == ErrorCode::MalformedResponse);
    CHECK(gateway::parse_completion_body(R"({"choices":[]})").code() ==
          ErrorCode::MalformedResponse);
    CHECK(gateway::parse_completion_body(R"({"choices":[{"message":{}}]})").code() ==
          ErrorCode::MalformedResponse);
}

TEST_CASE("backend specs validate per kind and fingerprint their identity") {
    gateway::BackendSpec mock = testsupport::mock_spec("/tmp/x.jsonl");
    CHECK(mock.validate().ok());

    gateway::BackendSpec no_model = mock;
    no_model.model.clear();
    CHECK(no_model.validate().code() == ErrorCode::ConfigError);

    gateway::BackendSpec remote;
    remote.kind = gateway::BackendKind::Remote;
    remote.model = "m";
    CHECK(remote.validate().code() == ErrorCode::ConfigError);  // missing endpoint_url
    remote.endpoint_url = "http://localhost:1/v1/chat/completions";
    CHECK(remote.validate().ok());

    gateway::BackendSpec command;
    command.kind = gateway::BackendKind::Command;
    command.model = "m";
    CHECK(command.validate().code() == ErrorCode::ConfigError);
    command.command = "cat";
    CHECK(command.validate().ok());

    CHECK(mock.fingerprint() != remote.fingerprint());
    gateway::BackendSpec other_script = mock;
    other_script.script_path = "/tmp/y.jsonl";
    CHECK(mock.fingerprint() != other_script.fingerprint());
    CHECK(mock.fingerprint() == testsupport::mock_spec("/tmp/x.jsonl").fingerprint());
}

TEST_CASE("backend spec json parsing rejects unknown kinds") {
    auto bad = gateway::BackendSpec::from_json(gateway::Json{{"kind", "psychic"}, {"model", "m"}});
    CHECK(bad.code() == ErrorCode::ConfigError);
    auto good = gateway::BackendSpec::from_json(
        gateway::Json{{"kind", "scripted_mock"}, {"model", "m"}, {"script", "s.jsonl"}});
    REQUIRE(good.ok());
    CHECK(good->script_path == "s.jsonl");
    CHECK(good->credential_env == "MTPATCHER_API_KEY");
}

TEST_CASE("scripted mock answers with the first entry whose needles all hit") {
    TempDir dir;
    ScriptBuilder()
        .respond_all({"alpha", "beta"}, "both words")
        .respond("alpha", "just alpha")
        .respond("", "fallback")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto spec = testsupport::mock_spec(dir.file("script.jsonl"));

    auto both = gw.complete(spec, simple_request("alpha then beta"));
    REQUIRE(both.ok());
    CHECK(both->content == "both words");

    auto single = gw.complete(spec, simple_request("alpha alone"));
    REQUIRE(single.ok());
    CHECK(single->content == "just alpha");

    auto fallback = gw.complete(spec, simple_request("nothing relevant"));
    REQUIRE(fallback.ok());
    CHECK(fallback->content == "fallback");
}

TEST_CASE("scripted mock exact entries match the whole prompt only") {
    TempDir dir;
    ScriptBuilder()
        .respond_exact("exact prompt", "exact reply")
        .respond("exact", "loose reply")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto spec = testsupport::mock_spec(dir.file("script.jsonl"));

    auto exact = gw.complete(spec, simple_request("exact prompt"));
    REQUIRE(exact.ok());
    CHECK(exact->content == "exact reply");

    auto loose = gw.complete(spec, simple_request("exact prompt plus more"));
    REQUIRE(loose.ok());
    CHECK(loose->content == "loose reply");
}

TEST_CASE("unmatched prompts produce a typed no-match error") {
    TempDir dir;
    ScriptBuilder().respond("known needle", "reply").save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto result = gw.complete(testsupport::mock_spec(dir.file("script.jsonl")),
                              simple_request("unseen prompt"));
    REQUIRE_FALSE(result.ok());
    CHECK(result.code() == ErrorCode::NoScriptMatch);
}

TEST_CASE("auth and malformed failures are returned without retries") {
    TempDir dir;
    ScriptBuilder()
        .fail("denied", "auth")
        .fail("garbage", "malformed")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto spec = testsupport::mock_spec(dir.file("script.jsonl"));

    CHECK(gw.complete(spec, simple_request("denied")).code() == ErrorCode::AuthError);
    CHECK(gw.complete(spec, simple_request("garbage")).code() == ErrorCode::MalformedResponse);
    CHECK(gw.stats().backend_calls == 2);
    CHECK(gw.stats().retries == 0);
}

TEST_CASE("persistent rate limiting exhausts the retry budget") {
    TempDir dir;
    ScriptBuilder().fail("slow down", "rate_limit").save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto result = gw.complete(testsupport::mock_spec(dir.file("script.jsonl")),
                              simple_request("slow down please"));
    REQUIRE_FALSE(result.ok());
    CHECK(result.code() == ErrorCode::RateLimitExhausted);
    CHECK(gw.stats().backend_calls == 5);
    CHECK(gw.stats().retries == 4);
}

TEST_CASE("persistent network failure keeps its own error code") {
    TempDir dir;
    ScriptBuilder().fail("flaky", "network").save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto result = gw.complete(testsupport::mock_spec(dir.file("script.jsonl")),
                              simple_request("flaky link"));
    REQUIRE_FALSE(result.ok());
    CHECK(result.code() == ErrorCode::NetworkError);
    CHECK(gw.stats().backend_calls == 5);
}

TEST_CASE("disk cache serves repeats without touching the backend") {
    TempDir dir;
    ScriptBuilder().respond("cached question", "cached answer").save(dir.file("script.jsonl"));
    auto spec = testsupport::mock_spec(dir.file("script.jsonl"));
    auto request = simple_request("cached question");

    auto gw = testsupport::fast_gateway(dir.file("cache"));
    auto first = gw.complete(spec, request);
    REQUIRE(first.ok());
    CHECK_FALSE(first->cached);
    auto second = gw.complete(spec, request);
    REQUIRE(second.ok());
    CHECK(second->cached);
    CHECK(second->content == "cached answer");
    CHECK(gw.stats().backend_calls == 1);
    CHECK(gw.stats().cache_hits == 1);
    CHECK(gw.stats().cache_misses == 1);

    // Entries shard into two-hex-digit directories keyed by the request hash.
    auto expected = std::filesystem::path(dir.file("cache")) /
                    request.request_key().substr(0, 2) / (request.request_key() + ".resp");
    CHECK(std::filesystem::exists(expected));

    // A fresh gateway over the same directory starts warm.
    auto gw2 = testsupport::fast_gateway(dir.file("cache"));
    auto warm = gw2.complete(spec, request);
    REQUIRE(warm.ok());
    CHECK(warm->cached);
    CHECK(gw2.stats().backend_calls == 0);
}

TEST_CASE("batched completion preserves request order under parallelism") {
    TempDir dir;
    ScriptBuilder builder;
    std::vector<gateway::ChatRequest> requests;
    for (int i = 0; i < 24; ++i) {
        std::string tag = "item-" + std::to_string(i) + "-end";
        builder.respond(tag, "reply " + std::to_string(i));
        requests.push_back(simple_request("ask about " + tag));
    }
    builder.save(dir.file("script.jsonl"));

    auto gw = testsupport::fast_gateway();
    auto results = gw.complete_batch(testsupport::mock_spec(dir.file("script.jsonl")), requests, 8);
    REQUIRE(results.size() == 24);
    for (int i = 0; i < 24; ++i) {
        REQUIRE(results[i].ok());
        CHECK(results[i]->content == "reply " + std::to_string(i));
    }
    CHECK(gw.stats().backend_calls == 24);
}

TEST_CASE("per-item failures never abort the rest of a batch") {
    TempDir dir;
    ScriptBuilder()
        .fail("bad item", "auth")
        .respond("good item", "fine")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    std::vector<gateway::ChatRequest> requests{simple_request("good item one"),
                                               simple_request("bad item here"),
                                               simple_request("good item two")};
    auto results =
        gw.complete_batch(testsupport::mock_spec(dir.file("script.jsonl")), requests, 2);
    REQUIRE(results.size() == 3);
    CHECK(results[0].ok());
    CHECK(results[1].code() == ErrorCode::AuthError);
    CHECK(results[2].ok());
}

TEST_CASE("remote backend sends bearer credentials and survives a 429") {
    std::atomic<int> hits{0};
    httplib::Server server;
    server.Post("/v1/chat/completions",
                [&](const httplib::Request& req, httplib::Response& res) {
                    if (req.get_header_value("Authorization") != "Bearer test-secret-token") {
                        res.status = 401;
                        return;
                    }
                    if (hits.fetch_add(1) == 0) {
                        res.status = 429;
                        return;
                    }
                    auto body = gateway::Json::parse(req.body);
                    std::string prompt = body["messages"][0]["content"].get<std::string>();
                    res.set_content(gateway::make_completion_body("echo: " + prompt),
                                    "application/json");
                });
    int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    gateway::BackendSpec spec;
    spec.kind = gateway::BackendKind::Remote;
    spec.model = "remote-model";
    spec.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    spec.credential_env = "MTPATCHER_TEST_KEY";

    ::unsetenv("MTPATCHER_TEST_KEY");
    auto gw = testsupport::fast_gateway();
    auto missing = gw.complete(spec, simple_request("hi", "remote-model"));
    CHECK(missing.code() == ErrorCode::AuthError);

    ::setenv("MTPATCHER_TEST_KEY", "test-secret-token", 1);
    auto answered = gw.complete(spec, simple_request("hi", "remote-model"));
    REQUIRE(answered.ok());
    CHECK(answered->content == "echo: hi");
    CHECK(gw.stats().retries >= 1);

    ::unsetenv("MTPATCHER_TEST_KEY");
    server.stop();
    listener.join();
}

}  // TEST_SUITE
