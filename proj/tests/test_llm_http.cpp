// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "rewardcal/llm_http_client.hpp"

using namespace rewardcal;

namespace {

// A chat-completion stand-in on a loopback port.
class FakeServer {
public:
    FakeServer() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            last_auth_ = req.get_header_value("Authorization");
            last_body_ = json::parse(req.body);
            json reply{{"choices", json::array({json{{"message", {{"role", "assistant"}, {"content", "1. a\n2. b"}}}}})}};
            res.set_content(reply.dump(), "application/json");
        });
        server_.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("{\"choices\": []}", "application/json");
        });
        server_.Post("/down", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeServer() {
        server_.stop();
        thread_.join();
    }

    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }
    const std::string& last_auth() const { return last_auth_; }
    const json& last_body() const { return last_body_; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::string last_auth_;
    json last_body_;
};

SynthRequest sample_request() {
    const std::vector<Category> cats = {Category::Counting};
    return build_llm_request("Four cars on the street.", std::span<const Category>(cats), default_few_shot_store());
}

} // namespace

TEST(HttpChatClient, PostsChatBodyAndReadsContent) {
    FakeServer server;
    HttpChatClient client({server.url("/v1/chat/completions"), "secret", "local-model"});
    EXPECT_EQ(client.complete(sample_request()), "1. a\n2. b");
    EXPECT_EQ(server.last_auth(), "Bearer secret");
    EXPECT_EQ(server.last_body()["model"], "local-model");
    EXPECT_EQ(server.last_body()["temperature"], 0.0);
    EXPECT_EQ(server.last_body()["frequency_penalty"], 0.2);
    EXPECT_EQ(server.last_body()["messages"][1]["content"], "Four cars on the street.");
}

TEST(HttpChatClient, ReportsServerProblems) {
    FakeServer server;
    auto code = [](HttpChatClient& c) {
        try {
            c.complete(sample_request());
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::NoEvaluation;
    };
    HttpChatClient broken({server.url("/broken"), "", ""});
    HttpChatClient down({server.url("/down"), "", ""});
    EXPECT_EQ(code(broken), ErrorCode::LlmClientError);
    EXPECT_EQ(code(down), ErrorCode::LlmClientError);
    EXPECT_THROW(HttpChatClient({"no-scheme", "", ""}), Error);
}
