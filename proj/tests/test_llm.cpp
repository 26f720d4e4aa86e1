#include <cstdlib>
#include <thread>

#include "doctest.h"
#include "support.hpp"
#include "walle/dialogue.hpp"
#include "walle/errors.hpp"
#include "walle/llm.hpp"
#include "walle/prompt_protocol.hpp"
#include "walle/rng.hpp"
// after Eigen, see remote_chat.cpp
#include "httplib.h"

using namespace walle;
using nlohmann::json;

TEST_CASE("parse a well formed command") {
  auto r = parse_target_command("Sure!\nTARGET: Coca Cola - red bottle FOR user1");
  REQUIRE(r);
  CHECK(r.command->object_name == "coca cola");
  CHECK(r.command->color == "red");
  CHECK(r.command->category == Category::bottle);
  CHECK(r.command->requesting_user == "user1");

  r = parse_target_command("target:white porcelain mug-white mug for Alice.");
  REQUIRE(r);
  CHECK(r.command->object_name == "white porcelain mug");
  CHECK(r.command->requesting_user == "alice");
}

TEST_CASE("last TARGET line wins") {
  auto r = parse_target_command("TARGET: milk - white bottle FOR a\nno wait\nTARGET: lemonade - yellow bottle FOR b");
  REQUIRE(r);
  CHECK(r.command->object_name == "lemonade");
  r = parse_target_command("TARGET: milk - white bottle FOR a\nTARGET: nonsense");
  CHECK_FALSE(r);
  CHECK(*r.failure == ParseFailure::malformed);
}

TEST_CASE("parse failures are classified") {
  CHECK(*parse_target_command("I would pick the milk").failure == ParseFailure::no_command);
  CHECK(*parse_target_command("").failure == ParseFailure::no_command);
  CHECK(*parse_target_command("TARGET: milk - teal bottle FOR a").failure == ParseFailure::unknown_color);
  CHECK(*parse_target_command("TARGET: milk - white plate FOR a").failure == ParseFailure::unknown_category);
  CHECK(*parse_target_command("TARGET: milk white bottle").failure == ParseFailure::malformed);
  CHECK(*parse_target_command("TARGET: - white bottle FOR a").failure == ParseFailure::malformed);
}

namespace {

TargetCommand random_command(std::mt19937_64& rng) {
  static const char* words[] = {"coca", "cola", "green", "tea", "blue", "bowl", "mug", "x-ray", "café", "o'neil", "7up", "glass"};
  std::uniform_int_distribution<int> nw(1, 4), wi(0, std::size(words) - 1), ci(0, std::size(kColors) - 1), ki(0, 2),
      ui(1, 999);
  TargetCommand c;
  const int n = nw(rng);
  for (int i = 0; i < n; ++i) c.object_name += (i ? " " : "") + std::string(words[wi(rng)]);
  c.color = std::string(kColors[ci(rng)]);
  c.category = kCategories[ki(rng)];
  c.requesting_user = "user" + std::to_string(ui(rng));
  return c;
}

}  // namespace

TEST_CASE("parse after format is the identity") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 1000; ++i) {
    const auto c = normalized(random_command(rng));
    if (!is_valid_object_name(c.object_name)) continue;
    const auto r = parse_target_command(format_target_command(c));
    REQUIRE(r);
    CHECK(*r.command == c);
  }
}

TEST_CASE("parser never throws on random lines") {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> len(0, 120), byte(0, 255), pick(0, 3);
  const std::string seeds[] = {"TARGET:", " - ", " FOR ", "target: a - red mug for "};
  for (int i = 0; i < 10000; ++i) {
    std::string line;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) {
      if (byte(rng) < 8) line += seeds[pick(rng)];
      else line.push_back(static_cast<char>(byte(rng)));
    }
    ParseResult r;
    CHECK_NOTHROW(r = parse_target_command(line));
    CHECK(r.command.has_value() != r.failure.has_value());
  }
}

TEST_CASE("format rejects commands outside the vocabulary") {
  CHECK_THROWS_AS(format_target_command({"milk", "teal", Category::bottle, "u"}), InvariantError);
  CHECK_THROWS_AS(format_target_command({"", "white", Category::bottle, "u"}), InvariantError);
  CHECK_THROWS_AS(format_target_command({"milk", "white", Category::bottle, "two words"}), InvariantError);
}

TEST_CASE("transcript invariants") {
  Transcript t;
  CHECK_THROWS_AS(t.append({Role::user, "hi"}), InvariantError);
  CHECK_THROWS_AS(require_valid_transcript(t), PreconditionError);
  t.append({Role::system, "rules"});
  CHECK_THROWS_AS(t.append({Role::assistant, ""}), InvariantError);
  t.append({Role::user, "hi"});
  CHECK(t.size() == 2);
  CHECK_NOTHROW(require_valid_transcript(t));
}

TEST_CASE("template rendering") {
  CHECK(protocol::render("[{user}]: {text}", {{"user", "a"}, {"text", "{user}"}}) == "[a]: {user}");
  CHECK_THROWS_AS(protocol::render("{missing}", {}), InvariantError);
  auto turn = protocol::parse_user_turn("[bob]: I like tea");
  REQUIRE(turn);
  CHECK(turn->user == "bob");
  CHECK(turn->text == "I like tea");
  CHECK_FALSE(protocol::parse_user_turn("no speaker"));
}

// ---------------------------------------------------------------------------

namespace {

Scene three_object_scene() {
  Scene s;
  s.objects = {testing::place(testing::template_named("coca cola"), "obj01", 0.5, -0.15),
               testing::place(testing::template_named("green tea"), "obj02", 0.5, 0.15),
               testing::place(testing::template_named("white mug"), "obj03", 0.75, 0.0)};
  return s;
}

Transcript briefed(const Scene& s) {
  return Transcript(build_system_prompt(s, PromptBundle::defaults().task_rules));
}

void say(Transcript& t, const std::string& user, const std::string& text) {
  t.append({Role::user, protocol::render(PromptBundle::defaults().part3_interaction, {{"user", user}, {"text", text}})});
}

}  // namespace

TEST_CASE("mock answers inventory questions") {
  const auto s = three_object_scene();
  ScriptedMock mock({{{"alice", {}, std::nullopt}}, {}});
  auto t = briefed(s);
  say(t, "alice", "Hi, what do you have on the table?");
  const auto r = mock.complete(t);
  CHECK(r.role == Role::assistant);
  CHECK(r.content.find("coca cola") != std::string::npos);
  CHECK(r.content.find("white mug") != std::string::npos);
  CHECK_FALSE(parse_target_command(r.content));
}

TEST_CASE("mock proposes the matching object for the speaker") {
  const auto s = three_object_scene();
  ScriptedMock mock({{{"alice", {}, std::nullopt}, {"bob", {}, std::nullopt}}, {}});
  auto t = briefed(s);
  say(t, "bob", "I am in the mood for some green tea please");
  const auto r = parse_target_command(mock.complete(t).content);
  REQUIRE(r);
  CHECK(*r.command == TargetCommand{"green tea", "green", Category::bottle, "bob"});
  CHECK(mock.complete(t) == mock.complete(t));
}

TEST_CASE("mock asks to clarify ties and uses earlier utterances") {
  Scene s;
  s.objects = {testing::place(testing::template_named("white bowl"), "obj01", 0.5, -0.15),
               testing::place(testing::template_named("white mug"), "obj02", 0.5, 0.15)};
  ScriptedMock mock({{{"alice", {}, std::nullopt}}, {}});
  auto t = briefed(s);
  say(t, "alice", "something white");
  const auto first = mock.complete(t);
  CHECK_FALSE(parse_target_command(first.content));
  CHECK(first.content.find("Do you mean") != std::string::npos);
  t.append(first);
  say(t, "alice", "a mug would be best");
  t.append(mock.complete(t));
  say(t, "alice", "the white one");
  const auto r = parse_target_command(mock.complete(t).content);
  REQUIRE(r);
  CHECK(r.command->category == Category::mug);
}

TEST_CASE("mock acknowledges confirmation and feedback") {
  const auto s = three_object_scene();
  ScriptedMock mock({{{"alice", {}, std::nullopt}}, {}});
  auto t = briefed(s);
  t.append({Role::user, "[confirmation] alice rejects the target \"milk\"."});
  CHECK(mock.complete(t).content.find("sorry") != std::string::npos);
  t.append({Role::assistant, "ok"});
  t.append({Role::user, "[feedback] The user reported failure."});
  CHECK(mock.complete(t).content.find("backed off") != std::string::npos);
}

TEST_CASE("failure injection modes") {
  const auto s = three_object_scene();
  auto run = [&](FailureMode mode, std::vector<ScriptedUser> users) {
    ScriptedMock mock({users, {mode, 1.0, 5}});
    auto t = briefed(s);
    say(t, users[0].id, "I would love a coca cola");
    CHECK(mock.injection_for(t) == mode);
    return parse_target_command(mock.complete(t).content);
  };
  const TargetCommand expected{"coca cola", "red", Category::bottle, "alice"};
  std::vector<ScriptedUser> one{{"alice", {}, std::nullopt}};
  std::vector<ScriptedUser> two{{"alice", {}, std::nullopt}, {"bob", {}, std::nullopt}};

  CHECK(*run(FailureMode::none, one).command == expected);
  CHECK(*run(FailureMode::no_command, one).failure == ParseFailure::no_command);
  const auto mem = run(FailureMode::memory_confusion, one);
  REQUIRE(mem);
  CHECK(mem.command->requesting_user == "alice");
  CHECK((mem.command->color != "red" || mem.command->category != Category::bottle));
  const auto und = run(FailureMode::understanding_confusion, two);
  REQUIRE(und);
  CHECK(und.command->requesting_user == "bob");
  CHECK(und.command->object_name == "coca cola");
  CHECK(run(FailureMode::understanding_confusion, one).command->requesting_user == "guest");
}

TEST_CASE("injection probability is honoured") {
  const auto s = three_object_scene();
  ScriptedMock mock({{{"alice", {}, std::nullopt}}, {FailureMode::no_command, 0.3, 17}});
  int hits = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    auto t = briefed(s);
    say(t, "alice", "coca cola please, attempt " + std::to_string(i));
    hits += mock.injection_for(t) == FailureMode::no_command;
  }
  CHECK(hits > n * 0.25);
  CHECK(hits < n * 0.35);
}

TEST_CASE("mock script json") {
  const auto doc = json::parse(R"({"users":[{"id":"a","utterances":["hi"],
      "true_target":{"object":"milk","color":"white","category":"bottle"}}],
      "failure_injection":{"mode":"memory_confusion","probability":0.5,"seed":3}})");
  const auto s = MockScript::from_json(doc);
  CHECK(s.failure_injection.mode == FailureMode::memory_confusion);
  CHECK(MockScript::from_json(s.to_json()).to_json() == s.to_json());
  auto bad = doc;
  bad["failure_injection"]["probability"] = 2;
  CHECK_THROWS_AS(MockScript::from_json(bad), InvariantError);
  bad = doc;
  bad["failure_injection"]["mode"] = "chaos";
  CHECK_THROWS_AS(MockScript::from_json(bad), ParseError);
}

// ---------------------------------------------------------------------------

namespace {

struct StubServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;
  std::atomic<int> calls{0};
  std::string last_body;
  std::string last_auth;
  std::mutex m;

  StubServer() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubServer() {
    server.stop();
    thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

const char* kOkResponse = R"({"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"hello there"}}]})";

}  // namespace

TEST_CASE("remote chat request and response") {
  StubServer stub;
  stub.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(stub.m);
    ++stub.calls;
    stub.last_body = req.body;
    stub.last_auth = req.get_header_value("Authorization");
    res.set_content(kOkResponse, "application/json");
  });
  ::setenv("WALLE_TEST_KEY", "sk-test", 1);
  RemoteChatConfig cfg;
  cfg.base_url = stub.url();
  cfg.model_id = "test-model";
  cfg.api_key_env = "WALLE_TEST_KEY";
  RemoteChat chat(cfg);
  Transcript t("system prompt");
  t.append({Role::user, "[a]: hi"});
  const auto reply = chat.complete(t);
  CHECK(reply == ChatMessage{Role::assistant, "hello there"});
  const auto body = json::parse(stub.last_body);
  CHECK(body["model"] == "test-model");
  CHECK(body["temperature"] == 0.0);
  REQUIRE(body["messages"].size() == 2);
  CHECK(body["messages"][0] == json({{"role", "system"}, {"content", "system prompt"}}));
  CHECK(body["messages"][1]["role"] == "user");
  CHECK(stub.last_auth == "Bearer sk-test");
  CHECK(t.size() == 2);  // transcript untouched
}

TEST_CASE("remote chat retries server errors then gives up") {
  StubServer stub;
  stub.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (++stub.calls == 1) {
      res.status = 503;
      return;
    }
    res.set_content(kOkResponse, "application/json");
  });
  RemoteChatConfig cfg;
  cfg.base_url = stub.url();
  cfg.api_key_env = "WALLE_UNSET_KEY_FOR_TESTS";
  Transcript t("sys");
  CHECK(RemoteChat(cfg).complete(t).content == "hello there");
  CHECK(stub.calls == 2);

  cfg.retries = 0;
  stub.calls = 0;
  CHECK_THROWS_AS(RemoteChat(cfg).complete(t), BackendError);
}

TEST_CASE("remote chat rejects malformed responses and unreachable hosts") {
  CHECK_THROWS_AS(RemoteChat::parse_response("{}"), BackendError);
  CHECK_THROWS_AS(RemoteChat::parse_response("not json"), BackendError);
  CHECK_THROWS_AS(RemoteChat::parse_response(R"({"choices":[{"message":{"role":"user","content":"x"}}]})"), BackendError);
  RemoteChatConfig cfg;
  cfg.base_url = "http://127.0.0.1:1/v1";
  cfg.timeout = std::chrono::seconds(2);
  CHECK_THROWS_AS(RemoteChat(cfg).complete(Transcript("sys")), BackendError);
}
