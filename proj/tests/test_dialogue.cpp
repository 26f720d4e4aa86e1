#include <map>
#include <sstream>

#include "doctest.h"
#include "fsm_support.hpp"
#include "support.hpp"
#include "walle/dialogue.hpp"
#include "walle/errors.hpp"
#include "walle/pipeline.hpp"
#include "walle/prompt_protocol.hpp"

using namespace walle;
using namespace walle::testing;
using nlohmann::json;


TEST_CASE("transition relation matches the declared table") {
  int legal = 0;
  for (auto p : kPhases) {
    for (auto t : kTriggers) {
      const auto it = expected_relation().find({p, t});
      const auto got = next_phase(p, t);
      if (it == expected_relation().end()) {
        CHECK_MESSAGE(!got, to_string(p), " / ", to_string(t));
      } else {
        ++legal;
        REQUIRE_MESSAGE(got, to_string(p), " / ", to_string(t));
        CHECK(*got == it->second);
      }
    }
  }
  CHECK(legal == 13);
}

TEST_CASE("sessions follow the relation for every state and trigger") {
  for (auto p : kPhases) {
    for (auto t : kTriggers) {
      CAPTURE(to_string(p));
      CAPTURE(to_string(t));
      Session s = session_in(p);
      REQUIRE(s.phase() == p);
      const auto transcript_size = s.transcript().size();
      const auto transitions = s.transitions().size();
      const auto expected = next_phase(p, t);
      if (expected) {
        fire(s, t);
        CHECK(s.phase() == *expected);
        REQUIRE(s.transitions().size() == transitions + 1);
        CHECK(s.transitions().back().from == p);
        CHECK(s.transitions().back().trigger == t);
      } else {
        // The utterance triggers are chosen by the backend, not by the caller.
        const bool utterance = t == Trigger::utterance_with_target || t == Trigger::utterance_without_target;
        const bool feedback = t == Trigger::feedback_continue || t == Trigger::feedback_close;
        if (p == Phase::awaiting_feedback && feedback) continue;
        if (utterance && next_phase(p, Trigger::utterance_with_target)) continue;
        CHECK_THROWS_AS(fire(s, t), PreconditionError);
        CHECK(s.phase() == p);
        CHECK(s.transcript().size() == transcript_size);
        CHECK(s.transitions().size() == transitions);
      }
    }
  }
}

TEST_CASE("session user validation") {
  auto b = mock_for({"a"});
  CHECK_THROWS_AS(Session(b, small_scene(), {}), PreconditionError);
  CHECK_THROWS_AS(Session(b, small_scene(), {"a", "b", "c", "d"}), PreconditionError);
  CHECK_THROWS_AS(Session(b, small_scene(), {"a", "a"}), PreconditionError);
  CHECK_THROWS_AS(Session(b, small_scene(), {"two words"}), PreconditionError);
  CHECK_THROWS_AS(Session(nullptr, small_scene(), {"a"}), PreconditionError);
  CHECK_NOTHROW(Session(b, small_scene(), {"a", "b", "c"}));
}

TEST_CASE("only session users speak and only the requester confirms") {
  auto s = start_session(mock_for({"alice", "bob"}), small_scene(), {"alice", "bob"});
  CHECK_THROWS_AS(s.post_user_utterance("mallory", "coca cola"), PreconditionError);
  CHECK_THROWS_AS(s.post_user_utterance("alice", ""), PreconditionError);
  s.post_user_utterance("bob", "green tea for me");
  REQUIRE(s.phase() == Phase::target_proposed);
  CHECK(s.command()->requesting_user == "bob");
  CHECK(*s.active_user() == "bob");
  CHECK_THROWS_AS(s.confirm_target("alice", true), PreconditionError);
  s.confirm_target("bob", false);
  CHECK(s.phase() == Phase::interacting);
  CHECK_FALSE(s.command());
}

TEST_CASE("commands for outsiders cannot be confirmed") {
  auto s = start_session(mock_for({"alice"}, {FailureMode::understanding_confusion, 1.0, 1}), small_scene(), {"alice"});
  s.post_user_utterance("alice", "coca cola");
  REQUIRE(s.phase() == Phase::target_proposed);
  CHECK(s.command()->requesting_user == "guest");
  CHECK_THROWS_AS(s.confirm_target("alice", true), PreconditionError);
  CHECK_THROWS_AS(s.confirm_target("guest", true), PreconditionError);
}

namespace {
struct FailingBackend : ChatBackend {
  ChatMessage complete(const Transcript&) const override { throw BackendError("down"); }
  std::string_view kind() const override { return "failing"; }
};
}  // namespace

TEST_CASE("backend failure leaves the session unchanged") {
  auto s = start_session(std::make_shared<FailingBackend>(), small_scene(), {"a"});
  const auto before = s.transcript().size();
  CHECK_THROWS_AS(s.post_user_utterance("a", "hello"), BackendError);
  CHECK(s.transcript().size() == before);
  CHECK(s.phase() == Phase::briefed);
}

TEST_CASE("transcript layout over one delivery") {
  auto s = session_in(Phase::awaiting_feedback);
  const auto& bundle = PromptBundle::defaults();
  const auto& m = s.transcript().messages();
  CHECK(m[0].role == Role::system);
  CHECK(m[0].content.find(bundle.part1_role) == 0);
  CHECK(protocol::extract_environment(m[0].content));
  CHECK(protocol::parse_user_turn(m[1].content)->user == "alice");
  CHECK(m[3].content.starts_with(protocol::kConfirmationTag));
  s.report_feedback(FeedbackOutcome::success);
  const auto& after = s.transcript().messages();
  CHECK(after[after.size() - 3].content.starts_with(protocol::kFeedbackTag));
  CHECK(after.back().role == Role::system);
  const auto env = parse_environment_dict(*protocol::extract_environment(after.back().content));
  CHECK(env.size() == 2);
  CHECK(s.phase() == Phase::closed);
  CHECK(s.served_users().count("alice"));
}

TEST_CASE("failure feedback backs off to the saved environment (fuzzed)") {
  const auto& catalog = testing::catalog();
  std::mt19937_64 rng(31);
  int failures = 0, deliveries_undone = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n_users = 1 + rng() % 3;
    std::vector<std::string> users;
    for (std::size_t u = 0; u < n_users; ++u) users.push_back("u" + std::to_string(u + 1));
    auto scene = sample_scene(catalog, 3 + rng() % 4, rng());
    auto s = start_session(mock_for(users), scene, users);

    RunConfig run;
    run.noise.p_wrong_grounding = 0.3;
    run.noise.sigma_t = 0.01 * (rng() % 3);
    run.noise.p_missing_depth = 0.3;
    run.noise.depth_lift = 0.05;

    // Several rounds per session so later executions start from edited scenes.
    for (int round = 0; round < 3 && s.phase() != Phase::closed; ++round) {
      const auto& objs = s.scene().objects;
      std::vector<const ObjectInstance*> on;
      for (const auto& o : objs)
        if (o.state == ObjectState::on_table) on.push_back(&o);
      if (on.empty()) break;
      const auto* pick = on[rng() % on.size()];
      const auto& user = users[rng() % users.size()];
      s.post_user_utterance(user, "I would like the " + pick->name);
      if (s.phase() != Phase::target_proposed || s.command()->requesting_user != user) continue;
      s.confirm_target(user, true);
      const auto cmd = s.begin_execution();
      const auto saved = *s.saved_environment();
      CHECK(saved == to_environment_dict(s.scene()).text());
      Rng prng(rng());
      const auto trace = run_grasp_pipeline(s.scene(), cmd, run, prng);
      s.finish_execution(trace.report());
      const bool moved = to_environment_dict(s.scene()).text() != saved;
      const bool fail = rng() % 2 == 0;
      s.report_feedback(fail ? FeedbackOutcome::failure : FeedbackOutcome::success);
      if (fail) {
        ++failures;
        deliveries_undone += moved;
        const auto regenerated = to_environment_dict(s.scene()).text();
        CHECK(regenerated == saved);
        const auto last = s.transcript().messages().back();
        REQUIRE(last.role == Role::system);
        CHECK(*protocol::extract_environment(last.content) == saved);
        CHECK(s.phase() == Phase::interacting);
      }
    }
  }
  CHECK(failures > 50);
  CHECK(deliveries_undone > 10);
}

TEST_CASE("event log is one JSON object per transition") {
  const auto s = session_in(Phase::closed);
  std::istringstream in(s.export_event_log());
  std::string line;
  std::vector<json> rows;
  while (std::getline(in, line)) rows.push_back(json::parse(line));
  REQUIRE(rows.size() == s.transitions().size());
  CHECK(rows.front()["state_from"] == "Init");
  CHECK(rows.front()["trigger"] == "brief");
  CHECK(rows.back()["state_to"] == "Closed");
  CHECK(rows.back()["timestamp"].get<std::string>().back() == 'Z');
}

TEST_CASE("prompt files match the built-in defaults") {
  const auto loaded = PromptBundle::load(std::string(WALLE_DATA_DIR) + "/prompts");
  const auto def = PromptBundle::defaults();
  CHECK(loaded.part1_role == def.part1_role);
  CHECK(loaded.part2_env_rules == def.part2_env_rules);
  CHECK(loaded.part3_interaction == def.part3_interaction);
  CHECK(loaded.part4_confirmation == def.part4_confirmation);
  CHECK(loaded.part5_feedback == def.part5_feedback);
  CHECK(loaded.task_rules == def.task_rules);
  CHECK(loaded.output_format == def.output_format);
  CHECK_THROWS_AS(PromptBundle::load("/nonexistent"), ParseError);
}

TEST_CASE("target miss taxonomy") {
  const TargetCommand e{"milk", "white", Category::bottle, "a"};
  CHECK(classify_target_miss(e, e).miss == MissClass::ok);
  CHECK(classify_target_miss(e, TargetCommand{"soy milk", "white", Category::bottle, "a"}).miss == MissClass::ok);
  CHECK(classify_target_miss(e, std::nullopt).miss == MissClass::no_command);
  CHECK(classify_target_miss(e, TargetCommand{"milk", "red", Category::bottle, "a"}).miss == MissClass::memory_confusion);
  CHECK(classify_target_miss(e, TargetCommand{"milk", "white", Category::mug, "b"}).miss == MissClass::memory_confusion);
  CHECK(classify_target_miss(e, TargetCommand{"milk", "white", Category::bottle, "b"}).miss ==
        MissClass::understanding_confusion);
}
