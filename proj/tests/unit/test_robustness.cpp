#include <doctest.h>

#include "mleng/robustness.hpp"
#include "test_rig.hpp"

using namespace mleng;
using testing::TestRig;
using testing::fenced;

TEST_CASE("evaluate routes failures into bug records") {
    SUBCASE("clean scored run") {
        TestRig rig({});
        auto out = evaluate(rig.ctx(), "# RESULT score=0.9", ScoreMode::Required);
        REQUIRE(out.ok());
        CHECK(out.score->value == 0.9);
        CHECK(rig.count_events("execution") == 1);
        CHECK(rig.count_events("score") == 1);
    }
    SUBCASE("crash carries the stderr traceback") {
        TestRig rig({});
        auto out = evaluate(rig.ctx(), "# RESULT crash msg=oops", ScoreMode::Required);
        REQUIRE_FALSE(out.ok());
        CHECK(out.bug->traceback.find("oops") != std::string::npos);
    }
    SUBCASE("clean exit without a marker is a bug naming the contract") {
        TestRig rig({});
        auto out = evaluate(rig.ctx(), "# RESULT silent", ScoreMode::Required);
        REQUIRE_FALSE(out.ok());
        CHECK(out.bug->traceback.find("Final Validation Performance") != std::string::npos);
    }
    SUBCASE("non-finite marker is a bug, never a score") {
        TestRig rig({});
        auto out = evaluate(rig.ctx(), "# RESULT score=nan", ScoreMode::Required);
        REQUIRE_FALSE(out.ok());
    }
    SUBCASE("timeout is a bug") {
        TestRig rig({});
        auto out = evaluate(rig.ctx(), "# RESULT timeout", ScoreMode::Required);
        REQUIRE_FALSE(out.ok());
        CHECK(out.bug->traceback.find("timeout") != std::string::npos);
    }
    SUBCASE("marker not required for ablation-style runs") {
        TestRig rig({});
        auto out = evaluate(rig.ctx(), "# RESULT stdout=component A: -0.02",
                            ScoreMode::NotRequired);
        CHECK(out.ok());
        CHECK_FALSE(out.score.has_value());
    }
}

TEST_CASE("debug loop accounting") {
    SUBCASE("always-failing script with budget 3: four evaluations then failure") {
        TestRig rig({{AgentRole::Debugger,
                      {fenced("# RESULT crash msg=e1"), fenced("# RESULT crash msg=e2"),
                       fenced("# RESULT crash msg=e3")}}});
        rig.cfg().max_debug_rounds = 3;
        auto rr = evaluate_with_repair(rig.ctx(), "# RESULT crash msg=e0", ScoreMode::Required);
        CHECK_FALSE(rr.ok);
        CHECK(rr.evaluations == 4);
        CHECK(rig.count_events("execution") == 4);
        CHECK(rig.count_events("agent_call") == 3); // one debugger call per round
        CHECK(rr.last_bug.traceback.find("e3") != std::string::npos);
    }
    SUBCASE("repair succeeding at round 2: exactly three evaluations") {
        TestRig rig({{AgentRole::Debugger,
                      {fenced("# RESULT crash msg=still"), fenced("# RESULT score=0.7")}}});
        rig.cfg().max_debug_rounds = 3;
        auto rr = evaluate_with_repair(rig.ctx(), "# RESULT crash msg=e0", ScoreMode::Required);
        CHECK(rr.ok);
        CHECK(rr.score->value == 0.7);
        CHECK(rr.evaluations == 3);
        CHECK(rr.debug_rounds == 2);
        CHECK(rig.count_events("execution") == 3);
    }
    SUBCASE("first repair succeeds: two evaluations total") {
        TestRig rig({{AgentRole::Debugger, {fenced("# RESULT score=0.8")}}});
        auto rr = evaluate_with_repair(rig.ctx(), "# RESULT crash msg=e0", ScoreMode::Required);
        CHECK(rr.ok);
        CHECK(rr.evaluations == 2);
    }
    SUBCASE("budget 0: immediate failure after the single evaluation") {
        TestRig rig({});
        rig.cfg().max_debug_rounds = 0;
        auto rr = evaluate_with_repair(rig.ctx(), "# RESULT crash msg=e0", ScoreMode::Required);
        CHECK_FALSE(rr.ok);
        CHECK(rr.evaluations == 1);
        CHECK(rig.count_events("execution") == 1);
        CHECK(rig.count_events("agent_call") == 0);
    }
    SUBCASE("no debugging needed on a healthy script") {
        TestRig rig({});
        auto rr = evaluate_with_repair(rig.ctx(), "# RESULT score=1.5", ScoreMode::Required);
        CHECK(rr.ok);
        CHECK(rr.evaluations == 1);
        CHECK(rr.debug_rounds == 0);
    }
}

TEST_CASE("check_leakage") {
    SUBCASE("clean verdict returns the script byte-identical") {
        TestRig rig({{AgentRole::Leakage, {testing::kNoLeak}}});
        Solution s = make_solution("pre\nA = load()\npost", Origin::Candidate);
        Solution out = check_leakage(rig.ctx(), s);
        CHECK(out.script == s.script);
        CHECK(out.id == s.id);
    }
    SUBCASE("flagged block is replaced and bytes outside the span survive") {
        std::string script = "load\nscaler.fit(all_data)\ntrain";
        TestRig rig({{AgentRole::Leakage,
                      {R"x({"leakage_detected": true, "code_block": "scaler.fit(all_data)"})x",
                       fenced("scaler.fit(train_data)")}}});
        Solution s = make_solution(script, Origin::Candidate);
        Solution out = check_leakage(rig.ctx(), s);
        CHECK(out.script == "load\nscaler.fit(train_data)\ntrain");
        CHECK(out.script.substr(0, 5) == s.script.substr(0, 5));
        CHECK(out.script.substr(out.script.size() - 6) == s.script.substr(s.script.size() - 6));
        CHECK(out.lineage == std::vector<std::string>{s.id});
    }
    SUBCASE("identical script is checked once (cache hit, zero provider calls)") {
        TestRig rig({{AgentRole::Leakage, {testing::kNoLeak}}});
        Solution s = make_solution("same script", Origin::Candidate);
        check_leakage(rig.ctx(), s);
        auto calls_before = rig.count_events("agent_call");
        Solution out = check_leakage(rig.ctx(), s);
        CHECK(out.script == s.script);
        CHECK(rig.count_events("agent_call") == calls_before);
    }
    SUBCASE("cache also replays a prior correction") {
        TestRig rig({{AgentRole::Leakage,
                      {R"({"leakage_detected": true, "code_block": "B"})", fenced("Bfixed")}}});
        Solution s = make_solution("A\nB\nC", Origin::Candidate);
        Solution first = check_leakage(rig.ctx(), s);
        CHECK(first.script == "A\nBfixed\nC");
        auto calls_before = rig.count_events("agent_call");
        Solution second = check_leakage(rig.ctx(), s);
        CHECK(second.script == first.script);
        CHECK(rig.count_events("agent_call") == calls_before);
    }
    SUBCASE("unmatchable block fails open with a journal warning") {
        TestRig rig({{AgentRole::Leakage,
                      {R"({"leakage_detected": true, "code_block": "not in the script"})",
                       fenced("whatever")}}});
        Solution s = make_solution("untouched", Origin::Candidate);
        Solution out = check_leakage(rig.ctx(), s);
        CHECK(out.script == s.script);
        bool warned = false;
        for (const auto& e : rig.events())
            if (e.type == "note" &&
                e.data.at("note").get<std::string>().find("warning") != std::string::npos)
                warned = true;
        CHECK(warned);
    }
    SUBCASE("malformed checker output is re-prompted") {
        TestRig rig({{AgentRole::Leakage, {"not json", testing::kNoLeak}}});
        Solution s = make_solution("script", Origin::Candidate);
        Solution out = check_leakage(rig.ctx(), s);
        CHECK(out.script == s.script);
        CHECK(rig.count_events("agent_call") == 2);
    }
}

TEST_CASE("check_data_usage") {
    SUBCASE("unchanged script comes back as-is") {
        Solution s = make_solution("use everything", Origin::Merged);
        TestRig rig({{AgentRole::DataUsage, {fenced(s.script)}}});
        Solution out = check_data_usage(rig.ctx(), s);
        CHECK(out.script == s.script);
        CHECK(out.id == s.id);
    }
    SUBCASE("revision must mention the previously ignored file") {
        TestRig rig({{AgentRole::DataUsage,
                      {fenced("df = read('input/train.csv')\ngeo = read('input/geometry.xyz')")}}});
        std::ofstream(rig.task().data_root / "geometry.xyz") << "atoms\n";
        Solution s = make_solution("df = read('input/train.csv')", Origin::Merged);
        Solution out = check_data_usage(rig.ctx(), s);
        CHECK(s.script.find("geometry.xyz") == std::string::npos);
        CHECK(out.script.find("geometry.xyz") != std::string::npos);
        CHECK(out.lineage == std::vector<std::string>{s.id});
    }
    SUBCASE("empty data root skips the provider entirely") {
        TestRig rig({});
        std::filesystem::remove_all(rig.task().data_root);
        std::filesystem::create_directories(rig.task().data_root);
        Solution s = make_solution("script", Origin::Merged);
        Solution out = check_data_usage(rig.ctx(), s);
        CHECK(out.script == s.script);
        CHECK(rig.count_events("agent_call") == 0);
        bool noted = false;
        for (const auto& e : rig.events())
            if (e.type == "note" &&
                e.data.at("note").get<std::string>().find("skipped") != std::string::npos)
                noted = true;
        CHECK(noted);
    }
    SUBCASE("prompt carries the file listing") {
        TestRig rig({{AgentRole::DataUsage, {fenced("x")}}});
        std::ofstream(rig.task().data_root / "extra.bin") << "b\n";
        Solution s = make_solution("script", Origin::Merged);
        check_data_usage(rig.ctx(), s);
        auto events = rig.events();
        std::string prompt;
        for (const auto& e : events)
            if (e.type == "agent_call") prompt = e.data.at("prompt").get<std::string>();
        CHECK(prompt.find("extra.bin") != std::string::npos);
        CHECK(prompt.find("train.csv") != std::string::npos);
    }
}

TEST_CASE("robustness passes are idempotent under a deterministic mock") {
    // Two rigs with the same transcripts produce the same outputs.
    auto transcripts = std::map<AgentRole, std::vector<std::string>>{
        {AgentRole::Leakage,
         {R"({"leakage_detected": true, "code_block": "B"})", fenced("Bx")}}};
    Solution s = make_solution("A\nB\nC", Origin::Candidate);
    TestRig rig1(transcripts), rig2(transcripts);
    CHECK(check_leakage(rig1.ctx(), s).script == check_leakage(rig2.ctx(), s).script);
}
