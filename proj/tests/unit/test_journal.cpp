#include <doctest.h>

#include <fstream>

#include "mleng/journal.hpp"
#include "test_rig.hpp"

using namespace mleng;
namespace fs = std::filesystem;

TEST_CASE("journal append and read back") {
    fs::path dir = testing::make_temp_dir();
    fs::path file = dir / "journal.jsonl";
    {
        Journal j(file);
        j.note("run-start", {{"seed", 1}});
        j.agent_call("coder", 1, 42, 5, "prompt", "response", false);
        j.execution(0, "abcd", 0, false, 12);
        j.score(0, 0.9, Direction::Maximize);
        j.decision("merge", "accept", {{"k", 2}});
        j.checkpoint("init-done", {{"x", 1}});
    }
    auto events = Journal::read_file(file);
    REQUIRE(events.size() == 6);
    CHECK(events[0].type == "note");
    CHECK(events[1].data.at("role") == "coder");
    CHECK(events[2].data.at("exec_id") == 0);
    CHECK(events[3].data.at("value") == 0.9);
    CHECK(events[4].data.at("kind") == "accept");
    CHECK(events[5].data.at("label") == "init-done");
    for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i].seq == i + 1);
    CHECK(last_checkpoint_index(events) == 5);
    fs::remove_all(dir);
}

TEST_CASE("journal rejects corruption") {
    fs::path dir = testing::make_temp_dir();
    fs::path file = dir / "journal.jsonl";

    SUBCASE("unparsable line") {
        {
            Journal j(file);
            j.note("ok");
        }
        std::ofstream(file, std::ios::app) << "{truncated\n";
        CHECK_THROWS_AS(Journal::read_file(file), CorruptJournal);
    }
    SUBCASE("sequence gap") {
        {
            Journal j(file);
            j.note("one");
            j.note("two");
        }
        // drop the first line
        auto events = Journal::read_file(file);
        std::ofstream out(file, std::ios::trunc);
        out << events[1].to_json().dump() << "\n";
        out.close();
        CHECK_THROWS_AS(Journal::read_file(file), CorruptJournal);
    }
    SUBCASE("missing file reads as empty") {
        CHECK(Journal::read_file(dir / "nope.jsonl").empty());
    }
    SUBCASE("unknown schema version") {
        {
            Journal j(file);
            j.note("ok");
        }
        auto events = Journal::read_file(file);
        auto line = events[0].to_json();
        line["v"] = 99;
        line["seq"] = 2;
        std::ofstream(file, std::ios::app) << line.dump() << "\n";
        CHECK_THROWS_AS(Journal::read_file(file), CorruptJournal);
    }
    fs::remove_all(dir);
}

TEST_CASE("journal replay verify-consumes instead of appending") {
    fs::path dir = testing::make_temp_dir();
    fs::path file = dir / "journal.jsonl";
    {
        Journal j(file);
        j.agent_call("coder", 1, 0, 0, "p", "r", false);
        j.execution(0, "sha", 0, false, 0);
        j.note("done");
    }
    auto recorded = Journal::read_file(file);
    REQUIRE(recorded.size() == 3);

    Journal j(file, recorded.back().seq);
    j.set_replay_tail({recorded.begin(), recorded.end()});
    CHECK(j.replaying());

    Event call = j.replay_agent_call("coder");
    CHECK(call.data.at("response") == "r");
    Event exec = j.replay_execution("sha");
    CHECK(exec.data.at("exec_id") == 0);
    j.note("done"); // verify-consume
    CHECK_FALSE(j.replaying());

    j.note("fresh"); // live again
    auto events = Journal::read_file(file);
    CHECK(events.size() == 4);
    CHECK(events.back().data.at("note") == "fresh");
    CHECK(events.back().seq == 4);
    fs::remove_all(dir);
}

TEST_CASE("journal replay mismatch raises CorruptJournal") {
    fs::path dir = testing::make_temp_dir();
    fs::path file = dir / "journal.jsonl";
    {
        Journal j(file);
        j.agent_call("coder", 1, 0, 0, "p", "r", false);
    }
    auto recorded = Journal::read_file(file);
    Journal j(file, recorded.back().seq);
    j.set_replay_tail({recorded.begin(), recorded.end()});
    SUBCASE("wrong type") { CHECK_THROWS_AS(j.note("x"), CorruptJournal); }
    SUBCASE("wrong role") { CHECK_THROWS_AS(j.replay_agent_call("planner"), CorruptJournal); }
    fs::remove_all(dir);
}
