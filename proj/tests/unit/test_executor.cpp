#include <doctest.h>

#include <fstream>

#include "mleng/executor.hpp"
#include "test_rig.hpp"

using namespace mleng;
namespace fs = std::filesystem;

namespace {

struct ProcRig {
    fs::path dir = testing::make_temp_dir();
    Workspace ws;
    ProcessExecutor exec;

    ProcRig()
        : ws([this] {
              fs::create_directories(dir / "data");
              std::ofstream(dir / "data" / "train.csv") << "x,y\n1,2\n3,4\n";
              return Workspace::create(dir / "ws", dir / "data");
          }()),
          exec(ProcessExecutor::Options{}) {}

    ~ProcRig() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
};

} // namespace

TEST_CASE("process executor captures output and exit status") {
    ProcRig rig;
    auto res = rig.exec.run_script("print('hi')", rig.ws, rig.ws.alloc_exec_id(),
                                   std::chrono::seconds(30));
    CHECK(res.exit_status == 0);
    CHECK_FALSE(res.timed_out);
    CHECK(res.stdout_text == "hi\n");
    CHECK(res.stderr_text.empty());
}

TEST_CASE("process executor reports tracebacks on crash") {
    ProcRig rig;
    auto res = rig.exec.run_script("raise RuntimeError('boom')", rig.ws,
                                   rig.ws.alloc_exec_id(), std::chrono::seconds(30));
    CHECK(res.exit_status != 0);
    CHECK(res.stderr_text.find("Traceback") != std::string::npos);
    CHECK(res.stderr_text.find("boom") != std::string::npos);
}

TEST_CASE("process executor kills on timeout") {
    ProcRig rig;
    auto start = std::chrono::steady_clock::now();
    auto res = rig.exec.run_script("while True: pass", rig.ws, rig.ws.alloc_exec_id(),
                                   std::chrono::seconds(1));
    auto wall = std::chrono::steady_clock::now() - start;
    CHECK(res.timed_out);
    CHECK(res.exit_status != 0);
    // duration stays within timeout + supervision slack
    CHECK(wall < std::chrono::seconds(1) + std::chrono::seconds(5));
    CHECK(res.duration >= std::chrono::milliseconds(900));
}

TEST_CASE("process executor: missing interpreter is a SpawnFailure") {
    ProcRig rig;
    ProcessExecutor::Options opts;
    opts.command = {"definitely-not-an-interpreter-9917"};
    ProcessExecutor exec(opts);
    CHECK_THROWS_AS(exec.run_script("x", rig.ws, rig.ws.alloc_exec_id(),
                                    std::chrono::seconds(5)),
                    SpawnFailure);
}

TEST_CASE("workspace layout: fresh exec dirs, script + captured streams") {
    ProcRig rig;
    int id0 = rig.ws.alloc_exec_id();
    rig.exec.run_script("print(open('input/train.csv').read())", rig.ws, id0,
                        std::chrono::seconds(30));
    int id1 = rig.ws.alloc_exec_id();
    CHECK(id1 == id0 + 1);
    fs::path d = rig.ws.exec_dir(id0);
    CHECK(fs::exists(d / "solution.py"));
    CHECK(fs::exists(d / "stdout.txt"));
    CHECK(fs::exists(d / "stderr.txt"));
}

TEST_CASE("input data is byte-identical after executions") {
    ProcRig rig;
    auto checksum = [&] {
        std::string all;
        for (auto& entry : fs::recursive_directory_iterator(rig.dir / "data")) {
            if (!entry.is_regular_file()) continue;
            std::ifstream in(entry.path(), std::ios::binary);
            all += std::string((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
        }
        return content_hash(all);
    };
    auto before = checksum();
    // a script that tries to write lands in its cwd (the workspace), not input
    rig.exec.run_script("open('scratch.txt','w').write('x')\nprint('ok')", rig.ws,
                        rig.ws.alloc_exec_id(), std::chrono::seconds(30));
    rig.exec.run_script("print(open('input/train.csv').read())", rig.ws,
                        rig.ws.alloc_exec_id(), std::chrono::seconds(30));
    CHECK(checksum() == before);
}

TEST_CASE("parse_score") {
    SUBCASE("single marker") {
        auto s = parse_score("epoch 1\nFinal Validation Performance: 0.8188\n",
                             Direction::Maximize);
        CHECK(s.value == doctest::Approx(0.8188).epsilon(1e-12));
    }
    SUBCASE("last marker wins") {
        auto s = parse_score("Final Validation Performance: 0.3\nnoise\n"
                             "Final Validation Performance: 0.5\n",
                             Direction::Maximize);
        CHECK(s.value == 0.5);
    }
    SUBCASE("scientific notation") {
        auto s = parse_score("Final Validation Performance: 1.25e-3\n", Direction::Minimize);
        CHECK(s.value == doctest::Approx(0.00125));
    }
    SUBCASE("missing marker") {
        CHECK_THROWS_AS(parse_score("no marker here\n", Direction::Maximize), MissingScore);
    }
    SUBCASE("NaN marker") {
        CHECK_THROWS_AS(parse_score("Final Validation Performance: nan\n", Direction::Maximize),
                        NonFiniteScore);
    }
    SUBCASE("infinity marker") {
        CHECK_THROWS_AS(parse_score("Final Validation Performance: inf\n", Direction::Minimize),
                        NonFiniteScore);
    }
    SUBCASE("a non-numeric trailer is not a marker") {
        CHECK_THROWS_AS(parse_score("Final Validation Performance: about 0.5\n",
                                    Direction::Maximize),
                        MissingScore);
    }
}

TEST_CASE("scripted executor directives") {
    ScriptedExecutor exec;
    Workspace ws = Workspace::open(fs::temp_directory_path());

    auto run = [&](const std::string& script) {
        return exec.run_script(script, ws, 0, std::chrono::seconds(7));
    };

    CHECK(run("x\n# RESULT score=0.92\ny").stdout_text ==
          "Final Validation Performance: 0.92\n");
    auto crash = run("# RESULT crash msg=split failed");
    CHECK(crash.exit_status == 1);
    CHECK(crash.stderr_text.find("split failed") != std::string::npos);
    auto to = run("# RESULT timeout");
    CHECK(to.timed_out);
    CHECK(to.duration == std::chrono::seconds(7));
    CHECK(run("# RESULT silent").stdout_text.empty());
    CHECK(run("# RESULT stdout=a\\nb").stdout_text == "a\nb\n");
    CHECK(run("no directive").succeeded());
}

TEST_CASE("execution pool bounds concurrency") {
    Semaphore pool(2);
    std::atomic<int> active{0};
    std::atomic<int> peak{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&] {
            SlotGuard slot(&pool);
            int now = ++active;
            int prev = peak.load();
            while (now > prev && !peak.compare_exchange_weak(prev, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
            --active;
        });
    }
    for (auto& t : threads) t.join();
    CHECK(peak.load() <= 2);
    CHECK(peak.load() >= 1);
}
