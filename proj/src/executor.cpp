#include "mleng/executor.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "util.hpp"

namespace mleng {

namespace fs = std::filesystem;

Semaphore::Semaphore(int slots) : slots_(slots < 1 ? 1 : slots) {}

void Semaphore::acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return slots_ > 0; });
    --slots_;
}

void Semaphore::release() {
    {
        std::lock_guard<std::mutex> lock(mu_);
        ++slots_;
    }
    cv_.notify_one();
}

// --- workspace --------------------------------------------------------------

Workspace Workspace::create(const fs::path& root, const fs::path& data_root) {
    Workspace ws;
    ws.root_ = root;
    fs::create_directories(root);
    fs::path input = root / "input";
    if (!fs::exists(input)) {
        std::error_code ec;
        fs::create_directory_symlink(fs::absolute(data_root), input, ec);
        if (ec) fs::copy(data_root, input, fs::copy_options::recursive);
    }
    return ws;
}

Workspace Workspace::open(const fs::path& root) {
    if (!fs::is_directory(root))
        throw ConfigError("workspace does not exist: " + root.string());
    Workspace ws;
    ws.root_ = root;
    return ws;
}

fs::path Workspace::exec_dir(int exec_id) const {
    char name[16];
    std::snprintf(name, sizeof(name), "exec-%03d", exec_id);
    return root_ / name;
}

int Workspace::alloc_exec_id() { return next_.fetch_add(1); }

void Workspace::bump_exec_floor(int max_seen) {
    int want = max_seen + 1;
    int cur = next_.load();
    while (cur < want && !next_.compare_exchange_weak(cur, want)) {
    }
}

// --- process executor -------------------------------------------------------

ExecutionResult ExecutionEngine::replay_script(const std::string& script, Workspace& ws,
                                               const Event&, std::chrono::seconds timeout) {
    // Deterministic backends can simply re-run.
    return run_script(script, ws, /*exec_id=*/-1, timeout);
}

ProcessExecutor::ProcessExecutor(Options opts) : opts_(std::move(opts)) {
    if (opts_.command.empty()) throw ConfigError("executor command is empty");
}

namespace {

std::string read_whole_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_whole_file(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

} // namespace

ExecutionResult ProcessExecutor::run_script(const std::string& script, Workspace& ws,
                                            int exec_id, std::chrono::seconds timeout) {
    SlotGuard slot(opts_.pool);

    fs::path dir = ws.exec_dir(exec_id);
    fs::create_directories(dir);
    fs::path script_file = dir / ("solution." + opts_.script_ext);
    write_whole_file(script_file, script);
    fs::path out_file = dir / "stdout.txt";
    fs::path err_file = dir / "stderr.txt";

    int out_fd = ::open(out_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    int err_fd = ::open(err_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    int spawn_pipe[2];
    if (out_fd < 0 || err_fd < 0 || ::pipe(spawn_pipe) != 0)
        throw SpawnFailure("cannot prepare execution files in " + dir.string());
    ::fcntl(spawn_pipe[1], F_SETFD, FD_CLOEXEC);

    std::vector<std::string> argv_store = opts_.command;
    argv_store.push_back(script_file.string());
    std::vector<char*> argv;
    for (auto& arg : argv_store) argv.push_back(arg.data());
    argv.push_back(nullptr);

    auto start = std::chrono::steady_clock::now();
    pid_t pid = ::fork();
    if (pid < 0) {
        ::close(out_fd); ::close(err_fd);
        ::close(spawn_pipe[0]); ::close(spawn_pipe[1]);
        throw SpawnFailure(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        ::close(spawn_pipe[0]);
        if (::chdir(ws.root().c_str()) != 0) {
            int err = errno;
            (void)!::write(spawn_pipe[1], &err, sizeof(err));
            _exit(127);
        }
        ::dup2(out_fd, STDOUT_FILENO);
        ::dup2(err_fd, STDERR_FILENO);
        ::execvp(argv[0], argv.data());
        int err = errno;
        (void)!::write(spawn_pipe[1], &err, sizeof(err));
        _exit(127);
    }

    ::close(out_fd);
    ::close(err_fd);
    ::close(spawn_pipe[1]);
    int spawn_errno = 0;
    ssize_t n = ::read(spawn_pipe[0], &spawn_errno, sizeof(spawn_errno));
    ::close(spawn_pipe[0]);
    if (n > 0) {
        ::waitpid(pid, nullptr, 0);
        throw SpawnFailure("cannot execute '" + argv_store[0] +
                           "': " + std::strerror(spawn_errno));
    }

    ExecutionResult result;
    auto deadline = start + timeout;
    int status = 0;
    for (;;) {
        pid_t done = ::waitpid(pid, &status, WNOHANG);
        if (done == pid) break;
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(-pid, SIGKILL);
            ::kill(pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            result.timed_out = true;
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    result.duration = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    if (WIFEXITED(status))
        result.exit_status = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        result.exit_status = 128 + WTERMSIG(status);
    else
        result.exit_status = -1;
    result.stdout_text = read_whole_file(out_file);
    result.stderr_text = read_whole_file(err_file);
    return result;
}

ExecutionResult ProcessExecutor::replay_script(const std::string&, Workspace& ws,
                                               const Event& record, std::chrono::seconds) {
    ExecutionResult result;
    int exec_id = record.data.at("exec_id").get<int>();
    fs::path dir = ws.exec_dir(exec_id);
    result.stdout_text = read_whole_file(dir / "stdout.txt");
    result.stderr_text = read_whole_file(dir / "stderr.txt");
    result.exit_status = record.data.at("exit_status").get<int>();
    result.timed_out = record.data.at("timed_out").get<bool>();
    result.duration = std::chrono::milliseconds(record.data.at("duration_ms").get<long>());
    return result;
}

// --- scripted executor ------------------------------------------------------

namespace {

std::string unescape_newlines(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == 'n') {
            out += '\n';
            ++i;
        } else {
            out += s[i];
        }
    }
    return out;
}

} // namespace

ExecutionResult ScriptedExecutor::run_script(const std::string& script, Workspace& ws, int,
                                             std::chrono::seconds timeout) {
    ExecutionResult result;
    for (const auto& raw : detail::split_lines(script)) {
        std::string line = detail::trim(raw);
        if (!detail::starts_with(line, "# RESULT ")) continue;
        std::string directive = detail::trim(line.substr(9));
        if (detail::starts_with(directive, "score=")) {
            result.stdout_text = std::string(kScoreMarker) + directive.substr(6) + "\n";
        } else if (detail::starts_with(directive, "write=")) {
            fs::path target = ws.root() / directive.substr(6);
            fs::create_directories(target.parent_path());
            std::ofstream(target, std::ios::trunc) << "scripted,artifact\n";
            result.stdout_text = "wrote " + directive.substr(6) + "\n";
        } else if (detail::starts_with(directive, "crash")) {
            std::string msg = "scripted failure";
            auto pos = directive.find("msg=");
            if (pos != std::string::npos) msg = directive.substr(pos + 4);
            result.exit_status = 1;
            result.stderr_text = "Traceback (most recent call last):\n  File \"solution\", "
                                 "line 1, in <module>\nRuntimeError: " +
                                 msg + "\n";
        } else if (directive == "timeout") {
            result.timed_out = true;
            result.exit_status = 128 + SIGKILL;
            result.duration = std::chrono::duration_cast<std::chrono::milliseconds>(timeout);
        } else if (detail::starts_with(directive, "stdout=")) {
            result.stdout_text = unescape_newlines(directive.substr(7)) + "\n";
        } // "silent" and anything else: exit 0, no output
        return result;
    }
    return result;
}

// --- score parsing ----------------------------------------------------------

ScoreRecord parse_score(const std::string& stdout_text, Direction direction) {
    std::optional<double> last;
    bool saw_nonfinite = false;
    for (const auto& raw : detail::split_lines(stdout_text)) {
        std::string line = raw;
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
        if (!detail::starts_with(line, kScoreMarker)) continue;
        std::string number = detail::trim(line.substr(std::strlen(kScoreMarker)));
        if (number.empty()) continue;
        char* end = nullptr;
        double value = std::strtod(number.c_str(), &end);
        if (end != number.c_str() + number.size()) continue; // not a bare number
        if (!std::isfinite(value)) {
            saw_nonfinite = true;
            last.reset();
            continue;
        }
        saw_nonfinite = false;
        last = value;
    }
    if (last) return ScoreRecord{*last, direction};
    if (saw_nonfinite)
        throw NonFiniteScore("score marker carries a non-finite value");
    throw MissingScore(std::string("no '") + kScoreMarker + "<number>' line in stdout");
}

} // namespace mleng
