#include "mleng/task.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "util.hpp"

namespace mleng {

namespace fs = std::filesystem;

void TaskDescription::validate() const {
    if (detail::trim(text).empty()) throw ConfigError("task description text is empty");
    if (metric_name.empty()) throw ConfigError("task metric_name is empty");
    if (submission_name.empty()) throw ConfigError("task submission_name is empty");
    if (!fs::exists(data_root) || !fs::is_directory(data_root))
        throw ConfigError("task data_root does not exist or is not a directory: " +
                          data_root.string());
}

namespace {

std::map<std::string, std::string> read_kv_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in.is_open()) throw ConfigError("cannot read " + file.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(file.string() + ": expected key=value, got '" + t + "'");
        kv[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
    }
    return kv;
}

std::string read_text_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in.is_open()) throw ConfigError("cannot read " + file.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

} // namespace

TaskDescription load_task(const fs::path& task_dir) {
    if (!fs::is_directory(task_dir))
        throw ConfigError("task directory not found: " + task_dir.string());

    auto kv = read_kv_file(task_dir / "task.meta");
    auto require = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end() || it->second.empty())
            throw ConfigError("task.meta is missing required key '" + std::string(key) + "'");
        return it->second;
    };

    TaskDescription task;
    task.metric_name = require("metric_name");
    task.direction = direction_from_string(require("direction"));
    task.submission_name = require("submission_name");
    task.script_ext = require("interpreter_ext");
    if (auto it = kv.find("runtime_hint"); it != kv.end()) task.runtime_hint = it->second;
    task.text = read_text_file(task_dir / "description.md");
    task.data_root = fs::absolute(task_dir / "data");
    task.validate();
    return task;
}

std::string task_prompt_text(const TaskDescription& task) {
    if (task.runtime_hint.empty()) return task.text;
    return task.text + "\n\nRuntime notes: " + task.runtime_hint;
}

std::string list_data_files(const fs::path& data_root) {
    std::vector<std::string> files;
    if (fs::exists(data_root)) {
        for (const auto& entry : fs::recursive_directory_iterator(data_root))
            if (entry.is_regular_file())
                files.push_back(fs::relative(entry.path(), data_root).generic_string());
    }
    std::sort(files.begin(), files.end());
    return detail::join(files, "\n");
}

} // namespace mleng
