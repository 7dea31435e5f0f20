#pragma once

#include <filesystem>
#include <string>

#include "mleng/core.hpp"

namespace mleng {

// Everything the engine knows about a task. Metric, direction, submission
// file name and interpreter extension come from explicit metadata; nothing
// is inferred from prose.
struct TaskDescription {
    std::string text;
    std::string metric_name;
    Direction direction = Direction::Maximize;
    std::filesystem::path data_root;
    std::string runtime_hint;

    std::string submission_name = "submission.csv";
    std::string script_ext = "py";

    void validate() const;
};

// Loads a task directory:
//   task.meta       key=value: metric_name, direction, submission_name,
//                   interpreter_ext, optional runtime_hint
//   description.md  the task statement
//   data/           provided dataset files
TaskDescription load_task(const std::filesystem::path& task_dir);

// Sorted relative paths of every regular file under data_root, one per
// line. Used by the data-usage checker prompt.
std::string list_data_files(const std::filesystem::path& data_root);

// The task statement as agents see it: the description plus the runtime
// hint, when one is declared.
std::string task_prompt_text(const TaskDescription& task);

} // namespace mleng
