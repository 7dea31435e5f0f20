#include <iostream>

#include <CLI11.hpp>

#include "mleng/errors.hpp"
#include "mleng/orchestrator.hpp"

namespace {

int run_command(const std::string& task_dir, const std::string& config_file,
                const std::string& mock_dir, const std::string& out_dir,
                const std::vector<std::pair<std::string, std::string>>& overrides) {
    // Precedence: defaults < scenario.conf < --config < explicit flags.
    mleng::EngineConfig config =
        mock_dir.empty() ? mleng::EngineConfig{} : mleng::scenario_config(mock_dir);
    if (!config_file.empty()) config.apply_file(config_file);
    for (const auto& [key, value] : overrides) config.apply_kv(key, value);

    std::filesystem::path out = out_dir.empty()
                                    ? std::filesystem::path(task_dir) / "runs" /
                                          ("run-" + std::to_string(std::time(nullptr)))
                                    : std::filesystem::path(out_dir);

    mleng::RunResult result = mleng::run(task_dir, std::move(config), out);
    std::cout << "run complete\n"
              << "  run dir:    " << result.run_dir.string() << "\n"
              << "  solution:   " << result.final_solution.string() << "\n"
              << "  submission: " << result.submission.string() << "\n"
              << "  score:      " << result.final_score << "\n";
    return std::filesystem::exists(result.submission) ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"script-search engine for machine-learning tasks"};
    app.require_subcommand(1);

    std::string task_dir, config_file, mock_dir, out_dir, run_dir;
    std::vector<std::pair<std::string, std::string>> overrides;

    auto add_override = [&overrides](const std::string& key) {
        return [&overrides, key](const std::string& value) {
            overrides.emplace_back(key, value);
        };
    };

    auto* run_cmd = app.add_subcommand("run", "run a task end to end");
    run_cmd->add_option("task_dir", task_dir, "task directory (task.meta, description.md, data/)")
        ->required();
    run_cmd->add_option("--config", config_file, "key=value config file");
    run_cmd->add_option("--mock", mock_dir, "scenario directory with mock transcripts");
    run_cmd->add_option("--out", out_dir, "run directory to create");
    run_cmd->add_option_function<std::string>("--seed", add_override("seed"));
    run_cmd->add_option_function<std::string>("--candidates", add_override("num_candidates"));
    run_cmd->add_option_function<std::string>("--outer", add_override("outer_steps"));
    run_cmd->add_option_function<std::string>("--inner", add_override("inner_steps"));
    run_cmd->add_option_function<std::string>("--parallel", add_override("parallel_solutions"));
    run_cmd->add_option_function<std::string>("--rounds", add_override("ensemble_rounds"));
    run_cmd->add_option_function<std::string>("--prompts", add_override("prompts_dir"));
    run_cmd->add_option_function<std::string>("--interpreter", add_override("interpreter"));
    run_cmd->add_option_function<std::string>("--executor", add_override("executor"));
    run_cmd->add_option_function<std::string>("--halt-after", add_override("halt_after"));

    auto* resume_cmd = app.add_subcommand("resume", "continue a halted or killed run");
    resume_cmd->add_option("run_dir", run_dir, "run directory to resume")->required();

    auto* audit_cmd = app.add_subcommand("audit", "print the decision trace of a run");
    audit_cmd->add_option("run_dir", run_dir, "run directory to audit")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed())
            return run_command(task_dir, config_file, mock_dir, out_dir, overrides);
        if (resume_cmd->parsed()) {
            mleng::RunResult result = mleng::resume(run_dir);
            std::cout << "resume complete\n"
                      << "  submission: " << result.submission.string() << "\n";
            return std::filesystem::exists(result.submission) ? 0 : 1;
        }
        if (audit_cmd->parsed()) return mleng::audit(run_dir, std::cout);
    } catch (const mleng::Halted& h) {
        std::cout << "run halted at checkpoint '" << h.label << "' (resumable)\n";
        return 3;
    } catch (const mleng::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
