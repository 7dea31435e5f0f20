#pragma once

// Scenario machinery for the acceptance suite: hand-authored decision
// traces for the merge algorithm and randomly generated refinement
// landscapes with an independent oracle simulation.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "mleng/core.hpp"
#include "mleng/gateway.hpp"

namespace acceptance {

// One expected decision event, compared against journal decisions.
struct ExpectedDecision {
    std::string kind; // accept | reject | stop
    int k = 0;        // merged-in candidate rank; 0 = not applicable
    double score = -1; // -1 = not applicable
};

// A randomly generated refinement landscape plus the outcome an
// independent simulation of the refinement rules predicts for it.
struct RefineScenario {
    int outer_steps = 1;
    int inner_steps = 1;
    mleng::Direction direction = mleng::Direction::Maximize;
    std::string base_score_text;
    std::map<mleng::AgentRole, std::vector<std::string>> transcripts;

    // oracle predictions
    double expected_final = 0.0;
    std::vector<double> expected_accepts; // accepted scores, in order
    double max_evaluated = 0.0;           // over base + every scored attempt
};

RefineScenario generate_refine_scenario(std::mt19937& rng);

} // namespace acceptance
