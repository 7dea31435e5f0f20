#pragma once

#include <stdexcept>
#include <string>

namespace mleng {

// Base class for all engine errors. Catch this at the CLI boundary.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define MLENG_ERROR(Name)                    \
    class Name : public Error {              \
    public:                                  \
        using Error::Error;                  \
    }

// core
MLENG_ERROR(DirectionMismatch);
MLENG_ERROR(UnscoredSolution);
MLENG_ERROR(BlockNotFound);
MLENG_ERROR(AmbiguousBlock);
MLENG_ERROR(InvalidArgument);

// llm_gateway
MLENG_ERROR(MissingBinding);
MLENG_ERROR(ProviderUnavailable);
MLENG_ERROR(EmptyResponse);
MLENG_ERROR(MalformedStructuredOutput);
MLENG_ERROR(WrongCardCount);

// executor
MLENG_ERROR(SpawnFailure);
MLENG_ERROR(MissingScore);
MLENG_ERROR(NonFiniteScore);

// refinement
MLENG_ERROR(UnusableBlock);
MLENG_ERROR(EmptyBlock);

// ensemble / finalizer / orchestrator
MLENG_ERROR(EmptyScript);
MLENG_ERROR(AllCandidatesFailed);
MLENG_ERROR(SubmissionMissing);
MLENG_ERROR(CorruptJournal);
MLENG_ERROR(ConfigError);

#undef MLENG_ERROR

// Thrown when a run stops at a configured halt checkpoint. Not an Error:
// the run is healthy and resumable.
struct Halted {
    std::string label;
};

} // namespace mleng
