#pragma once

#include <stdexcept>
#include <string>

namespace ivor {

// Stable machine-readable error identities; exit codes and JSON error
// objects in the CLI are derived from these.
enum class ErrorCode {
    RankDeficient,
    Separation,
    NonBinaryResponse,
    SpecMismatch,
    WeakInstrument,
    NoRoot,
    MultipleRootsAmbiguous,
    NegativeDiscriminant,
    DegenerateTable,
    Nonconvergence,
    SingularBread,
    MissingLevel,
    NoExactSolution,
    BracketFailure,
    MissingColumn,
    EmptyAfterFiltering,
    NonBinaryOutcome,
    InvalidArgument,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const { return code_; }
    const char* code_name() const { return error_code_name(code_); }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

}  // namespace ivor
