#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ceg {

enum class ErrorCode {
    ShapeMismatch,
    BadMagic,
    UnsupportedVersion,
    MalformedHeader,
    TruncatedBlob,
    RejectedInvalid,
    CountMismatch,
    EmptyClass,
    InvalidArgument,
    InvalidLayer,
    InvalidGroup,
    TooFewSamples,
    NotInGraph,
    NoParents,
    NoCriticalNodes,
    AllDrawsDegenerate,
    ZeroBaseline,
    Io,
    Invariant,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; the code tells callers which
// contract was broken. Everything except Invariant is an input error.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace ceg
