#pragma once

#include <stdexcept>
#include <string>

namespace vgpl {

/// Violated precondition or broken call contract (bad shapes, out-of-range
/// arguments, incompatible checkpoints). Maps to CLI exit code 2.
class ContractViolation : public std::invalid_argument {
public:
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed file content. Message names the offending byte offset where known.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Rest shape unusable for rigid alignment (collinear or coincident points).
class DegenerateGeometryError : public std::runtime_error {
public:
    explicit DegenerateGeometryError(const std::string& what) : std::runtime_error(what) {}
};

/// Autoregressive prediction produced a non-finite value.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

/// Unreachable internal state (e.g. a cycle in a tape).
class InternalError : public std::logic_error {
public:
    explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace vgpl
