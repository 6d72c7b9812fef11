#pragma once

#include <stdexcept>
#include <string>

namespace mcss {

// Exit-code categories used by the CLI. Every domain error maps to one.
enum class ErrorCode {
    config = 1,
    io = 2,
    validation = 3,
    numeric = 4,
    batch_construction = 5,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorCode::config, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorCode::io, what) {}
};

// Malformed or inconsistent input data (bad file lines, sync violations,
// out-of-range ids, joints behind the camera).
struct ValidationError : Error {
    explicit ValidationError(const std::string& what) : Error(ErrorCode::validation, what) {}
};

struct ParseError : ValidationError {
    ParseError(const std::string& what, long line)
        : ValidationError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    long line() const { return line_; }

  private:
    long line_;
};

// Numeric degeneracies: non-finite values, degenerate bones, undefined
// scales, collinear point sets, near-zero normalization inputs.
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorCode::numeric, what) {}
};

struct DegeneratePoseError : NumericError {
    explicit DegeneratePoseError(const std::string& what) : NumericError(what) {}
};

struct DegenerateGeometryError : NumericError {
    explicit DegenerateGeometryError(const std::string& what) : NumericError(what) {}
};

struct UndefinedScaleError : NumericError {
    explicit UndefinedScaleError(const std::string& what) : NumericError(what) {}
};

struct NormalizationError : NumericError {
    explicit NormalizationError(const std::string& what) : NumericError(what) {}
};

struct ProjectionError : ValidationError {
    explicit ProjectionError(const std::string& what) : ValidationError(what) {}
};

// Retrieval candidate pool smaller than the requested K.
struct InsufficientCandidatesError : ValidationError {
    explicit InsufficientCandidatesError(const std::string& what) : ValidationError(what) {}
};

// Infeasible mini-batch construction (not enough eligible frames/views).
struct BatchError : Error {
    explicit BatchError(const std::string& what) : Error(ErrorCode::batch_construction, what) {}
};

}  // namespace mcss
