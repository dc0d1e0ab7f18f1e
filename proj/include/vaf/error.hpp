#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vaf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration (maps to CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A caller passed an argument outside an operation's domain.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A documented precondition between components was violated
/// (stale tape, non-standardized clip, missing masks, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Non-finite values surfaced during training or fitting (exit code 4).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Query pixel has no rendered surface behind it.
class NoSurfaceError : public Error {
public:
    using Error::Error;
};

/// Requested point is occluded from (or outside of) the camera.
class VisibilityError : public Error {
public:
    using Error::Error;
};

/// A view contains no rankable pixels or segments.
class EmptyViewError : public Error {
public:
    using Error::Error;
};

class DetectionError : public Error {
public:
    explicit DetectionError(std::size_t blob_count)
        : Error("marker detection expected exactly one blob, found " + std::to_string(blob_count)),
          blob_count_(blob_count) {}

    std::size_t blob_count() const noexcept { return blob_count_; }

private:
    std::size_t blob_count_;
};

/// Malformed binary/text input. Carries the byte offset where parsing failed.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Upstream pipeline stage has not been run (exit code 3).
class DependencyError : public Error {
public:
    explicit DependencyError(std::string stage)
        : Error("missing upstream stage '" + stage + "'; run it first"), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Upstream artifacts on disk no longer match their completion record (exit code 3).
class StalenessError : public Error {
public:
    StalenessError(std::string stage, const std::string& detail)
        : Error("stale artifacts from stage '" + stage + "': " + detail), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace vaf
