#pragma once

#include <stdexcept>
#include <string>

namespace memtrain {

// Error taxonomy used across the simulator. All carry a human-readable
// message and derive from std::runtime_error so callers can catch broadly.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : DataError {
    explicit FormatError(const std::string& msg) : DataError(msg) {}
};

struct DimensionMismatch : std::runtime_error {
    explicit DimensionMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RangeError : std::runtime_error {
    explicit RangeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TargetOutOfRange : RangeError {
    explicit TargetOutOfRange(const std::string& msg) : RangeError(msg) {}
};

struct InputOutOfRange : RangeError {
    explicit InputOutOfRange(const std::string& msg) : RangeError(msg) {}
};

struct LabelOutOfRange : RangeError {
    explicit LabelOutOfRange(const std::string& msg) : RangeError(msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace memtrain
