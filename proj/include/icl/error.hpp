#pragma once

#include <stdexcept>
#include <string>

namespace icl {

// Invalid configuration value or malformed config file.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/label dimension mismatch.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Trainer lifecycle misuse (task id mismatch, double end_of_task, ...).
struct SequencingError : std::runtime_error {
    explicit SequencingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing files, unreadable datasets, unwritable outputs.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Metric preconditions violated (incomplete matrix, empty log, T < 2, ...).
struct MetricError : std::runtime_error {
    explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace icl
