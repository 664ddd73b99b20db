#pragma once

#include <stdexcept>
#include <string>

namespace dropreg {

// Error categories map to CLI exit codes: ConfigError -> 2,
// TrainingDiverged -> 3, IoError -> 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingDiverged : std::runtime_error {
    int batch_index;
    TrainingDiverged(const std::string& msg, int batch)
        : std::runtime_error(msg), batch_index(batch) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dropreg
