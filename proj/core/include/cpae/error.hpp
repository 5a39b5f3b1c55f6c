#pragma once

#include <stdexcept>
#include <string>

namespace cpae {

// Base error. `code()` is a stable machine-readable identifier that the CLI
// writes into its error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& m) : Error("shape_mismatch", m) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& m) : Error("invalid_state", m) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error("invalid_config", m) {}
};

class IntegrationError : public Error {
public:
    IntegrationError(const std::string& m, long step) : Error("integration_failed", m), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& m, long step) : Error("diverged", m), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error("io_error", m) {}
};

}  // namespace cpae
