#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include "koop/common.hpp"

namespace koop {

/// Base for all library errors. `code()` is a stable machine-parsable tag.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

private:
    std::string code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};

class InvalidInput : public Error {
public:
    explicit InvalidInput(const std::string& m) : Error("InvalidInput", m) {}
};

class ShapeMismatch : public Error {
public:
    explicit ShapeMismatch(const std::string& m) : Error("ShapeMismatch", m) {}
};

/// Thrown when a trajectory leaves the set of finite states. Carries the last
/// finite state and the step index at which integration blew up.
class IntegrationDiverged : public Error {
public:
    IntegrationDiverged(const std::string& m, Vector state, long step)
        : Error("IntegrationDiverged", m), state_(std::move(state)), step_(step) {}

    const Vector& state() const { return state_; }
    long step() const { return step_; }

private:
    Vector state_;
    long step_;
};

class UnsupportedDictionary : public Error {
public:
    explicit UnsupportedDictionary(const std::string& m) : Error("UnsupportedDictionary", m) {}
};

class SingularGram : public Error {
public:
    explicit SingularGram(const std::string& m) : Error("SingularGram", m) {}
};

class NonFiniteUpdate : public Error {
public:
    explicit NonFiniteUpdate(const std::string& m) : Error("NonFiniteUpdate", m) {}
};

class StaleCache : public Error {
public:
    explicit StaleCache(const std::string& m) : Error("StaleCache", m) {}
};

class ArchitectureMismatch : public Error {
public:
    explicit ArchitectureMismatch(const std::string& m) : Error("ArchitectureMismatch", m) {}
};

class ActionOutOfRange : public Error {
public:
    explicit ActionOutOfRange(const std::string& m) : Error("ActionOutOfRange", m) {}
};

class InsufficientData : public Error {
public:
    explicit InsufficientData(const std::string& m) : Error("InsufficientData", m) {}
};

class DegenerateArms : public Error {
public:
    explicit DegenerateArms(const std::string& m) : Error("DegenerateArms", m) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error("IoError", m) {}
};

}  // namespace koop
