#pragma once

#include <stdexcept>
#include <string>

namespace hmcda {

// Precondition violated by a caller-supplied argument.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An EM component ended up with zero effective membership.
class DegenerateComponent : public std::runtime_error {
public:
    explicit DegenerateComponent(std::size_t component)
        : std::runtime_error("degenerate mixture component " + std::to_string(component)),
          component_(component) {}
    std::size_t component() const { return component_; }

private:
    std::size_t component_;
};

class FitFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite energy or gradient encountered along a Hamiltonian trajectory.
class TrajectoryDivergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, double residual)
        : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
          residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

class ModelBlowUp : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A forecast member failed to propagate.
class ForecastFailure : public std::runtime_error {
public:
    ForecastFailure(std::size_t member, const std::string& what)
        : std::runtime_error("member " + std::to_string(member) + ": " + what), member_(member) {}
    std::size_t member() const { return member_; }

private:
    std::size_t member_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace hmcda
