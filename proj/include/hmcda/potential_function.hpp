#pragma once

#include <Eigen/Dense>

#include <functional>
#include <utility>

namespace hmcda {

/// Negative log of an (unnormalized) target density and its gradient.
/// Implementations must be reentrant: chains evaluate them concurrently.
class PotentialFunction {
public:
    virtual ~PotentialFunction() = default;

    virtual std::size_t dim() const = 0;
    virtual double value(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::VectorXd gradient(const Eigen::VectorXd& x) const = 0;
};

/// Adapter over a pair of callables.
class FunctionPotential final : public PotentialFunction {
public:
    using ValueFn = std::function<double(const Eigen::VectorXd&)>;
    using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

    FunctionPotential(std::size_t dim, ValueFn value, GradientFn gradient)
        : dim_(dim), value_(std::move(value)), gradient_(std::move(gradient)) {}

    std::size_t dim() const override { return dim_; }
    double value(const Eigen::VectorXd& x) const override { return value_(x); }
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override { return gradient_(x); }

private:
    std::size_t dim_;
    ValueFn value_;
    GradientFn gradient_;
};

}  // namespace hmcda
