#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsdlab {

/// Base class for all structured errors thrown by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Two objects that must share a state space (or a dimension) do not.
class DimensionMismatch : public Error {
public:
    DimensionMismatch(std::size_t lhs, std::size_t rhs, const std::string& context)
        : Error(context + ": dimension mismatch (" + std::to_string(lhs) + " vs " +
                std::to_string(rhs) + ")"),
          lhs_size(lhs), rhs_size(rhs) {}
    std::size_t lhs_size;
    std::size_t rhs_size;
};

/// Conditional evolution hit total extinction before the requested step.
class ExtinctionError : public Error {
public:
    explicit ExtinctionError(int step)
        : Error("conditional evolution: total mass reached 0 at step " + std::to_string(step)),
          first_dead_step(step) {}
    int first_dead_step;
};

/// A linear system was singular at machine precision.
class SingularSystem : public Error {
public:
    SingularSystem(std::string context, std::vector<std::size_t> states)
        : Error(std::move(context)), offending_states(std::move(states)) {}
    std::vector<std::size_t> offending_states;
};

/// The dominant communicating class is periodic; power iteration cannot converge.
class PeriodicityError : public Error {
public:
    explicit PeriodicityError(int p)
        : Error("dominant class is periodic with period " + std::to_string(p)), period(p) {}
    int period;
};

/// Two communicating classes tie for the dominant Perron root.
class DominantClassTie : public Error {
public:
    DominantClassTie(double root, std::vector<std::size_t> class_a, std::vector<std::size_t> class_b)
        : Error("two communicating classes tie for the dominant root " + std::to_string(root) +
                "; pass an explicit class selection"),
          tied_root(root), a(std::move(class_a)), b(std::move(class_b)) {}
    double tied_root;
    std::vector<std::size_t> a, b;
};

/// Exponential hitting moment diverges on the listed states.
class DivergentMoment : public Error {
public:
    DivergentMoment(double theta, std::vector<std::size_t> states)
        : Error("hitting moment at theta=" + std::to_string(theta) + " diverges on " +
                std::to_string(states.size()) + " state(s)"),
          theta_value(theta), divergent_states(std::move(states)) {}
    double theta_value;
    std::vector<std::size_t> divergent_states;
};

/// A search horizon was exhausted before the sought criterion was met.
class HorizonExhausted : public Error {
public:
    HorizonExhausted(const std::string& what, double best)
        : Error(what), best_value(best) {}
    double best_value;
};

/// Generic precondition violation with a short context string.
class Precondition : public Error {
public:
    explicit Precondition(const std::string& what) : Error(what) {}
};

}  // namespace qsdlab
