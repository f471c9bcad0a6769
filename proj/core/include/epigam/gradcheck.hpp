#pragma once

#include "epigam/autodiff.hpp"

#include <functional>
#include <string>
#include <vector>

namespace epigam::ad {

/// Builds a scalar loss on `tape` from the current values in `store`.
using TapedLoss = std::function<Var(Tape& tape, const ParameterStore& store)>;
/// Evaluates the same loss without recording a graph.
using ValueLoss = std::function<double(const ParameterStore& store)>;

struct GradCheckOptions {
    double step = 1e-2;
    /// Fourth-order central stencil (f(x-2h), f(x-h), f(x+h), f(x+2h)).
    /// false uses the two-point central difference.
    bool fourth_order = true;
    double tolerance = 1e-4;
    /// Gradients smaller than this (in both routes) are compared absolutely.
    double absolute_floor = 1e-8;
};

struct GradCheckEntry {
    std::string name;
    double analytic = 0.0;
    double numeric = 0.0;
    double error = 0.0;
    bool relative = true;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_error = 0.0;
    bool passed = true;
    double loss = 0.0;

    std::string to_json() const;
};

/// Compares tape gradients against central finite differences of `value`.
/// `store` is restored to its original values on return.
GradCheckReport gradient_check(ParameterStore& store, const TapedLoss& taped, const ValueLoss& value,
                               const GradCheckOptions& options = {});

/// Overload that evaluates finite differences through the taped builder.
GradCheckReport gradient_check(ParameterStore& store, const TapedLoss& taped, const GradCheckOptions& options = {});

} // namespace epigam::ad
