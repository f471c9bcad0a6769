#include "epigam/gradcheck.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace epigam::ad {

std::string GradCheckReport::to_json() const {
    nlohmann::ordered_json j;
    j["passed"] = passed;
    j["max_error"] = max_error;
    j["loss"] = loss;
    auto& arr = j["parameters"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        arr.push_back({{"name", e.name},
                       {"analytic", e.analytic},
                       {"numeric", e.numeric},
                       {"error", e.error},
                       {"mode", e.relative ? "relative" : "absolute"},
                       {"pass", e.pass}});
    }
    return j.dump(2);
}

GradCheckReport gradient_check(ParameterStore& store, const TapedLoss& taped, const ValueLoss& value,
                               const GradCheckOptions& options) {
    GradCheckReport report;
    {
        Tape tape;
        const Var root = taped(tape, store);
        report.loss = root.value();
        tape.backward(root, store);
    }
    const std::vector<double> analytic = store.gradients();
    const std::vector<double> original = store.values();

    for (ParamId id = 0; id < store.size(); ++id) {
        const double x0 = original[id];
        const double h = options.step;
        auto at = [&](double offset) {
            store.set_value(id, x0 + offset);
            return value(store);
        };
        double numeric = 0.0;
        if (options.fourth_order) {
            numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        } else {
            numeric = (at(h) - at(-h)) / (2.0 * h);
        }
        store.set_value(id, x0);

        GradCheckEntry e;
        e.name = store.at(id).name;
        e.analytic = analytic[id];
        e.numeric = numeric;
        const double scale = std::max(std::abs(e.analytic), std::abs(e.numeric));
        const double diff = std::abs(e.analytic - e.numeric);
        if (scale < options.absolute_floor) {
            e.relative = false;
            e.error = diff;
            e.pass = diff <= options.absolute_floor;
        } else {
            e.error = diff / scale;
            e.pass = e.error <= options.tolerance;
        }
        if (!std::isfinite(e.numeric) || !std::isfinite(e.analytic)) {
            e.pass = false;
        }
        report.max_error = std::max(report.max_error, e.relative ? e.error : 0.0);
        report.passed = report.passed && e.pass;
        report.entries.push_back(std::move(e));
    }
    store.set_values(original);
    return report;
}

GradCheckReport gradient_check(ParameterStore& store, const TapedLoss& taped, const GradCheckOptions& options) {
    ValueLoss value = [&taped](const ParameterStore& s) {
        Tape tape;
        return taped(tape, s).value();
    };
    return gradient_check(store, taped, value, options);
}

} // namespace epigam::ad
