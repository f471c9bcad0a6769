#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace epigam::ad {

enum class Op : std::uint8_t {
    constant,
    parameter,
    add,
    sub,
    mul,
    div,
    exp,
    log1p,
    sigmoid,
    max0,
    square,
};

std::string_view op_name(Op op);

using ParamId = std::uint32_t;

/// Named trainable scalars plus one gradient slot each. Groups are free-form
/// owner tags ("encoder", "local_bias", "initial_condition", "head").
class ParameterStore {
public:
    struct Parameter {
        std::string name;
        std::string group;
        double value = 0.0;
        double grad = 0.0;
    };

    ParamId add(std::string name, std::string group, double value);

    std::size_t size() const noexcept { return params_.size(); }
    bool contains(std::string_view name) const;
    ParamId id(std::string_view name) const;

    double value(ParamId id) const { return params_.at(id).value; }
    void set_value(ParamId id, double v) { params_.at(id).value = v; }
    double grad(ParamId id) const { return params_.at(id).grad; }
    const Parameter& at(ParamId id) const { return params_.at(id); }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }

    std::vector<double> values() const;
    void set_values(const std::vector<double>& values);
    std::vector<double> gradients() const;
    void zero_grad();

private:
    friend class Tape;
    std::vector<Parameter> params_;
    std::unordered_map<std::string, ParamId> index_;
};

class Tape;

/// Scalar handle onto a tape node. A Var without a tape is an untracked
/// constant; mixing it with tracked values records only the tracked side.
class Var {
public:
    Var() = default;
    Var(double constant) : value_(constant) {} // NOLINT(google-explicit-constructor)

    double value() const noexcept { return value_; }
    bool tracked() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::uint32_t index() const noexcept { return index_; }

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t index, double value) : value_(value), tape_(tape), index_(index) {}

    double value_ = 0.0;
    Tape* tape_ = nullptr;
    std::uint32_t index_ = 0;
};

/// Eager scalar tape for reverse-mode differentiation. Values are computed
/// when an operation is recorded; `backward` sweeps the nodes in reverse.
class Tape {
public:
    struct Node {
        double value = 0.0;
        double adjoint = 0.0;
        double partial[2] = {0.0, 0.0};
        std::uint32_t pred[2] = {0, 0};
        std::int32_t param = -1;
        Op op = Op::constant;
        std::uint8_t arity = 0;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void reserve(std::size_t n) { nodes_.reserve(n); }
    void reset();

    Var constant(double value);
    Var parameter(const ParameterStore& store, ParamId id);

    Var add(const Var& a, const Var& b);
    Var sub(const Var& a, const Var& b);
    Var mul(const Var& a, const Var& b);
    Var div(const Var& a, const Var& b);
    Var exp(const Var& x);
    Var log1p(const Var& x);
    Var sigmoid(const Var& x);
    Var max0(const Var& x);
    Var square(const Var& x);

    /// Reverse sweep from `root`; writes d(root)/d(param) into `store`
    /// (slots are zeroed first). A second call before `reset` throws.
    void backward(const Var& root, ParameterStore& store);

    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(std::uint32_t i) const { return nodes_.at(i); }
    double adjoint(const Var& v) const;
    bool backward_done() const noexcept { return backward_done_; }

private:
    Var push_unary(Op op, const Var& x, double value, double partial);
    Var push_binary(Op op, const Var& a, const Var& b, double value, double pa, double pb);
    [[noreturn]] void numerical_failure(std::string_view what, Op op) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Scalar math on Var. All binary operators accept mixed Var/double operands
// through the implicit constant constructor.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var& operator+=(Var& a, const Var& b);
Var& operator-=(Var& a, const Var& b);
Var& operator*=(Var& a, const Var& b);

Var exp(const Var& x);
Var log1p(const Var& x);
Var sigmoid(const Var& x);
Var max0(const Var& x);
Var square(const Var& x);

inline double value_of(const Var& v) { return v.value(); }

} // namespace epigam::ad

namespace epigam {

// Double-precision counterparts so templated model code compiles for both
// scalar types.
inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}
inline double max0(double x) { return x > 0.0 ? x : 0.0; }
inline double square(double x) { return x * x; }
inline double value_of(double v) { return v; }

} // namespace epigam
