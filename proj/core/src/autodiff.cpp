#include "epigam/autodiff.hpp"

#include "epigam/errors.hpp"

#include <cmath>
#include <sstream>

namespace epigam::ad {

std::string_view op_name(Op op) {
    switch (op) {
    case Op::constant: return "constant";
    case Op::parameter: return "parameter";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::exp: return "exp";
    case Op::log1p: return "log1p";
    case Op::sigmoid: return "sigmoid";
    case Op::max0: return "max0";
    case Op::square: return "square";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// ParameterStore

ParamId ParameterStore::add(std::string name, std::string group, double value) {
    if (index_.count(name) != 0) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    const auto id = static_cast<ParamId>(params_.size());
    index_.emplace(name, id);
    params_.push_back({std::move(name), std::move(group), value, 0.0});
    return id;
}

bool ParameterStore::contains(std::string_view name) const {
    return index_.count(std::string(name)) != 0;
}

ParamId ParameterStore::id(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw LookupError("unknown parameter '" + std::string(name) + "'");
    }
    return it->second;
}

std::vector<double> ParameterStore::values() const {
    std::vector<double> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        out.push_back(p.value);
    }
    return out;
}

void ParameterStore::set_values(const std::vector<double>& values) {
    if (values.size() != params_.size()) {
        throw ShapeError("parameter vector has " + std::to_string(values.size()) + " entries, store has " +
                         std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        params_[i].value = values[i];
    }
}

std::vector<double> ParameterStore::gradients() const {
    std::vector<double> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        out.push_back(p.grad);
    }
    return out;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) {
        p.grad = 0.0;
    }
}

// ---------------------------------------------------------------------------
// Tape

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

Var Tape::constant(double value) {
    Node n;
    n.value = value;
    n.op = Op::constant;
    nodes_.push_back(n);
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
}

Var Tape::parameter(const ParameterStore& store, ParamId id) {
    Node n;
    n.value = store.value(id);
    n.op = Op::parameter;
    n.param = static_cast<std::int32_t>(id);
    nodes_.push_back(n);
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), n.value);
}

Var Tape::push_unary(Op op, const Var& x, double value, double partial) {
    if (!x.tracked()) {
        return Var(value);
    }
    Node n;
    n.value = value;
    n.op = op;
    n.arity = 1;
    n.pred[0] = x.index();
    n.partial[0] = partial;
    nodes_.push_back(n);
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
}

Var Tape::push_binary(Op op, const Var& a, const Var& b, double value, double pa, double pb) {
    if (a.tracked() && b.tracked()) {
        if (a.tape() != b.tape()) {
            throw AutodiffError("operands of '" + std::string(op_name(op)) + "' live on different tapes");
        }
        Node n;
        n.value = value;
        n.op = op;
        n.arity = 2;
        n.pred[0] = a.index();
        n.pred[1] = b.index();
        n.partial[0] = pa;
        n.partial[1] = pb;
        nodes_.push_back(n);
        return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
    }
    if (a.tracked()) {
        return push_unary(op, a, value, pa);
    }
    if (b.tracked()) {
        return push_unary(op, b, value, pb);
    }
    return Var(value);
}

void Tape::numerical_failure(std::string_view what, Op op) const {
    std::ostringstream os;
    os << what << " in '" << op_name(op) << "' at node #" << nodes_.size();
    throw NumericalError(os.str());
}

Var Tape::add(const Var& a, const Var& b) {
    return push_binary(Op::add, a, b, a.value() + b.value(), 1.0, 1.0);
}

Var Tape::sub(const Var& a, const Var& b) {
    return push_binary(Op::sub, a, b, a.value() - b.value(), 1.0, -1.0);
}

Var Tape::mul(const Var& a, const Var& b) {
    return push_binary(Op::mul, a, b, a.value() * b.value(), b.value(), a.value());
}

Var Tape::div(const Var& a, const Var& b) {
    if (b.value() == 0.0) {
        numerical_failure("division by zero", Op::div);
    }
    const double inv = 1.0 / b.value();
    const double q = a.value() * inv;
    return push_binary(Op::div, a, b, q, inv, -q * inv);
}

Var Tape::exp(const Var& x) {
    const double e = std::exp(x.value());
    return push_unary(Op::exp, x, e, e);
}

Var Tape::log1p(const Var& x) {
    if (!(x.value() > -1.0)) {
        numerical_failure("log of nonpositive argument", Op::log1p);
    }
    return push_unary(Op::log1p, x, std::log1p(x.value()), 1.0 / (1.0 + x.value()));
}

Var Tape::sigmoid(const Var& x) {
    const double s = epigam::sigmoid(x.value());
    return push_unary(Op::sigmoid, x, s, s * (1.0 - s));
}

Var Tape::max0(const Var& x) {
    // Subgradient 0 at exactly 0.
    const bool positive = x.value() > 0.0;
    return push_unary(Op::max0, x, positive ? x.value() : 0.0, positive ? 1.0 : 0.0);
}

Var Tape::square(const Var& x) {
    return push_unary(Op::square, x, x.value() * x.value(), 2.0 * x.value());
}

double Tape::adjoint(const Var& v) const {
    if (!v.tracked() || v.tape() != this) {
        return 0.0;
    }
    return nodes_.at(v.index()).adjoint;
}

void Tape::backward(const Var& root, ParameterStore& store) {
    if (!root.tracked() || root.tape() != this) {
        throw AutodiffError("backward root is not a node of this tape");
    }
    if (backward_done_) {
        throw AutodiffError("backward called twice without reset");
    }
    backward_done_ = true;
    store.zero_grad();

    nodes_[root.index()].adjoint = 1.0;
    for (std::uint32_t i = root.index() + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        const double adj = n.adjoint;
        if (adj == 0.0) {
            continue;
        }
        for (std::uint8_t k = 0; k < n.arity; ++k) {
            nodes_[n.pred[k]].adjoint += adj * n.partial[k];
        }
        if (n.param >= 0) {
            store.params_.at(static_cast<std::size_t>(n.param)).grad += adj;
        }
    }
}

// ---------------------------------------------------------------------------
// Free functions

namespace {

Tape* tape_of(const Var& a, const Var& b) {
    return a.tracked() ? a.tape() : b.tape();
}

} // namespace

Var operator+(const Var& a, const Var& b) {
    if (Tape* t = tape_of(a, b)) {
        return t->add(a, b);
    }
    return Var(a.value() + b.value());
}

Var operator-(const Var& a, const Var& b) {
    if (Tape* t = tape_of(a, b)) {
        return t->sub(a, b);
    }
    return Var(a.value() - b.value());
}

Var operator*(const Var& a, const Var& b) {
    if (Tape* t = tape_of(a, b)) {
        return t->mul(a, b);
    }
    return Var(a.value() * b.value());
}

Var operator/(const Var& a, const Var& b) {
    if (Tape* t = tape_of(a, b)) {
        return t->div(a, b);
    }
    if (b.value() == 0.0) {
        throw NumericalError("division by zero in 'div' on untracked constants");
    }
    return Var(a.value() / b.value());
}

Var operator-(const Var& a) {
    if (a.tracked()) {
        return a.tape()->mul(a, Var(-1.0));
    }
    return Var(-a.value());
}

Var& operator+=(Var& a, const Var& b) { return a = a + b; }
Var& operator-=(Var& a, const Var& b) { return a = a - b; }
Var& operator*=(Var& a, const Var& b) { return a = a * b; }

Var exp(const Var& x) {
    return x.tracked() ? x.tape()->exp(x) : Var(std::exp(x.value()));
}

Var log1p(const Var& x) {
    if (x.tracked()) {
        return x.tape()->log1p(x);
    }
    if (!(x.value() > -1.0)) {
        throw NumericalError("log of nonpositive argument in 'log1p' on untracked constant");
    }
    return Var(std::log1p(x.value()));
}

Var sigmoid(const Var& x) {
    return x.tracked() ? x.tape()->sigmoid(x) : Var(epigam::sigmoid(x.value()));
}

Var max0(const Var& x) {
    return x.tracked() ? x.tape()->max0(x) : Var(epigam::max0(x.value()));
}

Var square(const Var& x) {
    return x.tracked() ? x.tape()->square(x) : Var(x.value() * x.value());
}

} // namespace epigam::ad
