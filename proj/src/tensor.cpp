#include "dropreg/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "dropreg/kernels.hpp"

namespace dropreg {

std::string Shape4::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor Tensor::zeros(Shape4 shape, bool requires_grad) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = shape;
    t.impl_->values.assign(shape.size(), 0.0);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape4 shape, double value, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    t.impl_->values.assign(shape.size(), value);
    return t;
}

Tensor Tensor::from_values(Shape4 shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape.size())
        throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                    " does not match shape " + shape.str());
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = shape;
    t.impl_->values = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1, 1, 1, 1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (!is_scalar()) throw std::logic_error("item() requires a scalar tensor, got " + shape().str());
    return impl_->values[0];
}

std::vector<double>& Tensor::grad() const {
    if (impl_->grad.size() != impl_->values.size()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() const {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
}

void Tensor::accumulate_grad(const double* g, std::size_t count) const {
    if (count != impl_->values.size())
        throw std::logic_error("gradient size mismatch for tensor " + shape().str());
    kernels::active().axpy(1.0, g, grad().data(), count);
}

Tensor Tensor::clone() const {
    return from_values(impl_->shape, impl_->values, false);
}

void ComputationTape::record(const Tensor& output, std::function<void()> backward_fn) {
    nodes_.push_back({output, std::move(backward_fn)});
}

void ComputationTape::backward(const Tensor& root) {
    if (!root.is_scalar())
        throw std::logic_error("backward root must be scalar, got " + root.shape().str());
    bool on_tape = false;
    for (const Node& node : nodes_) {
        if (node.output.id() == root.id()) {
            on_tape = true;
            break;
        }
    }
    if (!on_tape) throw std::logic_error("backward root was not produced on this tape");

    for (Node& node : nodes_) node.output.zero_grad();
    root.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
}

void ComputationTape::clear() { nodes_.clear(); }

namespace {
std::atomic<int> g_verify{-1};
}

bool verify_mode() {
    int v = g_verify.load(std::memory_order_relaxed);
    if (v < 0) {
        const char* env = std::getenv("DROPREG_VERIFY");
        v = (env && env[0] == '1') ? 1 : 0;
        g_verify.store(v, std::memory_order_relaxed);
    }
    return v == 1;
}

void set_verify_mode(bool enabled) { g_verify.store(enabled ? 1 : 0, std::memory_order_relaxed); }

void check_finite(const Tensor& t, const char* op_name) {
    if (!verify_mode()) return;
    for (double v : t.values()) {
        if (!std::isfinite(v))
            throw std::runtime_error(std::string(op_name) + ": non-finite value in output " +
                                     t.shape().str());
    }
}

}  // namespace dropreg
