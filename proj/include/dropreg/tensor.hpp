#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dropreg {

struct Shape4 {
    std::size_t n = 0, c = 0, h = 0, w = 0;

    std::size_t size() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

// Dense rank-4 tensor (batch, channel, height, width), double precision,
// row-major. Copying a Tensor copies the handle; storage is shared. The
// gradient buffer is allocated lazily on first accumulation.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape4 shape, bool requires_grad = false);
    static Tensor full(Shape4 shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape4 shape, std::vector<double> values,
                              bool requires_grad = false);
    // Scalar tensors are shaped (1,1,1,1).
    static Tensor scalar(double value, bool requires_grad = false);

    bool valid() const { return impl_ != nullptr; }
    const Shape4& shape() const { return impl_->shape; }
    std::size_t size() const { return impl_->values.size(); }
    bool is_scalar() const { return impl_->shape.size() == 1; }

    double* data() { return impl_->values.data(); }
    const double* data() const { return impl_->values.data(); }
    std::vector<double>& values() { return impl_->values; }
    const std::vector<double>& values() const { return impl_->values; }

    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return impl_->values[offset(n, c, h, w)];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return impl_->values[offset(n, c, h, w)];
    }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

    bool has_grad() const { return !impl_->grad.empty(); }
    // Grad buffer sized and zeroed on demand. A Tensor is a handle; gradient
    // accumulation mutates the shared storage, so these are const-callable.
    std::vector<double>& grad() const;
    void zero_grad() const;
    void accumulate_grad(const double* g, std::size_t count) const;

    // Deep copy of values (fresh storage, no grad, no history).
    Tensor clone() const;

    // Identity of the underlying storage, used to tie tape nodes to outputs.
    const void* id() const { return impl_.get(); }

  private:
    struct Impl {
        Shape4 shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool requires_grad = false;
    };

    std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        const Shape4& s = impl_->shape;
        return ((n * s.c + c) * s.h + h) * s.w + w;
    }

    std::shared_ptr<Impl> impl_;
};

// Ordered record of executed operations. Ops append one node each, capturing
// whatever state their backward rule needs; inputs always precede the node
// that consumes them, so one reverse sweep propagates all gradients.
class ComputationTape {
  public:
    void record(const Tensor& output, std::function<void()> backward_fn);

    // Seeds root's gradient with 1 and runs every node's rule in reverse.
    // Intermediate (op output) gradients are reset per traversal; leaf
    // gradients accumulate additively across repeated calls.
    void backward(const Tensor& root);

    void clear();
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor output;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
};

// Optional verification mode: ops check their outputs for NaN/Inf.
// Enabled by DROPREG_VERIFY=1 or set_verify_mode(true).
bool verify_mode();
void set_verify_mode(bool enabled);
void check_finite(const Tensor& t, const char* op_name);

}  // namespace dropreg
