#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>

#include "fan/common.hpp"

namespace fan {

// Dense N-dimensional array with an optional same-shape gradient buffer.
// Copying a Tensor copies a handle; storage is shared. Scalar type is float
// for training/inference and double in the gradient-check harness.
template <typename T>
class Tensor {
    struct Impl {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // non-empty iff requires_grad
        bool requires_grad = false;
        bool leaf = true;  // false for op outputs; backward() zeroes non-leaf grads
    };

public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data.assign(static_cast<size_t>(numel_of(t.impl_->shape)), T(0));
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (T& v : t.impl_->data) v = value;
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (numel_of(shape) != static_cast<int64_t>(values.size()))
            throw ConfigError(strcat_("tensor data length ", values.size(),
                                      " does not match shape ", shape_str(shape)));
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(values);
        t.set_requires_grad(requires_grad);
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::vector<T>& vec() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) {
        impl_->requires_grad = rg;
        if (rg)
            impl_->grad.assign(impl_->data.size(), T(0));
        else
            impl_->grad.clear();
    }

    T* grad() { return impl_->grad.data(); }
    const T* grad() const { return impl_->grad.data(); }
    std::vector<T>& grad_vec() { return impl_->grad; }

    void zero_grad() {
        for (T& g : impl_->grad) g = T(0);
    }

    bool is_leaf() const { return impl_->leaf; }
    void mark_non_leaf() { impl_->leaf = false; }

    // 4D accessors for [B,C,H,W] layouts; tests and ops use these heavily.
    T& at(int64_t b, int64_t c, int64_t h, int64_t w) {
        const Shape& s = impl_->shape;
        return impl_->data[static_cast<size_t>(((b * s[1] + c) * s[2] + h) * s[3] + w)];
    }
    T at(int64_t b, int64_t c, int64_t h, int64_t w) const {
        const Shape& s = impl_->shape;
        return impl_->data[static_cast<size_t>(((b * s[1] + c) * s[2] + h) * s[3] + w)];
    }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    bool all_finite() const {
        for (T v : impl_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    std::shared_ptr<Impl> impl_;
};

// Records one backward rule per operation, in execution order. backward()
// replays them exactly once in reverse. Gradients of op outputs are zeroed
// at the start of each sweep; leaf (parameter) gradients accumulate across
// sweeps until explicitly zeroed.
template <typename T>
class Tape {
public:
    void record(const char* name, std::vector<Tensor<T>> outputs, std::function<void()> backward) {
        for (auto& out : outputs) out.mark_non_leaf();
        entries_.push_back(Entry{name, std::move(outputs), std::move(backward)});
    }

    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw NumericError(strcat_("backward requires a scalar loss, got shape ",
                                       shape_str(loss.shape())));
        if (!loss.requires_grad())
            throw NumericError("backward on a loss that does not require grad");
        for (auto& e : entries_)
            for (auto& out : e.outputs) out.zero_grad();
        loss.grad()[0] = T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    }

    size_t size() const { return entries_.size(); }
    const char* op_name(size_t i) const { return entries_[i].name; }
    void clear() { entries_.clear(); }

private:
    struct Entry {
        const char* name;
        std::vector<Tensor<T>> outputs;
        std::function<void()> backward;
    };
    std::vector<Entry> entries_;
};

}  // namespace fan
