#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uspose/rng.hpp"

namespace uspose::nn {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;     // allocated only when gradients flow here
    bool requires_grad = false;   // leaf parameter flag
    bool needs_grad = false;      // true if backward must reach this node
};

// Cheap value-semantic handle onto a shared node. Copies alias the same data,
// which is what the tape and the optimizer both rely on.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v);
    static Tensor rand_uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[i]; }
    int64_t size() const { return static_cast<int64_t>(impl_->value.size()); }

    std::vector<double>& value() { return impl_->value; }
    const std::vector<double>& value() const { return impl_->value; }
    std::vector<double>& grad() { return impl_->grad; }
    const std::vector<double>& grad() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }

    bool requires_grad() const { return impl_->requires_grad; }
    bool needs_grad() const { return impl_->needs_grad; }
    void zero_grad();

    double item() const;

    TensorData* node() const { return impl_.get(); }
    const std::shared_ptr<TensorData>& ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorData> impl_;
    friend class Tape;
};

// Record of executed primitives in execution order; backward replays it in
// reverse exactly once and then the tape is consumed.
class Tape {
public:
    // Elementwise; shapes must match or one operand's shape must be a suffix
    // of the other's (broadcast over the leading axes).
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double c);

    Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

    // x [N,Cin,L], w [Cout,Cin,K], b [Cout] -> [N,Cout,L_out]
    Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);
    Tensor max_pool1d(const Tensor& x, int width, int stride);  // over the last axis

    Tensor relu(const Tensor& x);
    // Inverted scaling: activations are divided by the keep probability at
    // train time so inference needs no rescaling.
    Tensor dropout(const Tensor& x, double rate, bool train, Rng& rng);

    // x [..., in], w [in, out], b [out] -> [..., out]
    Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

    // Normalizes the last axis; gain/bias (shape [D]) may be undefined for
    // the plain variant.
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
    Tensor layer_norm(const Tensor& x, double eps) { return layer_norm(x, Tensor(), Tensor(), eps); }

    Tensor softmax(const Tensor& x, int axis);
    Tensor mean(const Tensor& x, int axis);
    Tensor sum(const Tensor& x);  // full reduction to a scalar

    Tensor concat(const std::vector<Tensor>& xs, int axis);
    Tensor reshape(const Tensor& x, Shape new_shape);

    // [N,C,L] -> [N, T, ph*pw] over the non-overlapping (ph, pw) grid,
    // tokens in row-major grid order.
    Tensor patches(const Tensor& x, int patch_height, int patch_width);

    // q,k,v [N,T,D]; per-head scaled dot-product attention, heads | D.
    Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

    // logits [N,K], labels[n] < K; mean over the batch of -log softmax[label].
    Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

    void backward(const Tensor& loss);
    size_t recorded() const { return entries_.size(); }

private:
    struct Entry {
        std::shared_ptr<TensorData> out;
        std::function<void()> backward;
    };
    std::vector<Entry> entries_;

    Tensor result(Shape shape, bool needs_grad);
    void record(const Tensor& out, std::function<void()> fn);
};

}  // namespace uspose::nn
