#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace protots {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor of doubles with an optional gradient slot.
///
/// A Tensor is a cheap handle: copies share storage. Use clone() for an
/// independent deep copy. Tensors created with requires_grad take part in
/// reverse-mode differentiation through a Tape.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const;

    std::span<const double> data() const;
    // Direct mutation is reserved for optimizers, initializers, and tests.
    std::span<double> mutable_data();

    double item() const;
    double at(std::size_t i) const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();
    void clear_grad();

    Tensor clone() const;

    // Identity of the underlying storage, used as a key by optimizers.
    const void* id() const noexcept { return impl_.get(); }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };

    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    Impl& impl() const;

    std::shared_ptr<Impl> impl_;

    friend class Tape;
};

/// Records differentiable operations in execution order so that backward()
/// can replay them in reverse. A tape is owned by one thread.
///
/// In inference mode nothing is recorded and outputs never require grad.
class Tape {
public:
    enum class Mode { kTrain, kInference };

    explicit Tape(Mode mode = Mode::kTrain) : mode_(mode) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    // a[m x n] + bias[n] broadcast over rows.
    Tensor add_row_bias(const Tensor& a, const Tensor& bias);
    Tensor scale(const Tensor& a, double factor);
    // s[1] * v, broadcasting the scalar.
    Tensor scale_by(const Tensor& s, const Tensor& v);
    Tensor relu(const Tensor& a);
    Tensor transpose(const Tensor& a);
    Tensor reshape(const Tensor& a, Shape shape);
    Tensor sum(const Tensor& a);

    Tensor row(const Tensor& a, std::size_t index);
    Tensor select(const Tensor& a, std::size_t index);
    Tensor gather_row(const Tensor& table, std::size_t index);
    Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
    Tensor stack_rows(const std::vector<Tensor>& rows);
    Tensor concat(const std::vector<Tensor>& parts);
    Tensor vstack(const Tensor& top, const Tensor& bottom);
    // out[t] = p[(start + t) mod len(p)] for t in [0, length).
    Tensor cyclic_slice(const Tensor& p, std::size_t start, std::size_t length);

    // Softmax of the negated inputs, with max shift.
    Tensor softmax_neg(const Tensor& distances);
    // ||z - m_i||^2 for every row m_i of m.
    Tensor sq_distances(const Tensor& z, const Tensor& m);

    // Sum of |pred - target|; target carries no gradient.
    Tensor l1(const Tensor& pred, const Tensor& target);
    // Sum of (pred - target)^2; target carries no gradient.
    Tensor sq_error(const Tensor& pred, const Tensor& target);
    // sum_i f_i log(max(f_i, clamp)).
    Tensor neg_entropy(const Tensor& f, double clamp = 1e-12);

    void backward(const Tensor& loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool recording() const noexcept { return mode_ == Mode::kTrain; }
    void clear();

private:
    struct Node {
        Tensor output;
        std::function<void(std::span<const double> upstream)> backward;
    };

    Tensor make_output(Shape shape, std::vector<double> values,
                       std::initializer_list<const Tensor*> inputs);
    Tensor make_output(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs);
    void record(const Tensor& out, std::function<void(std::span<const double>)> backward);

    Mode mode_;
    bool consumed_ = false;
    std::vector<Node> nodes_;
};

}  // namespace protots
