#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cehr {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

/// One value in the computation graph. Leaves (parameters, inputs) have no
/// backward function; op results keep their inputs alive until the graph is
/// dropped.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;
};

}  // namespace detail

/// Dense row-major tensor handle with reverse-mode gradient support.
///
/// Copies share the underlying node. Values are treated as immutable once an
/// op has produced them; only leaves are updated in place (by the optimizer
/// and initializers).
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    std::span<double> mutable_values();
    /// Empty unless requires_grad.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    bool requires_grad() const;

    double item() const;
    double at(std::size_t flat_index) const { return values()[flat_index]; }

    /// Seeds d(self)/d(self) = 1 and propagates through the graph. Self must
    /// be a scalar. Gradients accumulate into every reachable node.
    void backward() const;
    void zero_grad();
    /// Copy of the values with no graph attached.
    Tensor detach() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

   private:
    std::shared_ptr<detail::Node> node_;
};

/// While alive, ops on this thread produce plain values without recording
/// the graph.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

bool grad_enabled();

/// Throws std::domain_error naming `context` if any value is NaN or Inf.
void ensure_finite(const Tensor& t, const std::string& context);

#ifndef NDEBUG
#define CEHR_DEBUG_FINITE(t, ctx) ::cehr::ensure_finite((t), (ctx))
#else
#define CEHR_DEBUG_FINITE(t, ctx) ((void)0)
#endif

namespace detail {

using BackwardFn = std::function<void(Node&)>;

/// Wraps freshly computed values as an op result. The graph edge and the
/// backward closure are only kept when some input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

/// grad buffer of an input, or nullptr when that input takes no gradient.
inline double* grad_of(Node& self, std::size_t input) {
    Node& in = *self.inputs[input];
    return in.requires_grad ? in.grad.data() : nullptr;
}

}  // namespace detail

}  // namespace cehr
