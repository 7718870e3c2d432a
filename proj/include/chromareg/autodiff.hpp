#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major matrices.
// A Var is a handle on a graph node; ops record a backward closure only when an input
// requires a gradient and recording is enabled, so inference builds no graph.

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace chromareg::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Matrix value;
    Matrix grad;  ///< empty until something flows in
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    std::function<void(const Matrix& grad_out)> backward;

    void accumulate(const Matrix& g);
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    const Matrix& value() const { return node_->value; }
    /// Mutable access for parameter updates; never call on an interior node.
    Matrix& mutable_value() { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    Matrix& mutable_grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double scalar() const { return node_->value(0, 0); }
    bool defined() const { return static_cast<bool>(node_); }
    const NodePtr& node() const { return node_; }
    void zero_grad() { node_->grad.resize(0, 0); }

private:
    NodePtr node_;
};

/// Leaf that never receives gradients.
Var constant(Matrix value);
/// Leaf that accumulates gradients (model parameters, or test inputs).
Var variable(Matrix value);

/// Registers an op result. `backward` receives d(loss)/d(output) and must push
/// gradients into `inputs` via Node::accumulate. Skipped when no input needs gradients.
Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(const Matrix&)> backward);

/// Backpropagates from a 1x1 root.
void backward(const Var& root);

/// Disables graph recording for the lifetime of the guard (thread-local).
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

// Linear algebra
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a 1 x C row to every row of a.
Var add_row(const Var& a, const Var& row);
Var relu(const Var& a);
Var square(const Var& a);
Var sqrt_eps(const Var& a, double eps);

/// Row-wise layer normalization with learned gain/bias (1 x C each).
Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);
Var softmax_rows(const Var& a);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

// Indexing and reshaping
/// Output row r is the concatenation of a's rows idx[r*group .. r*group+group-1].
Var gather_rows(const Var& a, std::span<const int> idx, int group = 1);
/// Mean of consecutive groups of `group` rows.
Var group_mean_rows(const Var& a, int group);
/// Output row s is the mean of a's rows listed in segments[s].
Var segment_mean(const Var& a, const std::vector<std::vector<int>>& segments);
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);

// Reductions
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var add_scalars(const std::vector<Var>& terms);

}  // namespace chromareg::ad
