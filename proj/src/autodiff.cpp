#include "chromareg/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace chromareg::ad {

namespace {
thread_local bool g_grad_enabled = true;

void require(bool cond, const char* what) {
    if (!cond) throw std::invalid_argument(what);
}
}  // namespace

void Node::accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (grad.size() == 0)
        grad = g;
    else
        grad += g;
}

Var constant(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var variable(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(const Matrix&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (any) {
            n->requires_grad = true;
            n->inputs.reserve(inputs.size());
            for (auto& in : inputs) n->inputs.push_back(in.node());
            n->backward = std::move(backward);
        }
    }
    return Var(std::move(n));
}

void backward(const Var& root) {
    require(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
    if (!root.requires_grad()) return;
    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->accumulate(Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(n->grad);
    }
    // Interior gradients are no longer needed; leaves keep theirs.
    for (Node* n : order)
        if (n->backward) n->grad.resize(0, 0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out = a.value() * b.value();
    auto na = a.node(), nb = b.node();
    return make_op(std::move(out), {a, b}, [na, nb](const Matrix& g) {
        if (na->requires_grad) na->accumulate(g * nb->value.transpose());
        if (nb->requires_grad) nb->accumulate(na->value.transpose() * g);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
    Matrix out = a.value() * b.value().transpose();
    auto na = a.node(), nb = b.node();
    return make_op(std::move(out), {a, b}, [na, nb](const Matrix& g) {
        if (na->requires_grad) na->accumulate(g * nb->value);
        if (nb->requires_grad) nb->accumulate(g.transpose() * na->value);
    });
}

Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    auto na = a.node(), nb = b.node();
    return make_op(a.value() + b.value(), {a, b}, [na, nb](const Matrix& g) {
        na->accumulate(g);
        nb->accumulate(g);
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    auto na = a.node(), nb = b.node();
    return make_op(a.value() - b.value(), {a, b}, [na, nb](const Matrix& g) {
        na->accumulate(g);
        if (nb->requires_grad) nb->accumulate(-g);
    });
}

Var mul(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    auto na = a.node(), nb = b.node();
    return make_op(a.value().cwiseProduct(b.value()), {a, b}, [na, nb](const Matrix& g) {
        if (na->requires_grad) na->accumulate(g.cwiseProduct(nb->value));
        if (nb->requires_grad) nb->accumulate(g.cwiseProduct(na->value));
    });
}

Var scale(const Var& a, double s) {
    auto na = a.node();
    return make_op(a.value() * s, {a}, [na, s](const Matrix& g) { na->accumulate(g * s); });
}

Var add_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols");
    Matrix out = a.value().rowwise() + row.value().row(0);
    auto na = a.node(), nr = row.node();
    return make_op(std::move(out), {a, row}, [na, nr](const Matrix& g) {
        na->accumulate(g);
        if (nr->requires_grad) nr->accumulate(g.colwise().sum());
    });
}

Var relu(const Var& a) {
    Matrix out = a.value().cwiseMax(0.0);
    auto na = a.node();
    return make_op(std::move(out), {a}, [na](const Matrix& g) {
        na->accumulate((na->value.array() > 0.0).select(g, 0.0));
    });
}

Var square(const Var& a) {
    auto na = a.node();
    return make_op(a.value().cwiseAbs2(), {a}, [na](const Matrix& g) {
        na->accumulate(2.0 * g.cwiseProduct(na->value));
    });
}

Var sqrt_eps(const Var& a, double eps) {
    Matrix out = (a.value().array() + eps).sqrt().matrix();
    auto na = a.node();
    Matrix saved = out;
    return make_op(std::move(out), {a}, [na, saved](const Matrix& g) {
        na->accumulate((0.5 * g.array() / saved.array()).matrix());
    });
}

Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps) {
    const Eigen::Index c = a.cols();
    require(gain.rows() == 1 && gain.cols() == c && bias.rows() == 1 && bias.cols() == c, "layer_norm: bad gain/bias");
    const Matrix& x = a.value();
    Eigen::VectorXd mean = x.rowwise().mean();
    Matrix xc = x.colwise() - mean;
    Eigen::VectorXd inv_std = ((xc.cwiseAbs2().rowwise().sum() / static_cast<double>(c)).array() + eps).rsqrt();
    Matrix xhat = xc.array().colwise() * inv_std.array();
    Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
    auto na = a.node(), ng = gain.node(), nb = bias.node();
    return make_op(std::move(out), {a, gain, bias}, [na, ng, nb, xhat, inv_std, c](const Matrix& g) {
        if (ng->requires_grad) ng->accumulate(g.cwiseProduct(xhat).colwise().sum());
        if (nb->requires_grad) nb->accumulate(g.colwise().sum());
        if (na->requires_grad) {
            Matrix gx = g.array().rowwise() * ng->value.row(0).array();
            Eigen::VectorXd m1 = gx.rowwise().mean();
            Eigen::VectorXd m2 = gx.cwiseProduct(xhat).rowwise().sum() / static_cast<double>(c);
            Matrix dx = gx.colwise() - m1;
            dx -= (xhat.array().colwise() * m2.array()).matrix();
            na->accumulate((dx.array().colwise() * inv_std.array()).matrix());
        }
    });
}

Var softmax_rows(const Var& a) {
    const Matrix& x = a.value();
    Eigen::VectorXd mx = x.rowwise().maxCoeff();
    Matrix e = (x.colwise() - mx).array().exp().matrix();
    Eigen::VectorXd s = e.rowwise().sum();
    Matrix p = e.array().colwise() / s.array();
    auto na = a.node();
    Matrix saved = p;
    return make_op(std::move(p), {a}, [na, saved](const Matrix& g) {
        Eigen::VectorXd dot = g.cwiseProduct(saved).rowwise().sum();
        na->accumulate(saved.cwiseProduct(Matrix(g.colwise() - dot)));
    });
}

Var l2_normalize_rows(const Var& a, double eps) {
    const Matrix& x = a.value();
    Eigen::VectorXd norm = (x.rowwise().squaredNorm().array() + eps).sqrt();
    Matrix y = x.array().colwise() / norm.array();
    auto na = a.node();
    Matrix saved = y;
    return make_op(std::move(y), {a}, [na, saved, norm](const Matrix& g) {
        Eigen::VectorXd dot = g.cwiseProduct(saved).rowwise().sum();
        Matrix dx = g - Matrix(saved.array().colwise() * dot.array());
        na->accumulate((dx.array().colwise() / norm.array()).matrix());
    });
}

Var gather_rows(const Var& a, std::span<const int> idx, int group) {
    require(group >= 1 && idx.size() % group == 0, "gather_rows: index count must be a multiple of group");
    const Eigen::Index c = a.cols();
    const Eigen::Index out_rows = static_cast<Eigen::Index>(idx.size() / group);
    Matrix out(out_rows, c * group);
    const Matrix& x = a.value();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < x.rows(), "gather_rows: index out of range");
        out.block(static_cast<Eigen::Index>(i / group), static_cast<Eigen::Index>(i % group) * c, 1, c) = x.row(idx[i]);
    }
    auto na = a.node();
    std::vector<int> saved(idx.begin(), idx.end());
    return make_op(std::move(out), {a}, [na, saved = std::move(saved), group, c](const Matrix& g) {
        Matrix dx = Matrix::Zero(na->value.rows(), c);
        for (std::size_t i = 0; i < saved.size(); ++i)
            dx.row(saved[i]) += g.block(static_cast<Eigen::Index>(i / group), static_cast<Eigen::Index>(i % group) * c, 1, c);
        na->accumulate(dx);
    });
}

Var group_mean_rows(const Var& a, int group) {
    require(group >= 1 && a.rows() % group == 0, "group_mean_rows: rows must be a multiple of group");
    const Eigen::Index n = a.rows() / group, c = a.cols();
    Matrix out = Matrix::Zero(n, c);
    const Matrix& x = a.value();
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = x.middleRows(i * group, group).colwise().sum() / group;
    auto na = a.node();
    return make_op(std::move(out), {a}, [na, group, n, c](const Matrix& g) {
        Matrix dx(n * group, c);
        for (Eigen::Index i = 0; i < n; ++i) dx.middleRows(i * group, group).rowwise() = g.row(i) / group;
        na->accumulate(dx);
    });
}

Var segment_mean(const Var& a, const std::vector<std::vector<int>>& segments) {
    const Eigen::Index c = a.cols();
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(segments.size()), c);
    const Matrix& x = a.value();
    for (std::size_t s = 0; s < segments.size(); ++s) {
        require(!segments[s].empty(), "segment_mean: empty segment");
        for (int i : segments[s]) out.row(s) += x.row(i);
        out.row(s) /= static_cast<double>(segments[s].size());
    }
    auto na = a.node();
    return make_op(std::move(out), {a}, [na, segments, c](const Matrix& g) {
        Matrix dx = Matrix::Zero(na->value.rows(), c);
        for (std::size_t s = 0; s < segments.size(); ++s) {
            const double w = 1.0 / static_cast<double>(segments[s].size());
            for (int i : segments[s]) dx.row(i) += w * g.row(s);
        }
        na->accumulate(dx);
    });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
    require(rows * cols == a.value().size(), "reshape: element count changes");
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
    auto na = a.node();
    return make_op(std::move(out), {a}, [na](const Matrix& g) {
        na->accumulate(Eigen::Map<const Matrix>(g.data(), na->value.rows(), na->value.cols()));
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const Eigen::Index r = parts.front().rows();
    Eigen::Index total = 0;
    for (const auto& p : parts) {
        require(p.rows() == r, "concat_cols: row count mismatch");
        total += p.cols();
    }
    Matrix out(r, total);
    Eigen::Index off = 0;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        off += p.cols();
        nodes.push_back(p.node());
    }
    return make_op(std::move(out), parts, [nodes](const Matrix& g) {
        Eigen::Index o = 0;
        for (const auto& n : nodes) {
            const Eigen::Index w = n->value.cols();
            if (n->requires_grad) n->accumulate(g.middleCols(o, w));
            o += w;
        }
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
    auto na = a.node();
    return make_op(a.value().middleCols(start, count), {a}, [na, start, count](const Matrix& g) {
        Matrix dx = Matrix::Zero(na->value.rows(), na->value.cols());
        dx.middleCols(start, count) = g;
        na->accumulate(dx);
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
    auto na = a.node();
    return make_op(a.value().middleRows(start, count), {a}, [na, start, count](const Matrix& g) {
        Matrix dx = Matrix::Zero(na->value.rows(), na->value.cols());
        dx.middleRows(start, count) = g;
        na->accumulate(dx);
    });
}

Var sum_all(const Var& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    auto na = a.node();
    return make_op(std::move(out), {a}, [na](const Matrix& g) {
        na->accumulate(Matrix::Constant(na->value.rows(), na->value.cols(), g(0, 0)));
    });
}

Var mean_all(const Var& a) {
    require(a.value().size() > 0, "mean_all: empty input");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var add_scalars(const std::vector<Var>& terms) {
    Matrix out = Matrix::Zero(1, 1);
    std::vector<NodePtr> nodes;
    for (const auto& t : terms) {
        require(t.rows() == 1 && t.cols() == 1, "add_scalars: terms must be 1x1");
        out(0, 0) += t.scalar();
        nodes.push_back(t.node());
    }
    return make_op(std::move(out), terms, [nodes](const Matrix& g) {
        for (const auto& n : nodes) n->accumulate(g);
    });
}

}  // namespace chromareg::ad
