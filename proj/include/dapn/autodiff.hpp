#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dapn/error.hpp"

namespace dapn::ad {

using Mat = Eigen::MatrixXd;

namespace detail {

struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Pushes this node's accumulated gradient into its parents.
    std::function<void(const Mat&)> backward;
};

void accumulate(Node* n, const Mat& g);

}  // namespace detail

/// Handle to a node of the reverse-mode computation graph. Copies share the
/// underlying node; graphs are freed when the last handle goes away, while
/// parameter leaves persist across training steps.
class Var {
public:
    Var() = default;

    bool defined() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    Mat& value_mut() { return node_->value; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && node_->has_grad; }
    const Mat& grad() const {
        if (!has_grad()) throw ValidationError("Var::grad: no gradient accumulated");
        return node_->grad;
    }
    void zero_grad() {
        if (!node_) return;
        node_->has_grad = false;
        node_->grad.resize(0, 0);
    }

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Var from_node(std::shared_ptr<detail::Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Leaf that never receives gradients.
Var constant(Mat v);
/// Trainable leaf; gradients accumulate until zero_grad().
Var param(Mat v);
Var scalar_const(double v);

double scalar(const Var& v);

// Elementwise and linear-algebra primitives. Batch convention throughout the
// library: rows are samples, columns are features.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& row);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp_elem(const Var& a);
Var log_elem(const Var& a);
Var softplus(const Var& a);
Var sqrt_elem(const Var& a, double eps = 0.0);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var log_softmax_rows(const Var& a);

/// Squared Euclidean distances between all rows of x [n x d] and p [w x d];
/// result is [n x w].
Var pairwise_sqdist(const Var& x, const Var& p);

/// out[i,0] = a(i, cols[i])
Var pick_per_row(const Var& a, const std::vector<int>& cols);

/// Scales row i of a by the constant w[i] (no gradient through w).
Var row_scale(const Var& a, const Eigen::VectorXd& w);

/// Identity forward; multiplies the upstream gradient by -lambda on the way
/// back.
Var grad_reverse(const Var& a, double lambda);

/// Row-wise flattened outer product: out(i, fi*dg + gi) = f(i,fi) * g(i,gi).
/// Flattening is row-major over (f index, g index).
Var outer_flatten(const Var& f, const Var& g);

/// Contiguous row block [begin, begin+count).
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);

/// Backpropagates from a scalar root through the graph. Gradients accumulate
/// into every reachable node with requires_grad set.
void backward(const Var& root);

}  // namespace dapn::ad
