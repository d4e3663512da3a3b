#include "dapn/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace dapn::ad {

namespace detail {

void accumulate(Node* n, const Mat& g) {
    if (!n->requires_grad) return;
    if (!n->has_grad) {
        n->grad = g;
        n->has_grad = true;
    } else {
        n->grad += g;
    }
}

}  // namespace detail

using detail::Node;

namespace {

std::shared_ptr<Node> leaf(Mat v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

// Builds an op node. `parents` lists only gradient-requiring inputs (constant
// inputs are kept alive by the backward closure instead).
Var make_op(Mat value, std::initializer_list<Var> inputs, std::function<void(const Mat&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const Var& in : inputs) {
        if (in.requires_grad()) {
            n->requires_grad = true;
            n->parents.push_back(in.node());
        }
    }
    if (n->requires_grad) n->backward = std::move(backward);
    return Var::from_node(std::move(n));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()));
}

}  // namespace

Var constant(Mat v) { return Var::from_node(leaf(std::move(v), false)); }

Var param(Mat v) { return Var::from_node(leaf(std::move(v), true)); }

Var scalar_const(double v) { return constant(Mat::Constant(1, 1, v)); }

double scalar(const Var& v) {
    if (v.rows() != 1 || v.cols() != 1) throw ValidationError("scalar: Var is not 1x1");
    return v.value()(0, 0);
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    auto na = a.node(), nb = b.node();
    return make_op(a.value() + b.value(), {a, b}, [na, nb](const Mat& g) {
        detail::accumulate(na.get(), g);
        detail::accumulate(nb.get(), g);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    auto na = a.node(), nb = b.node();
    return make_op(a.value() - b.value(), {a, b}, [na, nb](const Mat& g) {
        detail::accumulate(na.get(), g);
        if (nb->requires_grad) {
            Mat ng = -g;
            detail::accumulate(nb.get(), ng);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    auto na = a.node(), nb = b.node();
    return make_op(a.value().cwiseProduct(b.value()), {a, b}, [na, nb](const Mat& g) {
        if (na->requires_grad) {
            Mat ga = g.cwiseProduct(nb->value);
            detail::accumulate(na.get(), ga);
        }
        if (nb->requires_grad) {
            Mat gb = g.cwiseProduct(na->value);
            detail::accumulate(nb.get(), gb);
        }
    });
}

Var neg(const Var& a) {
    auto na = a.node();
    return make_op(-a.value(), {a}, [na](const Mat& g) {
        Mat ga = -g;
        detail::accumulate(na.get(), ga);
    });
}

Var scale(const Var& a, double c) {
    auto na = a.node();
    return make_op(a.value() * c, {a}, [na, c](const Mat& g) {
        Mat ga = g * c;
        detail::accumulate(na.get(), ga);
    });
}

Var add_scalar(const Var& a, double c) {
    auto na = a.node();
    return make_op((a.value().array() + c).matrix(), {a},
                   [na](const Mat& g) { detail::accumulate(na.get(), g); });
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows())
        throw ValidationError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                              std::to_string(b.rows()) + ")");
    auto na = a.node(), nb = b.node();
    return make_op(a.value() * b.value(), {a, b}, [na, nb](const Mat& g) {
        if (na->requires_grad) {
            Mat ga = g * nb->value.transpose();
            detail::accumulate(na.get(), ga);
        }
        if (nb->requires_grad) {
            Mat gb = na->value.transpose() * g;
            detail::accumulate(nb.get(), gb);
        }
    });
}

Var add_rowvec(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw ValidationError("add_rowvec: bias must be 1 x cols(a)");
    auto na = a.node(), nr = row.node();
    return make_op((a.value().rowwise() + row.value().row(0)).eval(), {a, row}, [na, nr](const Mat& g) {
        detail::accumulate(na.get(), g);
        if (nr->requires_grad) {
            Mat gr = g.colwise().sum();
            detail::accumulate(nr.get(), gr);
        }
    });
}

Var relu(const Var& a) {
    auto na = a.node();
    return make_op(a.value().cwiseMax(0.0), {a}, [na](const Mat& g) {
        Mat ga = ((na->value.array() > 0.0).cast<double>() * g.array()).matrix();
        detail::accumulate(na.get(), ga);
    });
}

Var sigmoid(const Var& a) {
    Mat s = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    auto na = a.node();
    auto sv = std::make_shared<Mat>(s);
    return make_op(std::move(s), {a}, [na, sv](const Mat& g) {
        Mat ga = (g.array() * sv->array() * (1.0 - sv->array())).matrix();
        detail::accumulate(na.get(), ga);
    });
}

Var exp_elem(const Var& a) {
    Mat e = a.value().array().exp().matrix();
    auto na = a.node();
    auto ev = std::make_shared<Mat>(e);
    return make_op(std::move(e), {a}, [na, ev](const Mat& g) {
        Mat ga = g.cwiseProduct(*ev);
        detail::accumulate(na.get(), ga);
    });
}

Var log_elem(const Var& a) {
    auto na = a.node();
    return make_op(a.value().array().log().matrix(), {a}, [na](const Mat& g) {
        Mat ga = (g.array() / na->value.array()).matrix();
        detail::accumulate(na.get(), ga);
    });
}

Var softplus(const Var& a) {
    // max(x,0) + log1p(exp(-|x|)) is stable over the whole range.
    Mat v = (a.value().array().max(0.0) + (-a.value().array().abs()).exp().log1p()).matrix();
    auto na = a.node();
    return make_op(std::move(v), {a}, [na](const Mat& g) {
        Mat ga = (g.array() / (1.0 + (-na->value.array()).exp())).matrix();
        detail::accumulate(na.get(), ga);
    });
}

Var sqrt_elem(const Var& a, double eps) {
    Mat v = (a.value().array() + eps).sqrt().matrix();
    auto na = a.node();
    auto sv = std::make_shared<Mat>(v);
    return make_op(std::move(v), {a}, [na, sv](const Mat& g) {
        Mat ga = (g.array() * 0.5 / sv->array()).matrix();
        detail::accumulate(na.get(), ga);
    });
}

Var sum_all(const Var& a) {
    auto na = a.node();
    Eigen::Index r = a.rows(), c = a.cols();
    return make_op(Mat::Constant(1, 1, a.value().sum()), {a}, [na, r, c](const Mat& g) {
        Mat ga = Mat::Constant(r, c, g(0, 0));
        detail::accumulate(na.get(), ga);
    });
}

Var mean_all(const Var& a) {
    if (a.rows() == 0 || a.cols() == 0) throw ValidationError("mean_all: empty matrix");
    auto na = a.node();
    Eigen::Index r = a.rows(), c = a.cols();
    double n = static_cast<double>(r * c);
    return make_op(Mat::Constant(1, 1, a.value().sum() / n), {a}, [na, r, c, n](const Mat& g) {
        Mat ga = Mat::Constant(r, c, g(0, 0) / n);
        detail::accumulate(na.get(), ga);
    });
}

Var log_softmax_rows(const Var& a) {
    Mat v = a.value();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        double m = v.row(i).maxCoeff();
        double lse = std::log((v.row(i).array() - m).exp().sum()) + m;
        v.row(i).array() -= lse;
    }
    auto na = a.node();
    auto lsm = std::make_shared<Mat>(v);
    return make_op(std::move(v), {a}, [na, lsm](const Mat& g) {
        Mat p = lsm->array().exp().matrix();
        Eigen::VectorXd rowsum = g.rowwise().sum();
        Mat ga = g - (p.array().colwise() * rowsum.array()).matrix();
        detail::accumulate(na.get(), ga);
    });
}

Var pairwise_sqdist(const Var& x, const Var& p) {
    if (x.cols() != p.cols()) throw ValidationError("pairwise_sqdist: feature dimensions differ");
    const Mat& X = x.value();
    const Mat& P = p.value();
    Eigen::VectorXd xs = X.rowwise().squaredNorm();
    Eigen::VectorXd ps = P.rowwise().squaredNorm();
    Mat d = -2.0 * X * P.transpose();
    d.colwise() += xs;
    d.rowwise() += ps.transpose();
    d = d.cwiseMax(0.0);  // guard tiny negative round-off
    auto nx = x.node(), np = p.node();
    return make_op(std::move(d), {x, p}, [nx, np](const Mat& g) {
        const Mat& X = nx->value;
        const Mat& P = np->value;
        if (nx->requires_grad) {
            Eigen::VectorXd gr = g.rowwise().sum();
            Mat gx = 2.0 * ((X.array().colwise() * gr.array()).matrix() - g * P);
            detail::accumulate(nx.get(), gx);
        }
        if (np->requires_grad) {
            Eigen::VectorXd gc = g.colwise().sum().transpose();
            Mat gp = 2.0 * ((P.array().colwise() * gc.array()).matrix() - g.transpose() * X);
            detail::accumulate(np.get(), gp);
        }
    });
}

Var pick_per_row(const Var& a, const std::vector<int>& cols) {
    if (static_cast<Eigen::Index>(cols.size()) != a.rows())
        throw ValidationError("pick_per_row: one column index per row required");
    Mat v(a.rows(), 1);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        int c = cols[static_cast<size_t>(i)];
        if (c < 0 || c >= a.cols()) throw ValidationError("pick_per_row: column index out of range");
        v(i, 0) = a.value()(i, c);
    }
    auto na = a.node();
    Eigen::Index r = a.rows(), c = a.cols();
    auto idx = cols;
    return make_op(std::move(v), {a}, [na, idx, r, c](const Mat& g) {
        Mat ga = Mat::Zero(r, c);
        for (Eigen::Index i = 0; i < r; ++i) ga(i, idx[static_cast<size_t>(i)]) = g(i, 0);
        detail::accumulate(na.get(), ga);
    });
}

Var row_scale(const Var& a, const Eigen::VectorXd& w) {
    if (w.size() != a.rows()) throw ValidationError("row_scale: one weight per row required");
    Mat v = (a.value().array().colwise() * w.array()).matrix();
    auto na = a.node();
    auto wv = std::make_shared<Eigen::VectorXd>(w);
    return make_op(std::move(v), {a}, [na, wv](const Mat& g) {
        Mat ga = (g.array().colwise() * wv->array()).matrix();
        detail::accumulate(na.get(), ga);
    });
}

Var grad_reverse(const Var& a, double lambda) {
    if (lambda < 0.0) throw ValidationError("grad_reverse: lambda must be non-negative");
    auto na = a.node();
    return make_op(a.value(), {a}, [na, lambda](const Mat& g) {
        Mat ga = g * (-lambda);
        detail::accumulate(na.get(), ga);
    });
}

Var outer_flatten(const Var& f, const Var& g) {
    if (f.rows() != g.rows()) throw ValidationError("outer_flatten: batch sizes differ");
    Eigen::Index n = f.rows(), df = f.cols(), dg = g.cols();
    Mat v(n, df * dg);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index a = 0; a < df; ++a)
            for (Eigen::Index b = 0; b < dg; ++b) v(i, a * dg + b) = f.value()(i, a) * g.value()(i, b);
    auto nf = f.node(), ng = g.node();
    return make_op(std::move(v), {f, g}, [nf, ng, n, df, dg](const Mat& gr) {
        if (nf->requires_grad) {
            Mat gf = Mat::Zero(n, df);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index a = 0; a < df; ++a)
                    for (Eigen::Index b = 0; b < dg; ++b) gf(i, a) += gr(i, a * dg + b) * ng->value(i, b);
            detail::accumulate(nf.get(), gf);
        }
        if (ng->requires_grad) {
            Mat gg = Mat::Zero(n, dg);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index b = 0; b < dg; ++b)
                    for (Eigen::Index a = 0; a < df; ++a) gg(i, b) += gr(i, a * dg + b) * nf->value(i, a);
            detail::accumulate(ng.get(), gg);
        }
    });
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
    if (begin < 0 || count < 0 || begin + count > a.rows())
        throw ValidationError("slice_rows: block [" + std::to_string(begin) + ", " +
                              std::to_string(begin + count) + ") outside " + std::to_string(a.rows()) +
                              " rows");
    auto na = a.node();
    Eigen::Index r = a.rows(), c = a.cols();
    return make_op(a.value().middleRows(begin, count), {a}, [na, begin, count, r, c](const Mat& g) {
        Mat ga = Mat::Zero(r, c);
        ga.middleRows(begin, count) = g;
        detail::accumulate(na.get(), ga);
    });
}

void backward(const Var& root) {
    if (!root.defined() || root.rows() != 1 || root.cols() != 1)
        throw ValidationError("backward: root must be a defined 1x1 scalar");
    Node* r = root.node().get();
    if (!r->requires_grad) return;

    // Reverse DFS postorder is a topological order of the DAG, so each node's
    // backward runs only after all of its consumers pushed gradients into it.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({r, 0});
    seen.insert(r);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    detail::accumulate(r, Mat::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->has_grad) n->backward(n->grad);
    }
}

}  // namespace dapn::ad
