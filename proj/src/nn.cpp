#include "dapn/nn.hpp"

#include <cmath>
#include <memory>

namespace dapn::nn {

namespace {

Mat normal_matrix(int rows, int cols, Rng& rng, double std) {
    std::normal_distribution<double> dist(0.0, std);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

// im2col for one CHW-flattened image row; returns [cin*k*k, h*w].
Mat im2col(const Eigen::RowVectorXd& img, ImageDims in, int k) {
    const int pad = k / 2;
    Mat col = Mat::Zero(in.c * k * k, in.h * in.w);
    for (int c = 0; c < in.c; ++c) {
        const int base = c * in.h * in.w;
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                const int row = (c * k + dy) * k + dx;
                for (int y = 0; y < in.h; ++y) {
                    const int sy = y + dy - pad;
                    if (sy < 0 || sy >= in.h) continue;
                    for (int x = 0; x < in.w; ++x) {
                        const int sx = x + dx - pad;
                        if (sx < 0 || sx >= in.w) continue;
                        col(row, y * in.w + x) = img(base + sy * in.w + sx);
                    }
                }
            }
        }
    }
    return col;
}

void col2im_add(const Mat& colgrad, ImageDims in, int k, Eigen::RowVectorXd& out) {
    const int pad = k / 2;
    for (int c = 0; c < in.c; ++c) {
        const int base = c * in.h * in.w;
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                const int row = (c * k + dy) * k + dx;
                for (int y = 0; y < in.h; ++y) {
                    const int sy = y + dy - pad;
                    if (sy < 0 || sy >= in.h) continue;
                    for (int x = 0; x < in.w; ++x) {
                        const int sx = x + dx - pad;
                        if (sx < 0 || sx >= in.w) continue;
                        out(base + sy * in.w + sx) += colgrad(row, y * in.w + x);
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, ImageDims in, int cout, int k) {
    if (x.cols() != in.pixels())
        throw ValidationError("conv2d: input row length " + std::to_string(x.cols()) + " != c*h*w " +
                              std::to_string(in.pixels()));
    if (w.rows() != cout || w.cols() != in.c * k * k) throw ValidationError("conv2d: weight shape mismatch");
    if (b.rows() != 1 || b.cols() != cout) throw ValidationError("conv2d: bias shape mismatch");

    const Eigen::Index n = x.rows();
    const int hw = in.h * in.w;
    Mat out(n, static_cast<Eigen::Index>(cout) * hw);
    auto cols = std::make_shared<std::vector<Mat>>();
    cols->reserve(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::RowVectorXd img = x.value().row(i);
        Mat col = im2col(img, in, k);
        Mat y = w.value() * col;
        y.colwise() += b.value().row(0).transpose();
        // flatten [cout, hw] back into CHW row layout
        for (int c = 0; c < cout; ++c)
            for (int p = 0; p < hw; ++p) out(i, static_cast<Eigen::Index>(c) * hw + p) = y(c, p);
        cols->push_back(std::move(col));
    }

    auto nx = x.node();
    auto nw = w.node();
    auto nb = b.node();
    ImageDims din = in;
    int kk = k, co = cout;
    auto backward = [nx, nw, nb, cols, din, kk, co, hw](const Mat& g) {
        const Eigen::Index n = g.rows();
        Mat gw;
        Mat gb;
        if (nw->requires_grad) gw = Mat::Zero(co, din.c * kk * kk);
        if (nb->requires_grad) gb = Mat::Zero(1, co);
        Mat gx;
        if (nx->requires_grad) gx = Mat::Zero(n, din.pixels());
        for (Eigen::Index i = 0; i < n; ++i) {
            Mat gy(co, hw);
            for (int c = 0; c < co; ++c)
                for (int p = 0; p < hw; ++p) gy(c, p) = g(i, static_cast<Eigen::Index>(c) * hw + p);
            if (nw->requires_grad) gw += gy * (*cols)[static_cast<size_t>(i)].transpose();
            if (nb->requires_grad) gb += gy.rowwise().sum().transpose();
            if (nx->requires_grad) {
                Mat gcol = nw->value.transpose() * gy;
                Eigen::RowVectorXd gimg = Eigen::RowVectorXd::Zero(din.pixels());
                col2im_add(gcol, din, kk, gimg);
                gx.row(i) += gimg;
            }
        }
        if (nw->requires_grad) ad::detail::accumulate(nw.get(), gw);
        if (nb->requires_grad) ad::detail::accumulate(nb.get(), gb);
        if (nx->requires_grad) ad::detail::accumulate(nx.get(), gx);
    };

    auto node = std::make_shared<ad::detail::Node>();
    node->value = std::move(out);
    for (const Var* v : {&x, &w, &b})
        if (v->requires_grad()) {
            node->requires_grad = true;
            node->parents.push_back(v->node());
        }
    if (node->requires_grad) node->backward = std::move(backward);
    return Var::from_node(std::move(node));
}

Var maxpool2(const Var& x, ImageDims in) {
    if (x.cols() != in.pixels()) throw ValidationError("maxpool2: input row length != c*h*w");
    const int ho = in.h / 2, wo = in.w / 2;
    if (ho == 0 || wo == 0) throw ValidationError("maxpool2: spatial size too small to pool");
    const Eigen::Index n = x.rows();
    Mat out(n, static_cast<Eigen::Index>(in.c) * ho * wo);
    auto argmax = std::make_shared<std::vector<std::vector<int>>>(
        static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(in.c) * ho * wo));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = x.value().row(i);
        for (int c = 0; c < in.c; ++c) {
            const int base = c * in.h * in.w;
            for (int y = 0; y < ho; ++y) {
                for (int xo = 0; xo < wo; ++xo) {
                    int best = base + (2 * y) * in.w + 2 * xo;
                    double bv = row(best);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            int idx = base + (2 * y + dy) * in.w + (2 * xo + dx);
                            if (row(idx) > bv) {
                                bv = row(idx);
                                best = idx;
                            }
                        }
                    int o = (c * ho + y) * wo + xo;
                    out(i, o) = bv;
                    (*argmax)[static_cast<size_t>(i)][static_cast<size_t>(o)] = best;
                }
            }
        }
    }
    auto nx = x.node();
    const Eigen::Index in_cols = x.cols();
    auto node = std::make_shared<ad::detail::Node>();
    node->value = std::move(out);
    if (x.requires_grad()) {
        node->requires_grad = true;
        node->parents.push_back(nx);
        node->backward = [nx, argmax, in_cols](const Mat& g) {
            Mat gx = Mat::Zero(g.rows(), in_cols);
            for (Eigen::Index i = 0; i < g.rows(); ++i)
                for (Eigen::Index o = 0; o < g.cols(); ++o)
                    gx(i, (*argmax)[static_cast<size_t>(i)][static_cast<size_t>(o)]) += g(i, o);
            ad::detail::accumulate(nx.get(), gx);
        };
    }
    return Var::from_node(std::move(node));
}

Linear::Linear(int in, int out, Rng& rng, double w_std) {
    W = ad::param(normal_matrix(in, out, rng, w_std));
    b = ad::param(Mat::Zero(1, out));
}

Linear Linear::he(int in, int out, Rng& rng) { return Linear(in, out, rng, std::sqrt(2.0 / in)); }

Linear Linear::glorot(int in, int out, Rng& rng) { return Linear(in, out, rng, std::sqrt(2.0 / (in + out))); }

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".W", W});
    out.push_back({prefix + ".b", b});
}

Conv2d::Conv2d(int cin_, int cout_, int k_, Rng& rng) : cin(cin_), cout(cout_), k(k_) {
    W = ad::param(normal_matrix(cout, cin * k * k, rng, std::sqrt(2.0 / (cin * k * k))));
    b = ad::param(Mat::Zero(1, cout));
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".W", W});
    out.push_back({prefix + ".b", b});
}

SgdMomentum::SgdMomentum(std::vector<SgdGroup> groups, double momentum) : momentum_(momentum) {
    for (auto& g : groups)
        for (auto& p : g.params) {
            if (!p.defined() || !p.requires_grad()) throw ValidationError("SgdMomentum: non-trainable param");
            slots_.push_back({p, g.weight_decay, Mat::Zero(p.rows(), p.cols())});
        }
}

void SgdMomentum::step(double lr) {
    // params that received no gradient this step are skipped entirely, so a
    // loss that is toggled off leaves its modules bitwise unchanged
    for (auto& s : slots_) {
        if (!s.p.has_grad()) continue;
        Mat g = s.p.grad();
        if (s.wd != 0.0) g += s.wd * s.p.value();
        s.vel = momentum_ * s.vel + g;
        s.p.value_mut() -= lr * s.vel;
    }
}

void SgdMomentum::zero_grad() {
    for (auto& s : slots_) s.p.zero_grad();
}

}  // namespace dapn::nn
