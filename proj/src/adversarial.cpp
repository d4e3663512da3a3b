#include "dapn/adversarial.hpp"

#include <cmath>

namespace dapn::adv {

namespace {

Mat normal_matrix(int rows, int cols, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

Mat pad_predictions(const Mat& g, int d_g) {
    if (g.cols() > d_g)
        throw ValidationError("conditioning: prediction dim " + std::to_string(g.cols()) + " exceeds d_g " +
                              std::to_string(d_g));
    if (g.cols() == d_g) return g;
    Mat padded = Mat::Zero(g.rows(), d_g);
    padded.leftCols(g.cols()) = g;
    return padded;
}

}  // namespace

ConditioningMaps::ConditioningMaps(int d_f_, int d_g_, int d_, int d_feat_, Rng& rng)
    : d_f(d_f_), d_g(d_g_), d(d_), d_feat(d_feat_) {
    if (d_f <= 0 || d_g <= 0 || d <= 0 || d_feat <= 0)
        throw ValidationError("ConditioningMaps: dimensions must be positive");
    mode = (static_cast<long long>(d_f) * d_g <= d_feat) ? CondMode::kOuter : CondMode::kRandomized;
    if (mode == CondMode::kRandomized) {
        r_f = normal_matrix(d, d_f, rng);
        r_g = normal_matrix(d, d_g, rng);
    }
}

Eigen::VectorXd ConditioningMaps::condition(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const {
    if (f.size() != d_f) throw ValidationError("condition: feature dim mismatch");
    Mat grow = pad_predictions(g.transpose(), d_g);
    Eigen::VectorXd gp = grow.row(0).transpose();
    if (mode == CondMode::kOuter) {
        Eigen::VectorXd out(d_f * d_g);
        for (int a = 0; a < d_f; ++a)
            for (int b = 0; b < d_g; ++b) out(a * d_g + b) = f(a) * gp(b);
        return out;
    }
    Eigen::VectorXd rf = r_f * f;
    Eigen::VectorXd rg = r_g * gp;
    return (rf.array() * rg.array()).matrix() / std::sqrt(static_cast<double>(d));
}

Var ConditioningMaps::condition_batch(const Var& f, const Mat& g) const {
    if (f.cols() != d_f) throw ValidationError("condition_batch: feature dim mismatch");
    if (f.rows() != g.rows()) throw ValidationError("condition_batch: batch sizes differ");
    Mat gp = pad_predictions(g, d_g);
    if (mode == CondMode::kOuter) return ad::outer_flatten(f, ad::constant(gp));
    Var rf = ad::matmul(f, ad::constant(r_f.transpose()));
    Mat rg = gp * r_g.transpose();
    return ad::scale(ad::mul(rf, ad::constant(rg)), 1.0 / std::sqrt(static_cast<double>(d)));
}

double entropy(const Eigen::VectorXd& g) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        const double p = g(i);
        if (p < -1e-9 || p > 1.0 + 1e-9) throw ValidationError("entropy: probability outside [0,1]");
        if (p > 0.0) h -= p * std::log(p);
    }
    return h < 0.0 ? 0.0 : h;
}

double transfer_weight(double h) {
    if (h < 0.0) throw ValidationError("transfer_weight: entropy must be non-negative");
    return 1.0 + std::exp(-h);
}

Eigen::VectorXd batch_transfer_weights(const Mat& g) {
    Eigen::VectorXd w(g.rows());
    for (Eigen::Index i = 0; i < g.rows(); ++i) w(i) = transfer_weight(entropy(g.row(i).transpose()));
    return w;
}

DomainDiscriminator::DomainDiscriminator(int in_dim, int hidden, Rng& rng) {
    l1 = nn::Linear::he(in_dim, hidden, rng);
    l2 = nn::Linear::glorot(hidden, 1, rng);
}

void DomainDiscriminator::collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const {
    l1.collect(prefix + ".l1", out);
    l2.collect(prefix + ".l2", out);
}

namespace {

// -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
Var weighted_bce_side(const Var& logits, const Eigen::VectorXd* weights, bool positive_class) {
    Var nll = positive_class ? ad::softplus(ad::neg(logits)) : ad::softplus(logits);
    if (weights) nll = ad::row_scale(nll, *weights);
    return ad::mean_all(nll);
}

}  // namespace

Var domain_confusion_loss(const Var& f_source, const Mat& g_source, const Var& f_target, const Mat& g_target,
                          const DomainDiscriminator& disc, const ConditioningMaps& maps, double lambda,
                          bool entropy_weights) {
    if (f_source.rows() == 0 || f_target.rows() == 0)
        throw ValidationError("domain_confusion_loss: empty source or target batch");
    Var t_src = maps.condition_batch(ad::grad_reverse(f_source, lambda), g_source);
    Var t_tgt = maps.condition_batch(ad::grad_reverse(f_target, lambda), g_target);
    Var z_src = disc.logits(t_src);
    Var z_tgt = disc.logits(t_tgt);
    if (entropy_weights) {
        Eigen::VectorXd w_src = batch_transfer_weights(g_source);
        Eigen::VectorXd w_tgt = batch_transfer_weights(g_target);
        return ad::add(weighted_bce_side(z_src, &w_src, true), weighted_bce_side(z_tgt, &w_tgt, false));
    }
    return ad::add(weighted_bce_side(z_src, nullptr, true), weighted_bce_side(z_tgt, nullptr, false));
}

Var domain_discriminative_loss(const Var& f_source, const Mat& g_source, const Var& f_target,
                               const Mat& g_target, const DomainDiscriminator& disc,
                               const ConditioningMaps& maps) {
    if (f_source.rows() == 0 || f_target.rows() == 0)
        throw ValidationError("domain_discriminative_loss: empty source or target batch");
    Var z_src = disc.logits(maps.condition_batch(f_source, g_source));
    Var z_tgt = disc.logits(maps.condition_batch(f_target, g_target));
    return ad::add(weighted_bce_side(z_src, nullptr, true), weighted_bce_side(z_tgt, nullptr, false));
}

double lambda_ramp(double progress) {
    if (progress < 0.0 || progress > 1.0) throw ValidationError("lambda_ramp: progress must be in [0,1]");
    return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
}

}  // namespace dapn::adv
