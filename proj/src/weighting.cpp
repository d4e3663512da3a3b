#include "dapn/weighting.hpp"

#include <cmath>

namespace dapn {

UncertaintyWeights::UncertaintyWeights() {
    for (auto& wj : w) wj = ad::param(ad::Mat::Zero(1, 1));
}

std::array<double, 4> UncertaintyWeights::values() const {
    return {w[0].value()(0, 0), w[1].value()(0, 0), w[2].value()(0, 0), w[3].value()(0, 0)};
}

void UncertaintyWeights::collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const {
    for (size_t j = 0; j < 4; ++j) out.push_back({prefix + ".w" + std::to_string(j + 1), w[j]});
}

namespace {

void check_finite(const LossBundle& bundle) {
    auto losses = bundle.as_array();
    for (size_t j = 0; j < 4; ++j) {
        if (!losses[j].defined()) throw ValidationError(std::string("combine_losses: undefined component ") + kLossNames[j]);
        if (!std::isfinite(ad::scalar(losses[j])))
            throw NumericError(std::string("combine_losses: non-finite component ") + kLossNames[j]);
    }
}

}  // namespace

ad::Var combine_losses(const LossBundle& bundle, const UncertaintyWeights& weights) {
    check_finite(bundle);
    auto losses = bundle.as_array();
    ad::Var total;
    for (size_t j = 0; j < 4; ++j) {
        ad::Var term = ad::add(ad::scale(weights.w[j], 0.5),
                               ad::mul(ad::exp_elem(ad::neg(weights.w[j])), losses[j]));
        total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
}

ad::Var combine_losses_fixed(const LossBundle& bundle, const std::array<double, 4>& coeff) {
    auto losses = bundle.as_array();
    ad::Var total;
    for (size_t j = 0; j < 4; ++j) {
        if (coeff[j] == 0.0) continue;
        if (!losses[j].defined()) throw ValidationError(std::string("combine_losses_fixed: undefined component ") + kLossNames[j]);
        if (!std::isfinite(ad::scalar(losses[j])))
            throw NumericError(std::string("combine_losses_fixed: non-finite component ") + kLossNames[j]);
        ad::Var term = coeff[j] == 1.0 ? losses[j] : ad::scale(losses[j], coeff[j]);
        total = total.defined() ? ad::add(total, term) : term;
    }
    if (!total.defined()) throw ValidationError("combine_losses_fixed: all coefficients are zero");
    return total;
}

double softmax_likelihood_weight_check(const Eigen::VectorXd& logits, int true_class, double sigma) {
    if (sigma <= 0.0) throw ValidationError("softmax_likelihood_weight_check: sigma must be positive");
    if (true_class < 0 || true_class >= logits.size())
        throw ValidationError("softmax_likelihood_weight_check: class index out of range");
    const Eigen::ArrayXd scaled = logits.array() / (sigma * sigma);
    const double m = scaled.maxCoeff();
    const double lse = std::log((scaled - m).exp().sum()) + m;
    return scaled(true_class) - lse;
}

}  // namespace dapn
