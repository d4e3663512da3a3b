#pragma once

#include <array>
#include <string>
#include <vector>

#include "dapn/autodiff.hpp"
#include "dapn/nn.hpp"

namespace dapn {

/// The four episodic/adversarial losses of one training step.
struct LossBundle {
    ad::Var lps;  // source episode prototype loss
    ad::Var lpd;  // target episode prototype loss
    ad::Var ldc;  // domain confusion (after embedding)
    ad::Var lds;  // domain discrimination (before embedding)

    std::array<ad::Var, 4> as_array() const { return {lps, lpd, ldc, lds}; }
};

inline const std::array<const char*, 4> kLossNames{"lps", "lpd", "ldc", "lds"};

/// Learnable task-uncertainty parameters w_j = log sigma_j^2, initialised to
/// zero so training starts from the unweighted sum.
struct UncertaintyWeights {
    std::array<ad::Var, 4> w;

    UncertaintyWeights();
    std::array<double, 4> values() const;
    void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const;
};

/// Overall loss sum_j [ w_j/2 + exp(-w_j) * L_j ]. Gradients flow into both
/// the loss branches and the weights. Throws NumericError naming the first
/// non-finite component.
ad::Var combine_losses(const LossBundle& bundle, const UncertaintyWeights& weights);

/// Fixed-coefficient combination for ablation variants; terms with a zero
/// coefficient are left out of the graph entirely.
ad::Var combine_losses_fixed(const LossBundle& bundle, const std::array<double, 4>& coeff);

/// Scaled softmax log-likelihood (1/sigma^2) f_c - log sum exp((1/sigma^2) f);
/// test-side reference for the uncertainty-weighting approximation.
double softmax_likelihood_weight_check(const Eigen::VectorXd& logits, int true_class, double sigma);

}  // namespace dapn
