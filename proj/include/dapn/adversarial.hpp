#pragma once

#include <string>
#include <vector>

#include "dapn/autodiff.hpp"
#include "dapn/nn.hpp"
#include "dapn/rng.hpp"

namespace dapn::adv {

using ad::Mat;
using ad::Var;

enum class CondMode { kOuter, kRandomized };

/// Feature/prediction conditioning for the domain discriminators. The random
/// maps are sampled once at construction and stay fixed. Predictions shorter
/// than d_g (smaller episode way) are zero-padded, which keeps them on the
/// probability simplex of the padded dimension.
struct ConditioningMaps {
    Mat r_f;  // [d, d_f]
    Mat r_g;  // [d, d_g]
    int d_f = 0;
    int d_g = 0;
    int d = 0;
    int d_feat = 0;
    CondMode mode = CondMode::kOuter;

    ConditioningMaps() = default;
    /// Picks the outer-product branch when d_f*d_g <= d_feat, the randomized
    /// dot-product approximation otherwise.
    ConditioningMaps(int d_f, int d_g, int d, int d_feat, Rng& rng);

    int out_dim() const { return mode == CondMode::kOuter ? d_f * d_g : d; }

    /// Single-vector conditioning T(h); pads g up to d_g.
    Eigen::VectorXd condition(const Eigen::VectorXd& f, const Eigen::VectorXd& g) const;

    /// Batched conditioning of a differentiable feature batch against a
    /// detached prediction batch (one row per sample, at most d_g columns).
    Var condition_batch(const Var& f, const Mat& g) const;
};

/// Shannon entropy with the 0*log0 := 0 convention; g must lie on the
/// simplex.
double entropy(const Eigen::VectorXd& g);

/// Entropy-aware transfer weight w(H) = 1 + e^{-H}, in (1, 2].
double transfer_weight(double h);

/// Per-row transfer weights for a batch of predictions.
Eigen::VectorXd batch_transfer_weights(const Mat& g);

/// Two-layer perceptron mapping a conditioned vector to P(domain == source).
struct DomainDiscriminator {
    nn::Linear l1, l2;

    DomainDiscriminator() = default;
    DomainDiscriminator(int in_dim, int hidden, Rng& rng);

    Var logits(const Var& x) const { return l2.forward(ad::relu(l1.forward(x))); }
    Var prob(const Var& x) const { return ad::sigmoid(logits(x)); }
    void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const;
};

/// Domain-confusion loss on post-embedding features: features pass through
/// gradient reversal before the discriminator, predictions act as detached
/// conditioning, and per-sample entropy weights (constants) prioritise
/// confidently classified samples. Setting entropy_weights = false recovers
/// the unweighted adversarial loss.
Var domain_confusion_loss(const Var& f_source, const Mat& g_source, const Var& f_target, const Mat& g_target,
                          const DomainDiscriminator& disc, const ConditioningMaps& maps, double lambda,
                          bool entropy_weights = true);

/// Domain-discriminative loss on pre-embedding features: a plain joint
/// minimisation, no gradient reversal, no entropy weights.
Var domain_discriminative_loss(const Var& f_source, const Mat& g_source, const Var& f_target,
                               const Mat& g_target, const DomainDiscriminator& disc,
                               const ConditioningMaps& maps);

/// Gradient-reversal warm-up 2/(1+e^{-10 p}) - 1 over training progress p.
double lambda_ramp(double progress);

}  // namespace dapn::adv
