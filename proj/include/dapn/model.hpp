#pragma once

#include <memory>
#include <vector>

#include "dapn/adversarial.hpp"
#include "dapn/embedding.hpp"
#include "dapn/proto.hpp"
#include "dapn/weighting.hpp"

namespace dapn {

struct ModelConfig {
    BackboneConfig backbone;
    proto::DistMode dist = proto::DistMode::kSqEuclidean;
    int disc_hidden = 256;
    int cond_dim = 1024;  // d of the randomized conditioning maps
    int d_feat = 1024;    // outer-vs-randomized threshold
    int max_way = 20;     // d_g: largest episode way fed to the discriminators

    void validate() const;
};

/// The full network: backbone, domain-adaptive embedding, the two domain
/// discriminators with their fixed conditioning maps, and the learnable loss
/// weights.
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    FeatureTriple embed(const ad::Var& images) const;
    FeatureTriple embed(const ad::Mat& images) const { return embed(ad::constant(images)); }

    /// Trainable parameters (everything the optimiser updates).
    std::vector<nn::NamedParam> trainable_params() const;

    std::unique_ptr<Backbone> backbone;
    EmbeddingModule embedding;
    adv::ConditioningMaps maps_post;       // conditions f for D
    adv::ConditioningMaps maps_pre;        // conditions f~ for D~
    adv::DomainDiscriminator disc_post;    // D
    adv::DomainDiscriminator disc_pre;     // D~
    UncertaintyWeights weights;

private:
    ModelConfig cfg_;
};

}  // namespace dapn
