#include "dapn/model.hpp"

namespace dapn {

void ModelConfig::validate() const {
    backbone.validate();
    if (disc_hidden <= 0) throw ValidationError("ModelConfig: disc_hidden must be positive");
    if (cond_dim <= 0 || d_feat <= 0) throw ValidationError("ModelConfig: conditioning dims must be positive");
    if (max_way <= 0) throw ValidationError("ModelConfig: max_way must be positive");
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng init(derive_seed(seed, "model_init"));
    backbone = make_backbone(cfg_.backbone, init);
    embedding = EmbeddingModule(cfg_.backbone, init);

    Rng maps_rng(derive_seed(seed, "conditioning_maps"));
    maps_post = adv::ConditioningMaps(cfg_.backbone.embed_dim, cfg_.max_way, cfg_.cond_dim, cfg_.d_feat, maps_rng);
    maps_pre =
        adv::ConditioningMaps(cfg_.backbone.feature_dim, cfg_.max_way, cfg_.cond_dim, cfg_.d_feat, maps_rng);

    disc_post = adv::DomainDiscriminator(maps_post.out_dim(), cfg_.disc_hidden, init);
    disc_pre = adv::DomainDiscriminator(maps_pre.out_dim(), cfg_.disc_hidden, init);
}

FeatureTriple Model::embed(const ad::Var& images) const {
    return embedding.forward(backbone->forward(images));
}

std::vector<nn::NamedParam> Model::trainable_params() const {
    std::vector<nn::NamedParam> out;
    backbone->collect("backbone", out);
    embedding.collect("embedding", out);
    disc_post.collect("disc_post", out);
    disc_pre.collect("disc_pre", out);
    weights.collect("uncertainty", out);
    return out;
}

}  // namespace dapn
