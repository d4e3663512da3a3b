#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "dapn/autodiff.hpp"
#include "dapn/nn.hpp"
#include "dapn/rng.hpp"

namespace dapn {

enum class BackboneArch { kSmallConv4, kResnet18Like };

BackboneArch parse_arch(const std::string& name);
const char* arch_name(BackboneArch arch);

struct BackboneConfig {
    BackboneArch arch = BackboneArch::kSmallConv4;
    int input_channels = 3;
    int input_size = 84;
    int feature_dim = 512;     // d of the pre-embedding vector f~
    int embed_dim = 512;       // M, dimension of f_bar and f
    int bottleneck_dim = 256;  // autoencoder bottleneck
    std::array<int, 4> conv_channels{64, 64, 64, 64};

    int input_pixels() const { return input_channels * input_size * input_size; }
    void validate() const;
};

/// Feature extraction CNN producing f~ rows from image rows.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual ad::Var forward(const ad::Var& images) const = 0;
    virtual void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const = 0;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, Rng& rng);

/// Per-sample features at the three stages of the pipeline.
struct FeatureTriple {
    ad::Var pre_embed;  // f~, [n, feature_dim]
    ad::Var autoenc;    // f_bar, [n, embed_dim]
    ad::Var gated;      // f, [n, embed_dim]
};

/// Domain-adaptive embedding: an autoencoder bottleneck transform plus a
/// sigmoid attention gate over its output. The encoder-decoder pair is
/// trained only through the downstream losses; it emits no reconstruction
/// objective.
struct EmbeddingModule {
    nn::Linear enc;   // feature_dim -> bottleneck
    nn::Linear dec;   // bottleneck -> embed_dim
    nn::Linear attn;  // feature_dim -> embed_dim

    EmbeddingModule() = default;
    EmbeddingModule(const BackboneConfig& cfg, Rng& rng);

    ad::Var autoencode(const ad::Var& f_tilde) const;
    ad::Var attention_gate(const ad::Var& f_tilde, const ad::Var& f_bar) const;
    FeatureTriple forward(const ad::Var& f_tilde) const;
    void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const;
};

}  // namespace dapn
