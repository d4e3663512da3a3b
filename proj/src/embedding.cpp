#include "dapn/embedding.hpp"

namespace dapn {

BackboneArch parse_arch(const std::string& name) {
    if (name == "small_conv4") return BackboneArch::kSmallConv4;
    if (name == "resnet18_like") return BackboneArch::kResnet18Like;
    throw ConfigError("unknown backbone architecture: " + name);
}

const char* arch_name(BackboneArch arch) {
    return arch == BackboneArch::kSmallConv4 ? "small_conv4" : "resnet18_like";
}

void BackboneConfig::validate() const {
    if (input_channels <= 0 || input_size <= 0) throw ValidationError("BackboneConfig: input dims must be positive");
    if (feature_dim <= 0 || embed_dim <= 0)
        throw ValidationError("BackboneConfig: feature_dim and embed_dim must be positive");
    if (bottleneck_dim <= 0 || bottleneck_dim > embed_dim)
        throw ValidationError("BackboneConfig: bottleneck_dim must be in [1, embed_dim]");
    if (input_size / 16 < 1) throw ValidationError("BackboneConfig: input_size too small for four pooling stages");
    for (int c : conv_channels)
        if (c <= 0) throw ValidationError("BackboneConfig: conv channels must be positive");
}

namespace {

void check_input(const ad::Var& images, const BackboneConfig& cfg) {
    if (images.cols() != cfg.input_pixels())
        throw ValidationError("backbone: input row length " + std::to_string(images.cols()) +
                              " does not match configured " + std::to_string(cfg.input_channels) + "x" +
                              std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size));
}

class SmallConv4 final : public Backbone {
public:
    SmallConv4(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
        int c = cfg.input_channels;
        int s = cfg.input_size;
        for (int i = 0; i < 4; ++i) {
            convs_[static_cast<size_t>(i)] = nn::Conv2d(c, cfg.conv_channels[static_cast<size_t>(i)], 3, rng);
            c = cfg.conv_channels[static_cast<size_t>(i)];
            s /= 2;
        }
        flat_dim_ = c * s * s;
        fc_ = nn::Linear::he(flat_dim_, cfg.feature_dim, rng);
    }

    ad::Var forward(const ad::Var& images) const override {
        check_input(images, cfg_);
        ad::Var x = images;
        nn::ImageDims d{cfg_.input_channels, cfg_.input_size, cfg_.input_size};
        for (int i = 0; i < 4; ++i) {
            const auto& conv = convs_[static_cast<size_t>(i)];
            x = conv.forward(x, d);
            d.c = conv.cout;
            x = nn::maxpool2(ad::relu(x), d);
            d = nn::pooled_dims(d);
        }
        return fc_.forward(x);
    }

    void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const override {
        for (int i = 0; i < 4; ++i)
            convs_[static_cast<size_t>(i)].collect(prefix + ".conv" + std::to_string(i + 1), out);
        fc_.collect(prefix + ".fc", out);
    }

private:
    BackboneConfig cfg_;
    std::array<nn::Conv2d, 4> convs_;
    nn::Linear fc_;
    int flat_dim_ = 0;
};

// Desk-scale residual CNN: a stem plus three residual stages with 1x1
// channel transitions, four pooling steps in total.
class Resnet18Like final : public Backbone {
public:
    Resnet18Like(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
        const auto& ch = cfg.conv_channels;
        stem_ = nn::Conv2d(cfg.input_channels, ch[0], 3, rng);
        for (int s = 0; s < 3; ++s) {
            res_a_[static_cast<size_t>(s)] = nn::Conv2d(ch[static_cast<size_t>(s + 1)], ch[static_cast<size_t>(s + 1)], 3, rng);
            res_b_[static_cast<size_t>(s)] = nn::Conv2d(ch[static_cast<size_t>(s + 1)], ch[static_cast<size_t>(s + 1)], 3, rng);
            trans_[static_cast<size_t>(s)] = nn::Conv2d(ch[static_cast<size_t>(s)], ch[static_cast<size_t>(s + 1)], 1, rng);
        }
        int s = cfg.input_size / 16;
        fc_ = nn::Linear::he(ch[3] * s * s, cfg.feature_dim, rng);
    }

    ad::Var forward(const ad::Var& images) const override {
        check_input(images, cfg_);
        nn::ImageDims d{cfg_.input_channels, cfg_.input_size, cfg_.input_size};
        ad::Var x = stem_.forward(images, d);
        d.c = stem_.cout;
        x = nn::maxpool2(ad::relu(x), d);
        d = nn::pooled_dims(d);
        for (int s = 0; s < 3; ++s) {
            x = trans_[static_cast<size_t>(s)].forward(x, d);
            d.c = trans_[static_cast<size_t>(s)].cout;
            ad::Var y = res_a_[static_cast<size_t>(s)].forward(ad::relu(x), d);
            y = res_b_[static_cast<size_t>(s)].forward(ad::relu(y), d);
            x = ad::relu(ad::add(x, y));
            x = nn::maxpool2(x, d);
            d = nn::pooled_dims(d);
        }
        return fc_.forward(x);
    }

    void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const override {
        stem_.collect(prefix + ".stem", out);
        for (int s = 0; s < 3; ++s) {
            const std::string sp = prefix + ".stage" + std::to_string(s + 1);
            trans_[static_cast<size_t>(s)].collect(sp + ".trans", out);
            res_a_[static_cast<size_t>(s)].collect(sp + ".a", out);
            res_b_[static_cast<size_t>(s)].collect(sp + ".b", out);
        }
        fc_.collect(prefix + ".fc", out);
    }

private:
    BackboneConfig cfg_;
    nn::Conv2d stem_;
    std::array<nn::Conv2d, 3> res_a_, res_b_, trans_;
    nn::Linear fc_;
};

}  // namespace

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.arch == BackboneArch::kSmallConv4) return std::make_unique<SmallConv4>(cfg, rng);
    return std::make_unique<Resnet18Like>(cfg, rng);
}

EmbeddingModule::EmbeddingModule(const BackboneConfig& cfg, Rng& rng) {
    enc = nn::Linear::he(cfg.feature_dim, cfg.bottleneck_dim, rng);
    dec = nn::Linear::glorot(cfg.bottleneck_dim, cfg.embed_dim, rng);
    attn = nn::Linear::glorot(cfg.feature_dim, cfg.embed_dim, rng);
}

ad::Var EmbeddingModule::autoencode(const ad::Var& f_tilde) const {
    if (f_tilde.cols() != enc.in_dim())
        throw ValidationError("autoencode: input dim " + std::to_string(f_tilde.cols()) + " != " +
                              std::to_string(enc.in_dim()));
    return dec.forward(ad::relu(enc.forward(f_tilde)));
}

ad::Var EmbeddingModule::attention_gate(const ad::Var& f_tilde, const ad::Var& f_bar) const {
    if (f_tilde.rows() != f_bar.rows()) throw ValidationError("attention_gate: batch sizes differ");
    if (f_tilde.cols() != attn.in_dim() || f_bar.cols() != attn.out_dim())
        throw ValidationError("attention_gate: feature dims do not match the module");
    ad::Var gate = ad::sigmoid(attn.forward(f_tilde));
    return ad::mul(gate, f_bar);
}

FeatureTriple EmbeddingModule::forward(const ad::Var& f_tilde) const {
    FeatureTriple t;
    t.pre_embed = f_tilde;
    t.autoenc = autoencode(f_tilde);
    t.gated = attention_gate(f_tilde, t.autoenc);
    return t;
}

void EmbeddingModule::collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const {
    enc.collect(prefix + ".enc", out);
    dec.collect(prefix + ".dec", out);
    attn.collect(prefix + ".attn", out);
}

}  // namespace dapn
