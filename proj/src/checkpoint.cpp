#include "dapn/checkpoint.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <map>

namespace dapn {

namespace {

using nlohmann::json;

json config_to_json(const ModelConfig& cfg) {
    json j;
    j["format"] = 1;
    j["backbone"] = {{"arch", arch_name(cfg.backbone.arch)},
                     {"input_channels", cfg.backbone.input_channels},
                     {"input_size", cfg.backbone.input_size},
                     {"feature_dim", cfg.backbone.feature_dim},
                     {"embed_dim", cfg.backbone.embed_dim},
                     {"bottleneck_dim", cfg.backbone.bottleneck_dim},
                     {"conv_channels", cfg.backbone.conv_channels}};
    j["dist"] = proto::dist_name(cfg.dist);
    j["disc_hidden"] = cfg.disc_hidden;
    j["cond_dim"] = cfg.cond_dim;
    j["d_feat"] = cfg.d_feat;
    j["max_way"] = cfg.max_way;
    return j;
}

ModelConfig config_from_json(const json& j) {
    if (!j.contains("format") || j["format"].get<int>() != 1)
        throw IoError("checkpoint: unsupported format version");
    ModelConfig cfg;
    const json& b = j.at("backbone");
    cfg.backbone.arch = parse_arch(b.at("arch").get<std::string>());
    cfg.backbone.input_channels = b.at("input_channels").get<int>();
    cfg.backbone.input_size = b.at("input_size").get<int>();
    cfg.backbone.feature_dim = b.at("feature_dim").get<int>();
    cfg.backbone.embed_dim = b.at("embed_dim").get<int>();
    cfg.backbone.bottleneck_dim = b.at("bottleneck_dim").get<int>();
    auto ch = b.at("conv_channels").get<std::vector<int>>();
    if (ch.size() != 4) throw IoError("checkpoint: conv_channels must have 4 entries");
    std::copy(ch.begin(), ch.end(), cfg.backbone.conv_channels.begin());
    cfg.dist = proto::parse_dist(j.at("dist").get<std::string>());
    cfg.disc_hidden = j.at("disc_hidden").get<int>();
    cfg.cond_dim = j.at("cond_dim").get<int>();
    cfg.d_feat = j.at("d_feat").get<int>();
    cfg.max_way = j.at("max_way").get<int>();
    return cfg;
}

constexpr char kMagic[] = "DAPNCKPT1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_tensor(std::ostream& os, const std::string& name, const ad::Mat& m) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, static_cast<std::uint64_t>(m.rows()));
    write_u64(os, static_cast<std::uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

// name -> matrix, in file order
std::map<std::string, ad::Mat> read_tensors(std::istream& is) {
    std::map<std::string, ad::Mat> out;
    while (true) {
        std::uint32_t name_len = 0;
        is.read(reinterpret_cast<char*>(&name_len), 4);
        if (!is) break;
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rows = static_cast<Eigen::Index>(read_u64(is));
        const auto cols = static_cast<Eigen::Index>(read_u64(is));
        ad::Mat m(rows, cols);
        is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!is) throw IoError("checkpoint: truncated tensor data for " + name);
        out.emplace(std::move(name), std::move(m));
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, static_cast<std::streamsize>(kMagicLen));
    const std::string header = config_to_json(model.config()).dump();
    write_u64(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& p : model.trainable_params()) write_tensor(os, p.name, p.var.value());
    write_tensor(os, "maps_post.r_f", model.maps_post.r_f);
    write_tensor(os, "maps_post.r_g", model.maps_post.r_g);
    write_tensor(os, "maps_pre.r_f", model.maps_pre.r_f);
    write_tensor(os, "maps_pre.r_g", model.maps_pre.r_g);
    if (!os) throw IoError("checkpoint write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[kMagicLen];
    is.read(magic, static_cast<std::streamsize>(kMagicLen));
    if (!is || std::string(magic, kMagicLen) != kMagic)
        throw IoError("not a dapn checkpoint: " + path.string());
    const auto header_len = read_u64(is);
    std::string header(header_len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!is) throw IoError("checkpoint: truncated header");
    ModelConfig cfg = config_from_json(json::parse(header));

    Model model(cfg, 0);
    auto tensors = read_tensors(is);
    auto take = [&](const std::string& name) -> ad::Mat {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError("checkpoint: missing tensor " + name);
        return it->second;
    };
    for (auto& p : model.trainable_params()) {
        ad::Mat m = take(p.name);
        if (m.rows() != p.var.rows() || m.cols() != p.var.cols())
            throw IoError("checkpoint: shape mismatch for " + p.name);
        p.var.value_mut() = m;
    }
    model.maps_post.r_f = take("maps_post.r_f");
    model.maps_post.r_g = take("maps_post.r_g");
    model.maps_pre.r_f = take("maps_pre.r_f");
    model.maps_pre.r_g = take("maps_pre.r_g");
    return model;
}

}  // namespace dapn
