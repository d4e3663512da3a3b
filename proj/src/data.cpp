#include "dapn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace dapn::data {

namespace fs = std::filesystem;

std::vector<int> ClassPool::class_ids() const {
    std::vector<int> ids;
    ids.reserve(by_class.size());
    for (const auto& [id, _] : by_class) ids.push_back(id);
    return ids;
}

size_t ClassPool::total_samples() const {
    size_t n = 0;
    for (const auto& [_, v] : by_class) n += v.size();
    return n;
}

SplitSpec SplitSpec::parse_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open split spec: " + path.string());
    SplitSpec spec;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto colon = line.find(':');
        if (colon == std::string::npos) throw ConfigError("split spec line missing ':': " + line);
        std::string key = line.substr(0, colon);
        key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
        std::vector<int>* dst = nullptr;
        if (key == "source")
            dst = &spec.source_classes;
        else if (key == "target_fewshot")
            dst = &spec.target_fewshot_classes;
        else if (key == "target_test")
            dst = &spec.target_test_classes;
        else
            throw ConfigError("unknown split name in spec: " + key);
        std::istringstream rest(line.substr(colon + 1));
        int id;
        while (rest >> id) dst->push_back(id);
    }
    return spec;
}

namespace {

std::string join_ids(const std::vector<int>& ids) {
    std::string s;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(ids[i]);
    }
    return s;
}

std::vector<int> intersect(const std::vector<int>& a, const std::vector<int>& b) {
    std::set<int> sa(a.begin(), a.end());
    std::vector<int> out;
    for (int x : b)
        if (sa.count(x)) out.push_back(x);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

void SplitSpec::validate() const {
    struct Pair {
        const char* a;
        const char* b;
        std::vector<int> common;
    };
    std::vector<Pair> collisions;
    if (auto c = intersect(source_classes, target_fewshot_classes); !c.empty())
        collisions.push_back({"source", "target_fewshot", c});
    if (auto c = intersect(source_classes, target_test_classes); !c.empty())
        collisions.push_back({"source", "target_test", c});
    if (auto c = intersect(target_fewshot_classes, target_test_classes); !c.empty())
        collisions.push_back({"target_fewshot", "target_test", c});
    if (!collisions.empty()) {
        std::string msg = "class splits must be pairwise disjoint:";
        for (const auto& p : collisions)
            msg += std::string(" ") + p.a + "/" + p.b + " share {" + join_ids(p.common) + "}";
        throw ValidationError(msg);
    }
}

namespace {

ClassPool load_pool(const fs::path& base, const std::vector<int>& ids, Domain domain) {
    ClassPool pool;
    pool.domain = domain;
    for (int id : ids) {
        fs::path dir = base / std::to_string(id);
        if (!fs::is_directory(dir)) throw IoError("missing class directory: " + dir.string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.path().extension() == ".png") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw IoError("no samples for class " + std::to_string(id) + " in " + dir.string());
        auto& vec = pool.by_class[id];
        vec.reserve(files.size());
        for (const auto& f : files) vec.push_back(Sample{read_png(f), id, domain});
    }
    return pool;
}

}  // namespace

ClassSplit make_splits(const fs::path& root, const SplitSpec& spec, int fewshot_k) {
    if (!fs::is_directory(root)) throw IoError("dataset not found: " + root.string());
    spec.validate();
    ClassSplit split;
    split.source = load_pool(root / "source" / "source", spec.source_classes, Domain::kSource);
    split.target_fewshot =
        load_pool(root / "target_fewshot" / "target", spec.target_fewshot_classes, Domain::kTarget);
    split.target_test = load_pool(root / "target_test" / "target", spec.target_test_classes, Domain::kTarget);
    if (fewshot_k > 0) {
        for (auto& [id, vec] : split.target_fewshot.by_class) {
            if (static_cast<int>(vec.size()) < fewshot_k)
                throw ValidationError("class " + std::to_string(id) + " has only " +
                                      std::to_string(vec.size()) + " samples, few-shot regime needs " +
                                      std::to_string(fewshot_k));
            vec.resize(static_cast<size_t>(fewshot_k));
        }
    }
    return split;
}

ClassPool augment_fewshot(const ClassPool& pool, int k, std::uint64_t seed) {
    if (k <= 0) throw ValidationError("augment_fewshot: k must be positive, pool would be empty");
    ClassPool out;
    out.domain = pool.domain;
    const int pad = 8;
    for (const auto& [id, originals] : pool.by_class) {
        if (static_cast<int>(originals.size()) != k)
            throw ValidationError("augment_fewshot: class " + std::to_string(id) + " has " +
                                  std::to_string(originals.size()) + " originals, expected k=" +
                                  std::to_string(k));
        auto& dst = out.by_class[id];
        dst.reserve(originals.size() * 12);
        for (size_t i = 0; i < originals.size(); ++i) {
            const Sample& s = originals[i];
            Rng jitter(derive_seed(seed, "augment", static_cast<std::uint64_t>(id) * 1000003ULL + i));
            std::uniform_int_distribution<int> off(-pad / 2, pad / 2);
            const int jy = off(jitter), jx = off(jitter);
            Image padded = pad_reflect(s.image, pad);
            const int h = s.image.height, w = s.image.width;
            std::vector<Image> variants;
            variants.push_back(s.image);
            variants.push_back(crop(padded, 0, 0, h, w));
            variants.push_back(crop(padded, 0, 2 * pad, h, w));
            variants.push_back(crop(padded, 2 * pad, 0, h, w));
            variants.push_back(crop(padded, 2 * pad, 2 * pad, h, w));
            variants.push_back(crop(padded, pad + jy, pad + jx, h, w));
            for (const Image& v : variants) {
                dst.push_back(Sample{v, id, pool.domain});
                dst.push_back(Sample{hflip(v), id, pool.domain});
            }
        }
    }
    return out;
}

namespace {

Episode sample_episode(const ClassPool& pool, int n_way, int shot, int q, Rng& rng) {
    if (n_way <= 0 || shot <= 0 || q <= 0)
        throw ValidationError("episode sampling: way, shot and queries_per_class must be positive");
    std::vector<int> ids = pool.class_ids();
    if (static_cast<int>(ids.size()) < n_way)
        throw SamplingError("pool has " + std::to_string(ids.size()) + " classes, episode needs " +
                            std::to_string(n_way));
    // partial Fisher-Yates: choose n_way distinct classes
    for (int i = 0; i < n_way; ++i) {
        std::uniform_int_distribution<int> pick(i, static_cast<int>(ids.size()) - 1);
        std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(pick(rng))]);
    }
    ids.resize(static_cast<size_t>(n_way));
    std::sort(ids.begin(), ids.end());  // slot order == class-id order

    Episode e;
    e.way = n_way;
    e.shot = shot;
    e.queries_per_class = q;
    e.domain = pool.domain;
    e.class_ids = ids;
    for (int slot = 0; slot < n_way; ++slot) {
        const int cid = ids[static_cast<size_t>(slot)];
        const auto& samples = pool.by_class.at(cid);
        const int need = shot + q;
        if (static_cast<int>(samples.size()) < need)
            throw SamplingError("class " + std::to_string(cid) + " has only " +
                                std::to_string(samples.size()) + " samples, episode needs " +
                                std::to_string(need));
        std::vector<int> idx(samples.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < need; ++i) {
            std::uniform_int_distribution<int> pick(i, static_cast<int>(idx.size()) - 1);
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
        }
        for (int i = 0; i < shot; ++i) {
            e.support.push_back(&samples[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
            e.support_slots.push_back(slot);
        }
        for (int i = shot; i < need; ++i) {
            e.query.push_back(&samples[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
            e.query_slots.push_back(slot);
        }
    }
    return e;
}

}  // namespace

Episode sample_source_episode(const ClassPool& pool, int n_way, int shot, int q, Rng& rng) {
    if (pool.domain != Domain::kSource)
        throw ValidationError("sample_source_episode: pool does not carry the source domain");
    return sample_episode(pool, n_way, shot, q, rng);
}

Episode sample_target_episode(const ClassPool& pool, int n_way, int shot, int q, Rng& rng) {
    if (pool.domain != Domain::kTarget)
        throw ValidationError("sample_target_episode: pool does not carry the target domain");
    return sample_episode(pool, n_way, shot, q, rng);
}

void validate_episode(const Episode& e) {
    if (e.way <= 0 || e.shot <= 0 || e.queries_per_class <= 0)
        throw ValidationError("episode: non-positive way/shot/queries_per_class");
    if (static_cast<int>(e.class_ids.size()) != e.way) throw ValidationError("episode: class_ids size != way");
    if (static_cast<int>(e.support.size()) != e.way * e.shot)
        throw ValidationError("episode: support size != way*shot");
    if (static_cast<int>(e.query.size()) != e.way * e.queries_per_class)
        throw ValidationError("episode: query size != way*queries_per_class");
    std::vector<int> per_slot(static_cast<size_t>(e.way), 0);
    for (size_t i = 0; i < e.support.size(); ++i) {
        const int slot = e.support_slots[i];
        if (slot < 0 || slot >= e.way) throw ValidationError("episode: support slot out of range");
        per_slot[static_cast<size_t>(slot)]++;
        if (e.support[i]->class_id != e.class_ids[static_cast<size_t>(slot)])
            throw ValidationError("episode: support sample class does not match its slot");
        if (e.support[i]->domain != e.domain) throw ValidationError("episode: mixed domains in support");
    }
    for (int c : per_slot)
        if (c != e.shot) throw ValidationError("episode: per-class support count != shot");
    std::set<const Sample*> support_set(e.support.begin(), e.support.end());
    for (size_t i = 0; i < e.query.size(); ++i) {
        const int slot = e.query_slots[i];
        if (slot < 0 || slot >= e.way) throw ValidationError("episode: query slot out of range");
        if (e.query[i]->class_id != e.class_ids[static_cast<size_t>(slot)])
            throw ValidationError("episode: query sample class does not match its slot");
        if (e.query[i]->domain != e.domain) throw ValidationError("episode: mixed domains in query");
        if (support_set.count(e.query[i])) throw ValidationError("episode: query overlaps support");
    }
}

ShiftFilter parse_filter(const std::string& name) {
    if (name == "invert") return ShiftFilter::kInvert;
    if (name == "edge_sketch") return ShiftFilter::kEdgeSketch;
    if (name == "desaturate") return ShiftFilter::kDesaturate;
    throw ConfigError("unknown domain-shift filter: " + name);
}

const char* filter_name(ShiftFilter f) {
    switch (f) {
        case ShiftFilter::kInvert: return "invert";
        case ShiftFilter::kEdgeSketch: return "edge_sketch";
        case ShiftFilter::kDesaturate: return "desaturate";
    }
    return "?";
}

namespace {

float luma(const Image& img, int y, int x) {
    return 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
}

}  // namespace

Image synth_domain_shift(const Image& img, ShiftFilter filter) {
    Image out(img.channels, img.height, img.width);
    switch (filter) {
        case ShiftFilter::kInvert:
            for (size_t i = 0; i < img.pixels.size(); ++i) out.pixels[i] = 1.0f - img.pixels[i];
            break;
        case ShiftFilter::kDesaturate:
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x) {
                    const float g = luma(img, y, x);
                    for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = g;
                }
            break;
        case ShiftFilter::kEdgeSketch: {
            // Sobel magnitude on luminance, drawn dark on a white background.
            auto lum = [&](int y, int x) {
                y = std::clamp(y, 0, img.height - 1);
                x = std::clamp(x, 0, img.width - 1);
                return luma(img, y, x);
            };
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x) {
                    const float gx = (lum(y - 1, x + 1) + 2.0f * lum(y, x + 1) + lum(y + 1, x + 1)) -
                                     (lum(y - 1, x - 1) + 2.0f * lum(y, x - 1) + lum(y + 1, x - 1));
                    const float gy = (lum(y + 1, x - 1) + 2.0f * lum(y + 1, x) + lum(y + 1, x + 1)) -
                                     (lum(y - 1, x - 1) + 2.0f * lum(y - 1, x) + lum(y - 1, x + 1));
                    const float mag = std::min(1.0f, std::sqrt(gx * gx + gy * gy) / 4.0f);
                    for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = 1.0f - mag;
                }
            break;
        }
    }
    for (float& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

namespace {

// Procedural class patterns: five base families cycled by class id, with
// per-class parameters hashed from the id and per-sample jitter from `rng`.
Image render_toy_class(int class_id, int size, Rng& rng) {
    const std::uint64_t h = splitmix64(0xC1A55ULL + static_cast<std::uint64_t>(class_id) * 7919ULL);
    const int type = class_id % 5;
    const int variant = class_id / 5;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Image img(3, size, size);
    std::vector<float> v(static_cast<size_t>(size) * size, 0.0f);
    auto vat = [&](int y, int x) -> float& { return v[static_cast<size_t>(y) * size + x]; };

    switch (type) {
        case 0: {  // oriented stripes
            const double theta = 3.14159265 * (static_cast<double>(h & 0xFF) / 256.0) + (unit(rng) - 0.5) * 0.12;
            const double freq = 2.0 + static_cast<double>((h >> 8) & 0x3) + variant % 3 + (unit(rng) - 0.5) * 0.3;
            const double phase = unit(rng) * 6.2831853;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double t = (std::cos(theta) * x + std::sin(theta) * y) / size;
                    vat(y, x) = static_cast<float>(0.5 + 0.5 * std::sin(6.2831853 * freq * t + phase));
                }
            break;
        }
        case 1: {  // checkerboard
            const int cell = std::max(2, size / (3 + static_cast<int>(h & 0x3)));
            std::uniform_int_distribution<int> off(0, 2 * cell - 1);
            const int dy = off(rng), dx = off(rng);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    vat(y, x) = static_cast<float>((((y + dy) / cell) + ((x + dx) / cell)) % 2);
            break;
        }
        case 2: {  // concentric rings
            const double freq = 2.0 + static_cast<double>(h & 0x3) + variant % 2;
            const double phase = unit(rng) * 6.2831853;
            const double cy = size / 2.0 + (unit(rng) - 0.5) * size / 3.0;
            const double cx = size / 2.0 + (unit(rng) - 0.5) * size / 3.0;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double r = std::hypot(y - cy, x - cx) / size;
                    vat(y, x) = static_cast<float>(0.5 + 0.5 * std::cos(6.2831853 * freq * r + phase));
                }
            break;
        }
        case 3: {  // dot lattice
            const int spacing = std::max(3, size / (3 + static_cast<int>(h & 0x3)));
            const double radius = spacing * (0.22 + 0.10 * static_cast<double>((h >> 2) & 0x1));
            std::uniform_int_distribution<int> off(0, spacing - 1);
            const int dy = off(rng), dx = off(rng);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const int ly = (y + dy) % spacing, lx = (x + dx) % spacing;
                    const double d = std::hypot(ly - spacing / 2.0, lx - spacing / 2.0);
                    vat(y, x) = d <= radius ? 1.0f : 0.0f;
                }
            break;
        }
        default: {  // crossing bars
            const int t = std::max(1, size / (7 + static_cast<int>(h & 0x3)));
            std::uniform_int_distribution<int> pos(t, size - 1 - t);
            const int py = pos(rng), px = pos(rng);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    vat(y, x) = (std::abs(y - py) <= t || std::abs(x - px) <= t) ? 1.0f : 0.0f;
            break;
        }
    }

    // per-sample tint keeps colour uninformative about the class
    float fg[3], bg[3];
    for (int c = 0; c < 3; ++c) {
        fg[c] = static_cast<float>(0.75 + (unit(rng) - 0.5) * 0.4);
        bg[c] = static_cast<float>(0.25 + (unit(rng) - 0.5) * 0.4);
    }
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const float t = vat(y, x);
            for (int c = 0; c < 3; ++c) {
                float val = bg[c] + t * (fg[c] - bg[c]) + static_cast<float>(noise(rng));
                img.at(c, y, x) = std::clamp(val, 0.0f, 1.0f);
            }
        }
    return img;
}

// Renders `count` samples of one class; writes the plain render under
// source_dir (if given) and its filtered counterpart under target_dir (if
// given). Per-image rng depends only on (seed, class, index).
void write_class_images(int class_id, int count, int size, std::uint64_t seed, ShiftFilter filter,
                        const fs::path* source_dir, const fs::path* target_dir) {
    std::error_code ec;
    for (const fs::path* dir : {source_dir, target_dir}) {
        if (!dir) continue;
        fs::create_directories(*dir, ec);
        if (ec) throw IoError("cannot create directory: " + dir->string());
    }
    char name[16];
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, "toy_image", static_cast<std::uint64_t>(class_id) * 1000003ULL +
                                                   static_cast<std::uint64_t>(i)));
        Image img = render_toy_class(class_id, size, rng);
        std::snprintf(name, sizeof(name), "%03d.png", i);
        if (source_dir) write_png(*source_dir / name, img);
        if (target_dir) write_png(*target_dir / name, synth_domain_shift(img, filter));
    }
}

}  // namespace

SplitSpec generate_toy_dataset(const fs::path& root, const ToySpec& spec) {
    if (spec.samples_per_class <= 0) throw ValidationError("generate_toy_dataset: samples_per_class must be positive");
    for (int n : spec.classes_per_split)
        if (n <= 0) throw ValidationError("generate_toy_dataset: class counts must be positive");
    if (spec.image_size < 8) throw ValidationError("generate_toy_dataset: image_size must be at least 8");

    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create dataset root: " + root.string());

    SplitSpec out;
    int next_id = 0;
    for (int i = 0; i < spec.classes_per_split[0]; ++i) out.source_classes.push_back(next_id++);
    for (int i = 0; i < spec.classes_per_split[1]; ++i) out.target_fewshot_classes.push_back(next_id++);
    for (int i = 0; i < spec.classes_per_split[2]; ++i) out.target_test_classes.push_back(next_id++);

    for (int id : out.source_classes) {
        const fs::path src_dir = root / "source" / "source" / std::to_string(id);
        const fs::path tgt_dir = root / "source" / "target" / std::to_string(id);
        write_class_images(id, spec.samples_per_class, spec.image_size, spec.seed, spec.filter, &src_dir,
                           &tgt_dir);
    }
    for (int id : out.target_fewshot_classes) {
        const fs::path dir = root / "target_fewshot" / "target" / std::to_string(id);
        write_class_images(id, spec.samples_per_class, spec.image_size, spec.seed, spec.filter, nullptr, &dir);
    }
    for (int id : out.target_test_classes) {
        const fs::path dir = root / "target_test" / "target" / std::to_string(id);
        write_class_images(id, spec.samples_per_class, spec.image_size, spec.seed, spec.filter, nullptr, &dir);
    }

    std::ofstream sf(root / "splits.txt");
    if (!sf) throw IoError("cannot write splits.txt under " + root.string());
    auto line = [&](const char* key, const std::vector<int>& ids) {
        sf << key << ":";
        for (int id : ids) sf << " " << id;
        sf << "\n";
    };
    line("source", out.source_classes);
    line("target_fewshot", out.target_fewshot_classes);
    line("target_test", out.target_test_classes);
    return out;
}

Eigen::MatrixXd to_batch(const std::vector<const Sample*>& samples) {
    if (samples.empty()) return Eigen::MatrixXd(0, 0);
    const size_t dim = samples.front()->image.size();
    Eigen::MatrixXd batch(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(dim));
    for (size_t i = 0; i < samples.size(); ++i) {
        const Image& img = samples[i]->image;
        if (img.size() != dim) throw ValidationError("to_batch: inconsistent image sizes in batch");
        for (size_t j = 0; j < dim; ++j) batch(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            static_cast<double>(img.pixels[j]);
    }
    return batch;
}

}  // namespace dapn::data
