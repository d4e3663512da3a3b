#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dapn/image.hpp"
#include "dapn/rng.hpp"

namespace dapn::data {

enum class Domain { kSource, kTarget };

inline const char* domain_name(Domain d) { return d == Domain::kSource ? "source" : "target"; }

struct Sample {
    Image image;
    int class_id = -1;
    Domain domain = Domain::kSource;
};

/// Per-class sample pool over one domain. Immutable after construction;
/// samplers only read it, so concurrent episode sampling is safe as long as
/// each caller owns its random stream.
struct ClassPool {
    std::map<int, std::vector<Sample>> by_class;
    Domain domain = Domain::kSource;

    std::vector<int> class_ids() const;
    size_t total_samples() const;
};

/// The three pairwise-disjoint class sets with their sample pools.
struct ClassSplit {
    ClassPool source;          // C_s, source domain
    ClassPool target_fewshot;  // C_d, target domain
    ClassPool target_test;     // C_t, target domain
};

struct SplitSpec {
    std::vector<int> source_classes;
    std::vector<int> target_fewshot_classes;
    std::vector<int> target_test_classes;

    static SplitSpec parse_file(const std::filesystem::path& path);
    /// Throws ValidationError naming the colliding ids if the sets overlap.
    void validate() const;
};

/// One sampled few-shot task. Support rows are grouped by class slot:
/// slot s occupies indices [s*shot, (s+1)*shot). Pointers reference the pool
/// the episode was sampled from.
struct Episode {
    std::vector<const Sample*> support;
    std::vector<const Sample*> query;
    std::vector<int> support_slots;  // class slot per support row
    std::vector<int> query_slots;    // class slot per query row
    std::vector<int> class_ids;      // slot -> class id
    int way = 0;
    int shot = 0;
    int queries_per_class = 0;
    Domain domain = Domain::kSource;
};

/// Throws ValidationError if any Episode invariant is violated.
void validate_episode(const Episode& e);

/// Loads the split pools from the on-disk layout
/// `<root>/<split>/<domain>/<class_id>/<sample_id>.png`.
/// When fewshot_k > 0, the target_fewshot pool is trimmed to its first
/// fewshot_k samples per class (filename order), forming the few-shot regime.
ClassSplit make_splits(const std::filesystem::path& root, const SplitSpec& spec, int fewshot_k = 0);

/// Flip+crop augmentation of a few-shot pool: each original contributes
/// {original, 5 crops} x {as-is, mirrored} = 12 variants, preserving class and
/// domain labels. Crops are taken from a reflect-padded (pad 8) copy at the
/// four corners plus a jittered centre; the jitter stream is derived from
/// `seed`, so the augmented pool is fixed for a given seed.
ClassPool augment_fewshot(const ClassPool& pool, int k, std::uint64_t seed);

Episode sample_source_episode(const ClassPool& pool, int n_way, int shot, int queries_per_class, Rng& rng);
Episode sample_target_episode(const ClassPool& pool, int n_way, int shot, int queries_per_class, Rng& rng);

enum class ShiftFilter { kInvert, kEdgeSketch, kDesaturate };

ShiftFilter parse_filter(const std::string& name);
const char* filter_name(ShiftFilter f);

/// Deterministic synthetic domain shift; output has the same shape and stays
/// in [0,1].
Image synth_domain_shift(const Image& img, ShiftFilter filter);

struct ToySpec {
    std::array<int, 3> classes_per_split{8, 4, 4};  // |C_s|, |C_d|, |C_t|
    int samples_per_class = 60;
    int image_size = 32;
    std::uint64_t seed = 0;
    ShiftFilter filter = ShiftFilter::kInvert;
};

/// Procedurally generates a two-domain dataset under `root` (plus a
/// `splits.txt` split spec). Source classes additionally get pixel-paired
/// target-domain copies under source/target/ for domain-probe diagnostics.
/// Returns the split spec describing the generated classes.
SplitSpec generate_toy_dataset(const std::filesystem::path& root, const ToySpec& spec);

/// Stacks samples into a batch matrix [n, c*h*w] of doubles in [0,1].
Eigen::MatrixXd to_batch(const std::vector<const Sample*>& samples);

}  // namespace dapn::data
