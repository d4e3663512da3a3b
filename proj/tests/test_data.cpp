#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dapn/data.hpp"

using namespace dapn;
using namespace dapn::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "dapn_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

size_t count_pngs(const fs::path& dir) {
    size_t n = 0;
    if (!fs::exists(dir)) return 0;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.path().extension() == ".png") ++n;
    return n;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image test_image(int size, float base = 0.2f) {
    Image img(3, size, size);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                img.at(c, y, x) = base + 0.5f * static_cast<float>((x + y + c) % 3) / 3.0f;
    return img;
}

ClassPool synthetic_pool(Domain domain, int n_classes, int per_class, int first_id = 0, int size = 16) {
    ClassPool pool;
    pool.domain = domain;
    Rng rng(99);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int c = 0; c < n_classes; ++c) {
        auto& vec = pool.by_class[first_id + c];
        for (int i = 0; i < per_class; ++i) {
            Image img(3, size, size);
            for (auto& px : img.pixels) px = u(rng);
            vec.push_back(Sample{img, first_id + c, domain});
        }
    }
    return pool;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("png round trip preserves 8-bit pixels") {
    auto dir = fresh_dir("png_roundtrip");
    Image img = test_image(12);
    write_png(dir / "a.png", img);
    Image back = read_png(dir / "a.png");
    REQUIRE(back.height == 12);
    REQUIRE(back.width == 12);
    for (size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(0.005));
}

TEST_CASE("flip is an involution") {
    Image img = test_image(9);
    img.at(0, 2, 3) = 0.9f;  // break symmetry
    Image twice = hflip(hflip(img));
    CHECK(twice.pixels == img.pixels);
}

TEST_CASE("invert filter is an involution") {
    Image img = test_image(10);
    Image twice = synth_domain_shift(synth_domain_shift(img, ShiftFilter::kInvert), ShiftFilter::kInvert);
    for (size_t i = 0; i < img.pixels.size(); ++i) CHECK(twice.pixels[i] == doctest::Approx(img.pixels[i]));
}

TEST_CASE("desaturate equalises channels everywhere") {
    Image img(3, 8, 8);
    Rng rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& px : img.pixels) px = u(rng);
    Image out = synth_domain_shift(img, ShiftFilter::kDesaturate);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(out.at(0, y, x) == doctest::Approx(out.at(1, y, x)));
            CHECK(out.at(1, y, x) == doctest::Approx(out.at(2, y, x)));
        }
}

TEST_CASE("edge_sketch maps a constant image to the background value") {
    Image img(3, 8, 8, 0.37f);
    Image out = synth_domain_shift(img, ShiftFilter::kEdgeSketch);
    for (float v : out.pixels) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("filters keep values in [0,1] and shapes fixed") {
    Image img = test_image(11);
    for (auto f : {ShiftFilter::kInvert, ShiftFilter::kEdgeSketch, ShiftFilter::kDesaturate}) {
        Image out = synth_domain_shift(img, f);
        CHECK(out.height == img.height);
        CHECK(out.width == img.width);
        for (float v : out.pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("unknown filter name is a config error") {
    CHECK_THROWS_AS(parse_filter("pencil"), ConfigError);
    CHECK(parse_filter("edge_sketch") == ShiftFilter::kEdgeSketch);
}

TEST_CASE("toy generator writes the expected file counts") {
    auto dir = fresh_dir("toy_counts");
    ToySpec spec;
    spec.classes_per_split = {8, 4, 4};
    spec.samples_per_class = 6;
    spec.image_size = 16;
    spec.seed = 5;
    SplitSpec split = generate_toy_dataset(dir, spec);
    CHECK(split.source_classes.size() == 8);
    CHECK(split.target_fewshot_classes.size() == 4);
    CHECK(split.target_test_classes.size() == 4);
    // every class in every split renders samples_per_class source-style images;
    // target-domain copies exist for all 16 classes
    CHECK(count_pngs(dir / "source" / "source") == 8 * 6);
    size_t target_domain = count_pngs(dir / "source" / "target") +
                           count_pngs(dir / "target_fewshot" / "target") +
                           count_pngs(dir / "target_test" / "target");
    CHECK(target_domain == 16 * 6);
    CHECK(fs::exists(dir / "splits.txt"));
}

TEST_CASE("toy generator is byte-identical under a fixed seed") {
    auto dir_a = fresh_dir("toy_rep_a");
    auto dir_b = fresh_dir("toy_rep_b");
    ToySpec spec;
    spec.classes_per_split = {2, 1, 1};
    spec.samples_per_class = 3;
    spec.image_size = 16;
    spec.seed = 42;
    generate_toy_dataset(dir_a, spec);
    generate_toy_dataset(dir_b, spec);
    for (const auto& e : fs::recursive_directory_iterator(dir_a)) {
        if (!e.is_regular_file()) continue;
        fs::path rel = fs::relative(e.path(), dir_a);
        CHECK(slurp(e.path()) == slurp(dir_b / rel));
    }
}

TEST_CASE("toy generator rejects empty classes") {
    auto dir = fresh_dir("toy_bad");
    ToySpec spec;
    spec.samples_per_class = 0;
    CHECK_THROWS_AS(generate_toy_dataset(dir, spec), ValidationError);
}

TEST_CASE("make_splits loads pools matching the generated sizes") {
    auto dir = fresh_dir("toy_load");
    ToySpec spec;
    spec.classes_per_split = {3, 2, 2};
    spec.samples_per_class = 4;
    spec.image_size = 16;
    spec.seed = 1;
    SplitSpec split = generate_toy_dataset(dir, spec);
    ClassSplit cs = make_splits(dir, split);
    CHECK(cs.source.by_class.size() == 3);
    CHECK(cs.target_fewshot.by_class.size() == 2);
    CHECK(cs.target_test.by_class.size() == 2);
    CHECK(cs.source.total_samples() == 12);
    for (const auto& [id, v] : cs.source.by_class)
        for (const auto& s : v) CHECK(s.domain == Domain::kSource);
    for (const auto& [id, v] : cs.target_test.by_class)
        for (const auto& s : v) CHECK(s.domain == Domain::kTarget);

    SUBCASE("split spec round-trips through splits.txt") {
        SplitSpec parsed = SplitSpec::parse_file(dir / "splits.txt");
        CHECK(parsed.source_classes == split.source_classes);
        CHECK(parsed.target_fewshot_classes == split.target_fewshot_classes);
        CHECK(parsed.target_test_classes == split.target_test_classes);
    }

    SUBCASE("fewshot_k trims the few-shot pool only") {
        ClassSplit trimmed = make_splits(dir, split, 2);
        for (const auto& [id, v] : trimmed.target_fewshot.by_class) CHECK(v.size() == 2);
        CHECK(trimmed.target_test.total_samples() == 8);
    }
}

TEST_CASE("overlapping split sets are rejected naming the ids") {
    SplitSpec spec;
    spec.source_classes = {0, 1};
    spec.target_fewshot_classes = {0};
    spec.target_test_classes = {2};
    try {
        spec.validate();
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("0") != std::string::npos);
    }
}

TEST_CASE("missing dataset root and missing class directories") {
    SplitSpec spec;
    spec.source_classes = {0};
    CHECK_THROWS_WITH_AS(make_splits("/nonexistent/nowhere", spec), doctest::Contains("dataset not found"),
                         IoError);

    auto dir = fresh_dir("missing_class");
    fs::create_directories(dir / "source" / "source" / "1");
    spec.source_classes = {0};
    CHECK_THROWS_AS(make_splits(dir, spec), IoError);
}

TEST_CASE("augment_fewshot yields exactly 12k per class with labels kept") {
    ClassPool pool = synthetic_pool(Domain::kTarget, 3, 5, 10);
    ClassPool aug = augment_fewshot(pool, 5, 7);
    CHECK(aug.by_class.size() == 3);
    for (const auto& [id, v] : aug.by_class) {
        CHECK(v.size() == 60);  // 12k with k=5
        for (const auto& s : v) {
            CHECK(s.class_id == id);
            CHECK(s.domain == Domain::kTarget);
        }
    }

    SUBCASE("k=1 single class keeps the original's label") {
        ClassPool one = synthetic_pool(Domain::kTarget, 1, 1, 77);
        ClassPool a = augment_fewshot(one, 1, 3);
        REQUIRE(a.by_class.size() == 1);
        CHECK(a.by_class.at(77).size() == 12);
    }

    SUBCASE("k=0 is an error") { CHECK_THROWS_AS(augment_fewshot(pool, 0, 7), ValidationError); }

    SUBCASE("class count mismatch is an error") { CHECK_THROWS_AS(augment_fewshot(pool, 4, 7), ValidationError); }

    SUBCASE("augmentation is deterministic per seed") {
        ClassPool a = augment_fewshot(pool, 5, 7);
        ClassPool b = augment_fewshot(pool, 5, 7);
        CHECK(a.by_class.at(10)[6].image.pixels == b.by_class.at(10)[6].image.pixels);
    }
}

TEST_CASE("source episode counts and determinism") {
    ClassPool pool = synthetic_pool(Domain::kSource, 25, 25);
    SUBCASE("N_sc=20 k=5 q=15 would need 20 samples; use what fits") {
        Rng rng(1);
        Episode e = sample_source_episode(pool, 20, 5, 15, rng);
        CHECK(e.support.size() == 100);
        CHECK(e.query.size() == 300);
        CHECK(e.domain == Domain::kSource);
        validate_episode(e);
    }
    SUBCASE("minimal 1-way episode") {
        Rng rng(2);
        Episode e = sample_source_episode(pool, 1, 1, 1, rng);
        CHECK(e.support.size() == 1);
        CHECK(e.query.size() == 1);
        CHECK(e.support[0] != e.query[0]);
    }
    SUBCASE("same seed gives identical episodes") {
        Rng a(5), b(5);
        Episode ea = sample_source_episode(pool, 5, 2, 3, a);
        Episode eb = sample_source_episode(pool, 5, 2, 3, b);
        CHECK(ea.class_ids == eb.class_ids);
        CHECK(ea.support == eb.support);
        CHECK(ea.query == eb.query);
    }
    SUBCASE("insufficient samples name the class") {
        ClassPool tiny = synthetic_pool(Domain::kSource, 1, 3, 42);
        Rng rng(1);
        CHECK_THROWS_WITH_AS(sample_source_episode(tiny, 1, 2, 2, rng), doctest::Contains("42"), SamplingError);
    }
    SUBCASE("domain tag enforced") {
        ClassPool tgt = synthetic_pool(Domain::kTarget, 3, 4);
        Rng rng(1);
        CHECK_THROWS_AS(sample_source_episode(tgt, 1, 1, 1, rng), ValidationError);
    }
}

TEST_CASE("target episodes from the augmented few-shot pool") {
    ClassPool pool = synthetic_pool(Domain::kTarget, 6, 5, 100);
    ClassPool aug = augment_fewshot(pool, 5, 11);
    SUBCASE("N_dc=5 k=5 q=5") {
        Rng rng(3);
        Episode e = sample_target_episode(aug, 5, 5, 5, rng);
        CHECK(e.support.size() == 25);
        CHECK(e.query.size() == 25);
        CHECK(e.domain == Domain::kTarget);
        validate_episode(e);
    }
    SUBCASE("support and query stay disjoint across 100 seeds") {
        for (int s = 0; s < 100; ++s) {
            Rng rng(static_cast<std::uint64_t>(s));
            Episode e = sample_target_episode(aug, 4, 3, 5, rng);
            validate_episode(e);
        }
    }
    SUBCASE("k=1 pool of 12 allows q<=11") {
        ClassPool small = synthetic_pool(Domain::kTarget, 2, 1, 200);
        ClassPool a = augment_fewshot(small, 1, 1);
        Rng rng(4);
        Episode ok = sample_target_episode(a, 2, 1, 11, rng);
        validate_episode(ok);
        Rng rng2(4);
        CHECK_THROWS_AS(sample_target_episode(a, 2, 1, 12, rng2), SamplingError);
    }
}

TEST_CASE("every eligible class appears across 1000 episodes") {
    ClassPool pool = synthetic_pool(Domain::kSource, 8, 10);
    Rng rng(17);
    std::set<int> seen;
    for (int i = 0; i < 1000; ++i) {
        Episode e = sample_source_episode(pool, 3, 2, 2, rng);
        for (int id : e.class_ids) seen.insert(id);
    }
    CHECK(seen.size() == 8);
}

TEST_CASE("to_batch stacks rows in [0,1]") {
    ClassPool pool = synthetic_pool(Domain::kSource, 1, 3, 0, 8);
    std::vector<const Sample*> ptrs;
    for (const auto& s : pool.by_class.at(0)) ptrs.push_back(&s);
    Eigen::MatrixXd b = to_batch(ptrs);
    CHECK(b.rows() == 3);
    CHECK(b.cols() == 3 * 8 * 8);
    CHECK(b.minCoeff() >= 0.0);
    CHECK(b.maxCoeff() <= 1.0);
}

}  // TEST_SUITE
