#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dapn/checkpoint.hpp"
#include "dapn/train.hpp"

using namespace dapn;
namespace fs = std::filesystem;

namespace {

struct ToyFixture {
    fs::path root;
    data::SplitSpec spec;
    data::ClassSplit split;

    ToyFixture() {
        root = fs::temp_directory_path() / "dapn_tests" / "train_toy";
        if (!fs::exists(root / "splits.txt")) {
            fs::create_directories(root);
            data::ToySpec t;
            t.classes_per_split = {4, 2, 2};
            t.samples_per_class = 10;
            t.image_size = 16;
            t.seed = 3;
            generate_toy_dataset(root, t);
        }
        spec = data::SplitSpec::parse_file(root / "splits.txt");
        split = data::make_splits(root, spec);
    }
};

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.eta0 = 0.01;
    cfg.total_steps = 50;
    cfg.n_sc = 3;
    cfg.n_meta = 2;
    cfg.k = 2;
    cfg.q_source = 3;
    cfg.q_target = 3;
    cfg.input_size = 16;
    cfg.feature_dim = 16;
    cfg.embed_dim = 16;
    cfg.bottleneck_dim = 8;
    cfg.conv_channels = 4;
    cfg.disc_hidden = 8;
    cfg.cond_dim = 16;
    cfg.d_feat = 16;
    cfg.lambda_mode = "constant";
    cfg.lambda_value = 0.1;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("lr schedule follows the polynomial decay") {
    TrainConfig cfg;
    CHECK(lr_schedule(0.0, cfg) == doctest::Approx(0.001));
    const double expect = 0.001 * std::pow(11.0, -0.75);  // ~1.66e-4
    CHECK(lr_schedule(1.0, cfg) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(1.66e-4).epsilon(0.01));
    cfg.beta = 0.0;
    CHECK(lr_schedule(0.7, cfg) == doctest::Approx(cfg.eta0));
    CHECK_THROWS_AS(lr_schedule(-0.1, cfg), ValidationError);
    CHECK_THROWS_AS(lr_schedule(1.1, cfg), ValidationError);

    TrainConfig base;
    double prev = lr_schedule(0.0, base);
    for (int i = 1; i <= 20; ++i) {
        const double cur = lr_schedule(i / 20.0, base);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("variant names parse both ways") {
    CHECK(parse_variant("FSL") == Variant::kFsl);
    CHECK(parse_variant("FSL+DC") == Variant::kFslDc);
    CHECK(parse_variant("FSL+DC+DS") == Variant::kFslDcDs);
    CHECK(parse_variant("Full") == Variant::kFull);
    CHECK_THROWS_AS(parse_variant("FSL+DS"), ConfigError);
    CHECK(std::string(variant_name(Variant::kFslDcDs)) == "FSL+DC+DS");
}

TEST_CASE("config invariants: n_sc must exceed n_meta") {
    TrainConfig cfg = tiny_config();
    cfg.n_sc = cfg.n_meta;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("metrics header is the documented one") {
    std::ostringstream os;
    write_metrics_header(os);
    CHECK(os.str() == "step,lps,lpd,ldc,lds,w1,w2,w3,w4,lr,lambda\n");
}

TEST_CASE("a short run decreases the source episode loss") {
    ToyFixture fx;
    Trainer trainer(tiny_config(), fx.split, Variant::kFull);
    std::vector<StepStats> hist;
    for (int i = 0; i < 50; ++i) hist.push_back(trainer.step());
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += hist[static_cast<size_t>(i)].lps;
        tail += hist[hist.size() - 1 - static_cast<size_t>(i)].lps;
    }
    CHECK(tail / 10.0 < head / 10.0);
    for (const auto& s : hist) {
        CHECK(std::isfinite(s.lps));
        CHECK(std::isfinite(s.ldc));
        CHECK(std::isfinite(s.lds));
    }
}

TEST_CASE("identical config and seed produce byte-identical metrics") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    cfg.total_steps = 12;
    std::ostringstream a, b;
    {
        Trainer t(cfg, fx.split, Variant::kFull);
        t.run(&a);
    }
    {
        Trainer t(cfg, fx.split, Variant::kFull);
        t.run(&b);
    }
    CHECK(a.str() == b.str());
    CHECK(a.str().substr(0, a.str().find('\n')) == kMetricsHeader);
}

TEST_CASE("disabled losses leave their modules untouched") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    SUBCASE("FSL variant never updates either discriminator or the weights") {
        Trainer t(cfg, fx.split, Variant::kFsl);
        const ad::Mat d_post = t.model().disc_post.l1.W.value();
        const ad::Mat d_pre = t.model().disc_pre.l1.W.value();
        const auto w_before = t.model().weights.values();
        for (int i = 0; i < 3; ++i) t.step();
        CHECK(t.model().disc_post.l1.W.value() == d_post);
        CHECK(t.model().disc_pre.l1.W.value() == d_pre);
        CHECK(t.model().weights.values() == w_before);
        CHECK_FALSE(t.model().disc_post.l1.W.has_grad());
    }
    SUBCASE("FSL+DC trains D but not D~") {
        Trainer t(cfg, fx.split, Variant::kFslDc);
        const ad::Mat d_post = t.model().disc_post.l1.W.value();
        const ad::Mat d_pre = t.model().disc_pre.l1.W.value();
        t.step();
        CHECK(t.model().disc_post.l1.W.value() != d_post);
        CHECK(t.model().disc_pre.l1.W.value() == d_pre);
    }
}

TEST_CASE("training streams are isolated from evaluation seeds") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    cfg.total_steps = 8;
    std::ostringstream a, b;
    Trainer ta(cfg, fx.split, Variant::kFull);
    ta.run(&a);
    EvalReport ra = evaluate(ta.model(), fx.split.target_test, 20, 2, 2, 3, /*seed=*/111);
    Trainer tb(cfg, fx.split, Variant::kFull);
    tb.run(&b);
    EvalReport rb = evaluate(tb.model(), fx.split.target_test, 20, 2, 2, 3, /*seed=*/222);
    CHECK(a.str() == b.str());                   // eval seed cannot leak into training
    CHECK(ra.per_episode != rb.per_episode);     // but different eval seeds change episodes
}

TEST_CASE("evaluation: chance level, ci95 bookkeeping, thread invariance") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    Model model(cfg.model_config(), 99);  // untrained

    // label-free noise classes: accuracy is exactly chance by symmetry
    data::ClassPool noise;
    noise.domain = data::Domain::kTarget;
    Rng nrng(4242);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 12; ++i) {
            Image img(3, 16, 16);
            for (auto& px : img.pixels) px = u(nrng);
            noise.by_class[c].push_back(data::Sample{img, c, data::Domain::kTarget});
        }
    EvalReport chance = evaluate(model, noise, 200, 2, 2, 3, 5);
    CHECK(std::abs(chance.top1 - 0.5) < 0.08);

    EvalReport r = evaluate(model, fx.split.target_test, 200, 2, 2, 3, 5);

    // ci95 recomputation from retained per-episode accuracies
    double mean = 0.0;
    for (double a : r.per_episode) mean += a;
    mean /= r.per_episode.size();
    double ss = 0.0;
    for (double a : r.per_episode) ss += (a - mean) * (a - mean);
    const double ci = 1.96 * std::sqrt(ss / (r.per_episode.size() - 1)) / std::sqrt(double(r.per_episode.size()));
    CHECK(r.ci95 == doctest::Approx(ci).epsilon(1e-12));
    CHECK(r.top1 == doctest::Approx(mean).epsilon(1e-12));

    EvalReport r1 = evaluate(model, fx.split.target_test, 40, 2, 2, 3, 5, 1);
    EvalReport r2 = evaluate(model, fx.split.target_test, 40, 2, 2, 3, 5, 2);
    CHECK(r1.per_episode == r2.per_episode);  // workers never change results

    EvalReport single = evaluate(model, fx.split.target_test, 1, 2, 2, 3, 5);
    CHECK(single.ci95 == 0.0);
}

TEST_CASE("oracle embedder scores a perfect mean") {
    ToyFixture fx;
    EmbedFn onehot = [&](const std::vector<const data::Sample*>& samples) {
        ad::Mat m = ad::Mat::Zero(static_cast<Eigen::Index>(samples.size()), 16);
        for (size_t i = 0; i < samples.size(); ++i)
            m(static_cast<Eigen::Index>(i), samples[i]->class_id % 16) = 1.0;
        return m;
    };
    EvalReport r = evaluate_with(onehot, fx.split.target_test, 50, 2, 2, 3, 12);
    CHECK(r.top1 == doctest::Approx(1.0));
}

TEST_CASE("eval report JSON carries the exact keys") {
    EvalReport r;
    r.top1 = 0.2;
    r.ci95 = 0.01;
    r.episodes = 2000;
    r.way = 5;
    r.shot = 5;
    const std::string s = eval_report_json(r);
    CHECK(s.find("\"top1\": 0.200000") != std::string::npos);
    CHECK(s.find("\"ci95\": 0.010000") != std::string::npos);
    CHECK(s.find("\"episodes\": 2000") != std::string::npos);
    CHECK(s.find("\"way\": 5") != std::string::npos);
    CHECK(s.find("\"shot\": 5") != std::string::npos);
}

TEST_CASE("checkpoint round trip preserves behaviour and config") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    cfg.total_steps = 6;
    Trainer t(cfg, fx.split, Variant::kFull);
    t.run(nullptr);
    const fs::path path = fx.root / "roundtrip.ckpt";
    save_checkpoint(path, t.model());
    Model loaded = load_checkpoint(path);
    CHECK(loaded.config().backbone.feature_dim == cfg.feature_dim);
    CHECK(loaded.config().max_way == std::max(cfg.n_sc, cfg.n_meta));

    std::vector<const data::Sample*> probe;
    for (const auto& [id, v] : fx.split.target_test.by_class) probe.push_back(&v.front());
    const ad::Mat batch = data::to_batch(probe);
    CHECK(t.model().embed(batch).gated.value() == loaded.embed(batch).gated.value());

    EvalReport a = evaluate(t.model(), fx.split.target_test, 10, 2, 2, 3, 5);
    EvalReport b = evaluate(loaded, fx.split.target_test, 10, 2, 2, 3, 5);
    CHECK(a.per_episode == b.per_episode);
}

TEST_CASE("single-variant ablation yields exactly one row per seed") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    cfg.total_steps = 5;
    EvalSettings eval;
    eval.episodes = 10;
    eval.way = 2;
    eval.shot = 2;
    eval.queries_per_class = 3;
    AblationResult r = run_ablation(cfg, {Variant::kFsl}, {1}, fx.split, eval, 1);
    CHECK(r.rows.size() == 1);
    CHECK(r.rows[0].variant == Variant::kFsl);
    CHECK(r.mean_top1(Variant::kFsl) == doctest::Approx(r.rows[0].report.top1));
    CHECK_THROWS_AS(r.mean_top1(Variant::kFull), ValidationError);

    std::ostringstream csv;
    write_ablation_csv(csv, r);
    CHECK(csv.str().rfind("variant,seed,top1,ci95\n", 0) == 0);

    SUBCASE("plot file gets written") {
        const fs::path png = fx.root / "ablation_test.png";
        write_ablation_plot(png, r);
        CHECK(fs::exists(png));
        CHECK(fs::file_size(png) > 0);
    }
}

TEST_CASE("parallel ablation jobs do not change results") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    cfg.total_steps = 4;
    EvalSettings eval;
    eval.episodes = 8;
    eval.way = 2;
    eval.shot = 2;
    eval.queries_per_class = 3;
    auto a = run_ablation(cfg, {Variant::kFsl, Variant::kFull}, {1, 2}, fx.split, eval, 1);
    auto b = run_ablation(cfg, {Variant::kFsl, Variant::kFull}, {1, 2}, fx.split, eval, 2);
    REQUIRE(a.rows.size() == b.rows.size());
    for (size_t i = 0; i < a.rows.size(); ++i)
        CHECK(a.rows[i].report.per_episode == b.rows[i].report.per_episode);
}

TEST_CASE("pretraining warm-up moves the backbone") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    cfg.total_steps = 1;
    cfg.pretrain_steps = 3;
    Trainer warm(cfg, fx.split, Variant::kFull);
    TrainConfig cold_cfg = cfg;
    cold_cfg.pretrain_steps = 0;
    Trainer cold(cold_cfg, fx.split, Variant::kFull);
    // identical seeds: params start equal, warm-up must change the backbone
    std::ostringstream devnull_a, devnull_b;
    warm.run(&devnull_a);
    cold.run(&devnull_b);
    std::vector<nn::NamedParam> pw, pc;
    warm.model().backbone->collect("b", pw);
    cold.model().backbone->collect("b", pc);
    bool any_diff = false;
    for (size_t i = 0; i < pw.size(); ++i)
        if (pw[i].var.value() != pc[i].var.value()) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("embedding export writes labelled TSV rows") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    Model model(cfg.model_config(), 5);
    std::ostringstream os;
    export_embeddings(model, fx.split, 6, 9, os);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("domain\tstage\tv0\t", 0) == 0);
    int n_src = 0, n_tgt = 0, n_pre = 0, n_post = 0;
    while (std::getline(in, line)) {
        if (line.rfind("source\t", 0) == 0) ++n_src;
        if (line.rfind("target\t", 0) == 0) ++n_tgt;
        if (line.find("\tf_tilde\t") != std::string::npos) ++n_pre;
        if (line.find("\tf\t") != std::string::npos) ++n_post;
    }
    CHECK(n_src == 12);  // 6 samples x 2 stages
    CHECK(n_tgt == 12);
    CHECK(n_pre == 12);
    CHECK(n_post == 12);
}

TEST_CASE("domain probe returns accuracies for both stages") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    Model model(cfg.model_config(), 21);
    std::vector<const data::Sample*> src, tgt;
    for (const auto& [id, v] : fx.split.source.by_class)
        for (const auto& s : v) src.push_back(&s);
    for (const auto& [id, v] : fx.split.target_test.by_class)
        for (const auto& s : v) tgt.push_back(&s);
    ProbeReport r = domain_probe(model, src, tgt, 1);
    CHECK(r.acc_pre >= 0.0);
    CHECK(r.acc_pre <= 1.0);
    CHECK(r.acc_post >= 0.0);
    CHECK(r.acc_post <= 1.0);
}

TEST_CASE("divergent training aborts with a numeric diagnostic") {
    ToyFixture fx;
    TrainConfig cfg = tiny_config();
    cfg.eta0 = 1e5;
    cfg.lambda_mode = "constant";
    cfg.lambda_value = 1.0;
    Trainer t(cfg, fx.split, Variant::kFull);
    CHECK_THROWS_AS(
        [&] {
            for (int i = 0; i < 30; ++i) t.step();
        }(),
        NumericError);
}

}  // TEST_SUITE
