#include "dapn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <thread>

#include "dapn/adversarial.hpp"
#include "dapn/checkpoint.hpp"
#include "dapn/proto.hpp"
#include "dapn/weighting.hpp"

namespace dapn {

void TrainConfig::validate() const {
    if (eta0 <= 0.0 || alpha < 0.0 || beta < 0.0) throw ValidationError("TrainConfig: rates must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("TrainConfig: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ValidationError("TrainConfig: weight_decay must be non-negative");
    if (total_steps <= 0) throw ValidationError("TrainConfig: total_steps must be positive");
    if (n_sc <= n_meta)
        throw ValidationError("TrainConfig: n_sc (" + std::to_string(n_sc) + ") must exceed n_meta (" +
                              std::to_string(n_meta) + ")");
    if (n_meta <= 0 || k <= 0 || q_source <= 0 || q_target <= 0)
        throw ValidationError("TrainConfig: episode sizes must be positive");
    if (lambda_mode != "ramp" && lambda_mode != "constant")
        throw ConfigError("TrainConfig: lambda_mode must be ramp or constant");
    if (lambda_value < 0.0) throw ValidationError("TrainConfig: lambda_value must be non-negative");
    if (ckpt_every <= 0) throw ValidationError("TrainConfig: ckpt_every must be positive");
    if (pretrain_steps < 0) throw ValidationError("TrainConfig: pretrain_steps must be non-negative");
    model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig mc;
    mc.backbone.arch = parse_arch(arch);
    mc.backbone.input_size = input_size;
    mc.backbone.feature_dim = feature_dim;
    mc.backbone.embed_dim = embed_dim;
    mc.backbone.bottleneck_dim = bottleneck_dim;
    mc.backbone.conv_channels = {conv_channels, conv_channels, conv_channels, conv_channels};
    mc.dist = proto::parse_dist(dist_mode);
    mc.disc_hidden = disc_hidden;
    mc.cond_dim = cond_dim;
    mc.d_feat = d_feat;
    mc.max_way = std::max(n_sc, n_meta);
    return mc;
}

double lr_schedule(double progress, const TrainConfig& cfg) {
    if (progress < 0.0 || progress > 1.0) throw ValidationError("lr_schedule: progress must be in [0,1]");
    return cfg.eta0 * std::pow(1.0 + cfg.alpha * progress, -cfg.beta);
}

Variant parse_variant(const std::string& name) {
    if (name == "FSL") return Variant::kFsl;
    if (name == "FSL+DC") return Variant::kFslDc;
    if (name == "FSL+DC+DS") return Variant::kFslDcDs;
    if (name == "Full") return Variant::kFull;
    throw ConfigError("unknown ablation variant: " + name);
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::kFsl: return "FSL";
        case Variant::kFslDc: return "FSL+DC";
        case Variant::kFslDcDs: return "FSL+DC+DS";
        case Variant::kFull: return "Full";
    }
    return "?";
}

std::array<double, 4> variant_coefficients(Variant v) {
    switch (v) {
        case Variant::kFsl: return {1.0, 1.0, 0.0, 0.0};
        case Variant::kFslDc: return {1.0, 1.0, 1.0, 0.0};
        case Variant::kFslDcDs:
        case Variant::kFull: return {1.0, 1.0, 1.0, 1.0};
    }
    return {1.0, 1.0, 0.0, 0.0};
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

void write_metrics_header(std::ostream& os) { os << kMetricsHeader << "\n"; }

void write_metrics_row(std::ostream& os, const StepStats& s) {
    os << s.step << ',' << fmt_double(s.lps) << ',' << fmt_double(s.lpd) << ',' << fmt_double(s.ldc) << ','
       << fmt_double(s.lds) << ',' << fmt_double(s.w[0]) << ',' << fmt_double(s.w[1]) << ','
       << fmt_double(s.w[2]) << ',' << fmt_double(s.w[3]) << ',' << fmt_double(s.lr) << ','
       << fmt_double(s.lambda) << "\n";
}

struct Trainer::EpisodeForward {
    FeatureTriple triple;   // all rows: support first, then query
    ad::Var proto_loss;     // on gated query embeddings
    ad::Mat g_post;         // detached class distribution at the f stage
    ad::Mat g_pre;          // detached class distribution at the f~ stage
};

Trainer::Trainer(const TrainConfig& cfg, const data::ClassSplit& split, Variant variant)
    : cfg_(cfg),
      variant_(variant),
      split_(split),
      rng_source_(derive_seed(cfg.seed, "source_episodes")),
      rng_target_(derive_seed(cfg.seed, "target_episodes")) {
    cfg_.validate();
    if (split_.source.by_class.empty() || split_.target_fewshot.by_class.empty())
        throw ValidationError("Trainer: source and target_fewshot pools must be non-empty");

    // few-shot regime: k originals per C_d class (seeded choice), then the
    // fixed flip+crop augmentation
    data::ClassPool fewshot;
    fewshot.domain = split_.target_fewshot.domain;
    Rng pick_rng(derive_seed(cfg_.seed, "fewshot_selection"));
    for (const auto& [id, samples] : split_.target_fewshot.by_class) {
        if (static_cast<int>(samples.size()) < cfg_.k)
            throw ValidationError("Trainer: class " + std::to_string(id) + " has fewer than k samples");
        std::vector<int> idx(samples.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < cfg_.k; ++i) {
            std::uniform_int_distribution<int> pick(i, static_cast<int>(idx.size()) - 1);
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(pick_rng))]);
        }
        auto& dst = fewshot.by_class[id];
        for (int i = 0; i < cfg_.k; ++i) dst.push_back(samples[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
    }
    fewshot_pool_ = data::augment_fewshot(fewshot, cfg_.k, derive_seed(cfg_.seed, "augment"));

    model_ = std::make_unique<Model>(cfg_.model_config(), cfg_.seed);

    std::vector<ad::Var> net, uncert;
    for (auto& p : model_->trainable_params()) {
        if (p.name.rfind("uncertainty", 0) == 0)
            uncert.push_back(p.var);
        else
            net.push_back(p.var);
    }
    // the loss-balancing parameters are excluded from weight decay
    opt_ = std::make_unique<nn::SgdMomentum>(
        std::vector<nn::SgdGroup>{{std::move(net), cfg_.weight_decay}, {std::move(uncert), 0.0}},
        cfg_.momentum);
}

Trainer::~Trainer() = default;

Trainer::EpisodeForward Trainer::forward_episode(const data::Episode& e) const {
    std::vector<const data::Sample*> all = e.support;
    all.insert(all.end(), e.query.begin(), e.query.end());
    const auto ns = static_cast<Eigen::Index>(e.support.size());
    const auto nq = static_cast<Eigen::Index>(e.query.size());

    EpisodeForward f;
    f.triple = model_->embed(data::to_batch(all));
    ad::Var f_support = ad::slice_rows(f.triple.gated, 0, ns);
    ad::Var f_query = ad::slice_rows(f.triple.gated, ns, nq);
    ad::Var protos = proto::compute_prototypes(f_support, e.support_slots, e.way);
    f.proto_loss = proto::proto_loss(f_query, e.query_slots, protos, model_->config().dist);

    const ad::Mat& gated = f.triple.gated.value();
    const ad::Mat& pre = f.triple.pre_embed.value();
    ad::Mat protos_post = proto::prototype_values(gated.topRows(ns), e.support_slots, e.way);
    ad::Mat protos_pre = proto::prototype_values(pre.topRows(ns), e.support_slots, e.way);
    f.g_post = proto::class_distribution(gated, protos_post, model_->config().dist);
    f.g_pre = proto::class_distribution(pre, protos_pre, model_->config().dist);
    return f;
}

ad::Var Trainer::combined(const LossBundle& bundle) const {
    if (variant_ == Variant::kFull) return combine_losses(bundle, model_->weights);
    return combine_losses_fixed(bundle, variant_coefficients(variant_));
}

StepStats Trainer::step() {
    const double p = static_cast<double>(step_) / static_cast<double>(cfg_.total_steps);
    const double lr = lr_schedule(p, cfg_);
    const double lambda = cfg_.lambda_mode == "ramp" ? adv::lambda_ramp(p) : cfg_.lambda_value;

    data::Episode e_s =
        data::sample_source_episode(split_.source, cfg_.n_sc, cfg_.k, cfg_.q_source, rng_source_);
    data::Episode e_d =
        data::sample_target_episode(fewshot_pool_, cfg_.n_meta, cfg_.k, cfg_.q_target, rng_target_);

    EpisodeForward fs = forward_episode(e_s);
    EpisodeForward fd = forward_episode(e_d);

    LossBundle bundle;
    bundle.lps = fs.proto_loss;
    bundle.lpd = fd.proto_loss;
    bundle.ldc = adv::domain_confusion_loss(fs.triple.gated, fs.g_post, fd.triple.gated, fd.g_post,
                                            model_->disc_post, model_->maps_post, lambda);
    bundle.lds = adv::domain_discriminative_loss(fs.triple.pre_embed, fs.g_pre, fd.triple.pre_embed,
                                                 fd.g_pre, model_->disc_pre, model_->maps_pre);

    ad::Var total;
    try {
        total = combined(bundle);
    } catch (const NumericError& err) {
        throw NumericError("training diverged at step " + std::to_string(step_) + ": " + err.what());
    }

    opt_->zero_grad();
    ad::backward(total);
    opt_->step(lr);

    StepStats s;
    s.step = step_;
    s.lps = ad::scalar(bundle.lps);
    s.lpd = ad::scalar(bundle.lpd);
    s.ldc = ad::scalar(bundle.ldc);
    s.lds = ad::scalar(bundle.lds);
    s.w = model_->weights.values();
    s.lr = lr;
    s.lambda = lambda;
    ++step_;
    return s;
}

void Trainer::warm_up() {
    // plain cross-entropy over the source classes through a throwaway linear
    // head; only the backbone keeps the effect
    const auto ids = split_.source.class_ids();
    Rng rng(derive_seed(cfg_.seed, "pretrain"));
    nn::Linear head =
        nn::Linear::glorot(cfg_.feature_dim, static_cast<int>(ids.size()), rng);
    std::vector<nn::NamedParam> named;
    model_->backbone->collect("backbone", named);
    std::vector<ad::Var> params;
    for (auto& p : named) params.push_back(p.var);
    params.push_back(head.W);
    params.push_back(head.b);
    nn::SgdMomentum opt({{params, cfg_.weight_decay}}, cfg_.momentum);

    const int batch = 32;
    for (int s = 0; s < cfg_.pretrain_steps; ++s) {
        std::vector<const data::Sample*> samples;
        std::vector<int> labels;
        for (int i = 0; i < batch; ++i) {
            std::uniform_int_distribution<size_t> ci(0, ids.size() - 1);
            const size_t c = ci(rng);
            const auto& pool = split_.source.by_class.at(ids[c]);
            std::uniform_int_distribution<size_t> si(0, pool.size() - 1);
            samples.push_back(&pool[si(rng)]);
            labels.push_back(static_cast<int>(c));
        }
        ad::Var logits = head.forward(model_->backbone->forward(ad::constant(data::to_batch(samples))));
        ad::Var loss = ad::neg(ad::mean_all(ad::pick_per_row(ad::log_softmax_rows(logits), labels)));
        opt.zero_grad();
        ad::backward(loss);
        opt.step(cfg_.eta0);
    }
}

void Trainer::run(std::ostream* metrics, const std::filesystem::path* ckpt_dir) {
    if (cfg_.pretrain_steps > 0) warm_up();
    if (metrics) write_metrics_header(*metrics);
    if (ckpt_dir) std::filesystem::create_directories(*ckpt_dir);
    for (int s = 0; s < cfg_.total_steps; ++s) {
        StepStats st = step();
        if (metrics) write_metrics_row(*metrics, st);
        if (ckpt_dir && (s + 1) % cfg_.ckpt_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "step_%06d.ckpt", s + 1);
            save_checkpoint(*ckpt_dir / name, *model_);
        }
    }
    if (ckpt_dir) save_checkpoint(*ckpt_dir / "final.ckpt", *model_);
}

EvalReport evaluate(const Model& model, const data::ClassPool& test_pool, int n_episodes, int way, int shot,
                    int queries_per_class, std::uint64_t seed, int threads) {
    EmbedFn embed = [&model](const std::vector<const data::Sample*>& samples) {
        return model.embed(data::to_batch(samples)).gated.value();
    };
    return evaluate_with(embed, test_pool, n_episodes, way, shot, queries_per_class, seed, threads,
                         model.config().dist);
}

EvalReport evaluate_with(const EmbedFn& embed, const data::ClassPool& test_pool, int n_episodes, int way,
                         int shot, int queries_per_class, std::uint64_t seed, int threads,
                         proto::DistMode dist) {
    if (n_episodes <= 0) throw ValidationError("evaluate: n_episodes must be positive");
    EvalReport r;
    r.episodes = n_episodes;
    r.way = way;
    r.shot = shot;
    r.queries_per_class = queries_per_class;
    r.per_episode.assign(static_cast<size_t>(n_episodes), 0.0);

    auto run_episode = [&](int e) {
        Rng rng(derive_seed(seed, "eval_episode", static_cast<std::uint64_t>(e)));
        data::Episode ep = data::sample_target_episode(test_pool, way, shot, queries_per_class, rng);
        std::vector<const data::Sample*> all = ep.support;
        all.insert(all.end(), ep.query.begin(), ep.query.end());
        const ad::Mat f = embed(all);
        const auto ns = static_cast<Eigen::Index>(ep.support.size());
        r.per_episode[static_cast<size_t>(e)] = proto::episode_accuracy(
            f.topRows(ns), ep.support_slots, ep.way, f.bottomRows(f.rows() - ns), ep.query_slots, dist);
    };

    threads = std::clamp(threads, 1, n_episodes);
    if (threads == 1) {
        for (int e = 0; e < n_episodes; ++e) run_episode(e);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
        pool.reserve(static_cast<size_t>(threads));
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                try {
                    for (int e = t; e < n_episodes; e += threads) run_episode(e);
                } catch (...) {
                    errors[static_cast<size_t>(t)] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
    }

    const double mean =
        std::accumulate(r.per_episode.begin(), r.per_episode.end(), 0.0) / static_cast<double>(n_episodes);
    r.top1 = mean;
    if (n_episodes > 1) {
        double ss = 0.0;
        for (double a : r.per_episode) ss += (a - mean) * (a - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n_episodes - 1));
        r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(n_episodes));
    }
    return r;
}

std::string eval_report_json(const EvalReport& r) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "{\"top1\": %.6f, \"ci95\": %.6f, \"episodes\": %d, \"way\": %d, \"shot\": %d}",
                  r.top1, r.ci95, r.episodes, r.way, r.shot);
    return buf;
}

double AblationResult::mean_top1(Variant v) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : rows)
        if (row.variant == v) {
            sum += row.report.top1;
            ++n;
        }
    if (n == 0) throw ValidationError("AblationResult: variant not present");
    return sum / n;
}

AblationResult run_ablation(const TrainConfig& base, const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds, const data::ClassSplit& split,
                            const EvalSettings& eval, int jobs, bool keep_models) {
    if (variants.empty() || seeds.empty()) throw ValidationError("run_ablation: variants and seeds required");
    AblationResult result;
    result.variants = variants;
    result.seeds = seeds;
    result.rows.resize(variants.size() * seeds.size());

    auto run_one = [&](size_t idx) {
        const Variant v = variants[idx / seeds.size()];
        const std::uint64_t s = seeds[idx % seeds.size()];
        TrainConfig cfg = base;
        cfg.seed = s;
        Trainer trainer(cfg, split, v);
        trainer.run(nullptr, nullptr);
        EvalReport rep = evaluate(trainer.model(), split.target_test, eval.episodes, eval.way, eval.shot,
                                  eval.queries_per_class, derive_seed(s, "ablation_eval"), 1);
        AblationRow row;
        row.variant = v;
        row.seed = s;
        row.report = std::move(rep);
        if (keep_models) row.model = trainer.release_model();
        result.rows[idx] = std::move(row);
    };

    const size_t n_tasks = result.rows.size();
    jobs = std::clamp(jobs, 1, static_cast<int>(n_tasks));
    if (jobs == 1) {
        for (size_t i = 0; i < n_tasks; ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
        for (int t = 0; t < jobs; ++t)
            pool.emplace_back([&, t] {
                try {
                    for (size_t i = static_cast<size_t>(t); i < n_tasks; i += static_cast<size_t>(jobs))
                        run_one(i);
                } catch (...) {
                    errors[static_cast<size_t>(t)] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
    }
    return result;
}

void write_ablation_csv(std::ostream& os, const AblationResult& result) {
    os << "variant,seed,top1,ci95\n";
    for (const auto& row : result.rows)
        os << variant_name(row.variant) << ',' << row.seed << ',' << fmt_double(row.report.top1) << ','
           << fmt_double(row.report.ci95) << "\n";
}

namespace {

ad::Mat embed_values(const Model& model, const std::vector<const data::Sample*>& samples, bool gated) {
    FeatureTriple t = model.embed(data::to_batch(samples));
    return gated ? t.gated.value() : t.pre_embed.value();
}

double logistic_probe_accuracy(const ad::Mat& x_src, const ad::Mat& x_tgt, std::uint64_t seed) {
    const Eigen::Index n = x_src.rows() + x_tgt.rows();
    ad::Mat x(n, x_src.cols());
    x << x_src, x_tgt;
    Eigen::VectorXd y(n);
    y.head(x_src.rows()).setOnes();
    y.tail(x_tgt.rows()).setZero();

    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "probe_shuffle"));
    for (size_t i = idx.size(); i > 1; --i) {
        std::uniform_int_distribution<size_t> pick(0, i - 1);
        std::swap(idx[i - 1], idx[pick(rng)]);
    }
    const Eigen::Index n_train = n / 2;
    ad::Mat xtr(n_train, x.cols()), xte(n - n_train, x.cols());
    Eigen::VectorXd ytr(n_train), yte(n - n_train);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (i < n_train) {
            xtr.row(i) = x.row(idx[static_cast<size_t>(i)]);
            ytr(i) = y(idx[static_cast<size_t>(i)]);
        } else {
            xte.row(i - n_train) = x.row(idx[static_cast<size_t>(i)]);
            yte(i - n_train) = y(idx[static_cast<size_t>(i)]);
        }
    }

    // standardise by the training statistics
    Eigen::RowVectorXd mu = xtr.colwise().mean();
    Eigen::RowVectorXd sd = ((xtr.rowwise() - mu).array().square().colwise().mean()).sqrt().matrix();
    sd = sd.unaryExpr([](double v) { return v < 1e-8 ? 1.0 : v; });
    xtr = (xtr.rowwise() - mu).array().rowwise() / sd.array();
    xte = (xte.rowwise() - mu).array().rowwise() / sd.array();

    Rng init(derive_seed(seed, "probe_init"));
    nn::Linear probe = nn::Linear::glorot(static_cast<int>(x.cols()), 1, init);
    nn::SgdMomentum opt({{{probe.W, probe.b}, 1e-4}}, 0.9);
    Eigen::VectorXd sign = (2.0 * ytr.array() - 1.0);  // +1 source, -1 target
    for (int s = 0; s < 300; ++s) {
        ad::Var z = probe.forward(ad::constant(xtr));
        // logistic loss mean(softplus(-sign * z))
        ad::Var loss = ad::mean_all(ad::softplus(ad::neg(ad::row_scale(z, sign))));
        opt.zero_grad();
        ad::backward(loss);
        opt.step(0.5);
    }
    ad::Mat z = probe.forward(ad::constant(xte)).value();
    int correct = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double pred = z(i, 0) > 0.0 ? 1.0 : 0.0;
        if (pred == yte(i)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(z.rows());
}

}  // namespace

ProbeReport domain_probe(const Model& model, const std::vector<const data::Sample*>& source_samples,
                         const std::vector<const data::Sample*>& target_samples, std::uint64_t seed) {
    if (source_samples.empty() || target_samples.empty())
        throw ValidationError("domain_probe: both domains need samples");
    ProbeReport r;
    r.acc_pre = logistic_probe_accuracy(embed_values(model, source_samples, false),
                                        embed_values(model, target_samples, false), seed);
    r.acc_post = logistic_probe_accuracy(embed_values(model, source_samples, true),
                                         embed_values(model, target_samples, true), seed);
    return r;
}

void export_embeddings(const Model& model, const data::ClassSplit& split, int per_domain, std::uint64_t seed,
                       std::ostream& os) {
    auto pick_samples = [&](std::initializer_list<const data::ClassPool*> pools, std::uint64_t tag) {
        std::vector<const data::Sample*> all;
        for (const auto* p : pools)
            for (const auto& [id, vec] : p->by_class)
                for (const auto& s : vec) all.push_back(&s);
        Rng rng(derive_seed(seed, "export", tag));
        for (size_t i = all.size(); i > 1; --i) {
            std::uniform_int_distribution<size_t> pickd(0, i - 1);
            std::swap(all[i - 1], all[pickd(rng)]);
        }
        if (static_cast<int>(all.size()) > per_domain) all.resize(static_cast<size_t>(per_domain));
        return all;
    };
    auto src = pick_samples({&split.source}, 0);
    auto tgt = pick_samples({&split.target_fewshot, &split.target_test}, 1);

    os << "domain\tstage";
    for (int j = 0; j < model.config().backbone.embed_dim; ++j) os << "\tv" << j;
    os << "\n";
    auto dump = [&](const std::vector<const data::Sample*>& samples, const char* domain) {
        FeatureTriple t = model.embed(data::to_batch(samples));
        auto write_rows = [&](const ad::Mat& m, const char* stage) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                os << domain << '\t' << stage;
                for (Eigen::Index j = 0; j < m.cols(); ++j) os << '\t' << fmt_double(m(i, j));
                os << "\n";
            }
        };
        write_rows(t.pre_embed.value(), "f_tilde");
        write_rows(t.gated.value(), "f");
    };
    dump(src, "source");
    dump(tgt, "target");
}

}  // namespace dapn
