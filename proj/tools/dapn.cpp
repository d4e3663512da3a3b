// dapn command-line interface: toy dataset generation, training, evaluation,
// ablations, and embedding export.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "dapn/checkpoint.hpp"
#include "dapn/data.hpp"
#include "dapn/train.hpp"

namespace {

using namespace dapn;

struct DataArgs {
    std::string root;
    std::string splits;  // defaults to <root>/splits.txt
};

void add_data_options(CLI::App* cmd, DataArgs& args) {
    cmd->add_option("--data", args.root, "dataset root directory")->required();
    cmd->add_option("--splits", args.splits, "split spec file (default: <data>/splits.txt)");
}

data::ClassSplit load_split(const DataArgs& args, int fewshot_k = 0) {
    const std::string spec_path = args.splits.empty() ? args.root + "/splits.txt" : args.splits;
    data::SplitSpec spec = data::SplitSpec::parse_file(spec_path);
    return data::make_splits(args.root, spec, fewshot_k);
}

void add_train_options(CLI::App* cmd, TrainConfig& cfg) {
    cmd->set_config("--config", "", "key = value file; command-line flags override file keys");
    cmd->add_option("--eta0", cfg.eta0, "initial learning rate");
    cmd->add_option("--alpha", cfg.alpha, "lr schedule alpha");
    cmd->add_option("--beta", cfg.beta, "lr schedule beta");
    cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
    cmd->add_option("--weight_decay", cfg.weight_decay, "L2 weight decay");
    cmd->add_option("--total_steps", cfg.total_steps, "training steps");
    cmd->add_option("--n_sc", cfg.n_sc, "source episode way");
    cmd->add_option("--n_meta", cfg.n_meta, "target episode way / test way");
    cmd->add_option("--k", cfg.k, "shot");
    cmd->add_option("--q_source", cfg.q_source, "queries per class, source episodes");
    cmd->add_option("--q_target", cfg.q_target, "queries per class, target episodes");
    cmd->add_option("--arch", cfg.arch, "small_conv4 | resnet18_like");
    cmd->add_option("--input_size", cfg.input_size, "input image side length");
    cmd->add_option("--feature_dim", cfg.feature_dim, "pre-embedding feature width");
    cmd->add_option("--embed_dim", cfg.embed_dim, "embedding width M");
    cmd->add_option("--bottleneck_dim", cfg.bottleneck_dim, "autoencoder bottleneck width");
    cmd->add_option("--conv_channels", cfg.conv_channels, "conv channels per block");
    cmd->add_option("--dist_mode", cfg.dist_mode, "sq_euclidean | euclidean");
    cmd->add_option("--disc_hidden", cfg.disc_hidden, "discriminator hidden width");
    cmd->add_option("--cond_dim", cfg.cond_dim, "randomized conditioning dim d");
    cmd->add_option("--d_feat", cfg.d_feat, "outer/randomized threshold");
    cmd->add_option("--lambda_mode", cfg.lambda_mode, "ramp | constant");
    cmd->add_option("--lambda_value", cfg.lambda_value, "lambda for constant mode");
    cmd->add_option("--seed", cfg.seed, "master seed");
    cmd->add_option("--ckpt_every", cfg.ckpt_every, "checkpoint interval in steps");
    cmd->add_option("--pretrain_steps", cfg.pretrain_steps, "source-classifier warm-up steps");
}

int run(int argc, char** argv) {
    CLI::App app{"domain-adaptive few-shot learning (prototypes + adversarial alignment)"};
    app.require_subcommand(1);

    // make-toy
    auto* mk = app.add_subcommand("make-toy", "generate the synthetic two-domain dataset");
    std::string mk_out = "toy_dataset";
    data::ToySpec toy;
    std::string mk_filter = "invert";
    mk->add_option("--out", mk_out, "output dataset root")->required();
    mk->add_option("--classes-source", toy.classes_per_split[0], "|C_s|");
    mk->add_option("--classes-fewshot", toy.classes_per_split[1], "|C_d|");
    mk->add_option("--classes-test", toy.classes_per_split[2], "|C_t|");
    mk->add_option("--samples-per-class", toy.samples_per_class, "samples per class");
    mk->add_option("--image-size", toy.image_size, "square image side");
    mk->add_option("--seed", toy.seed, "generator seed");
    mk->add_option("--filter", mk_filter, "invert | edge_sketch | desaturate");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    DataArgs tr_data;
    TrainConfig tr_cfg;
    std::string tr_metrics = "metrics.csv";
    std::string tr_ckpt_dir = "checkpoints";
    std::string tr_variant = "Full";
    add_data_options(tr, tr_data);
    add_train_options(tr, tr_cfg);
    tr->add_option("--metrics", tr_metrics, "metrics CSV path");
    tr->add_option("--ckpt-dir", tr_ckpt_dir, "checkpoint directory");
    tr->add_option("--variant", tr_variant, "FSL | FSL+DC | FSL+DC+DS | Full");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the target test split");
    DataArgs ev_data;
    std::string ev_ckpt;
    int ev_episodes = 2000, ev_way = 5, ev_shot = 5, ev_q = 15, ev_threads = 1;
    std::uint64_t ev_seed = 0;
    std::string ev_out;
    add_data_options(ev, ev_data);
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--episodes", ev_episodes, "number of test episodes");
    ev->add_option("--way", ev_way, "episode way");
    ev->add_option("--shot", ev_shot, "support shots per class");
    ev->add_option("--queries", ev_q, "queries per class");
    ev->add_option("--seed", ev_seed, "evaluation seed");
    ev->add_option("--threads", ev_threads, "parallel evaluation workers");
    ev->add_option("--out", ev_out, "write the report as JSON here");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and compare loss-toggle variants");
    DataArgs ab_data;
    TrainConfig ab_cfg;
    std::string ab_variants = "FSL,FSL+DC,FSL+DC+DS,Full";
    std::string ab_seeds = "1,2,3,4,5";
    std::string ab_csv = "ablation.csv";
    std::string ab_plot = "ablation.png";
    int ab_episodes = 400, ab_way = 0, ab_shot = 0, ab_q = 15, ab_jobs = 1;
    add_data_options(ab, ab_data);
    add_train_options(ab, ab_cfg);
    ab->add_option("--variants", ab_variants, "comma-separated variant list");
    ab->add_option("--seeds", ab_seeds, "comma-separated seed list");
    ab->add_option("--episodes", ab_episodes, "evaluation episodes per run");
    ab->add_option("--way", ab_way, "evaluation way (default n_meta)");
    ab->add_option("--shot", ab_shot, "evaluation shot (default k)");
    ab->add_option("--queries", ab_q, "evaluation queries per class");
    ab->add_option("--jobs", ab_jobs, "parallel training jobs");
    ab->add_option("--out-csv", ab_csv, "per-run results CSV");
    ab->add_option("--out-plot", ab_plot, "bar chart with CI error bars (PNG)");

    // export-embeddings
    auto* ex = app.add_subcommand("export-embeddings", "dump f~ and f vectors with domain labels (TSV)");
    DataArgs ex_data;
    std::string ex_ckpt, ex_out = "embeddings.tsv";
    int ex_per_domain = 200;
    std::uint64_t ex_seed = 0;
    add_data_options(ex, ex_data);
    ex->add_option("--ckpt", ex_ckpt, "checkpoint file")->required();
    ex->add_option("--out", ex_out, "output TSV path");
    ex->add_option("--per-domain", ex_per_domain, "samples per domain");
    ex->add_option("--seed", ex_seed, "selection seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (mk->parsed()) {
        toy.filter = data::parse_filter(mk_filter);
        data::generate_toy_dataset(mk_out, toy);
        std::cout << "dataset written to " << mk_out << " (splits.txt included)\n";
        return 0;
    }

    if (tr->parsed()) {
        data::ClassSplit split = load_split(tr_data);
        Trainer trainer(tr_cfg, split, parse_variant(tr_variant));
        std::ofstream metrics(tr_metrics);
        if (!metrics) throw IoError("cannot open metrics file: " + tr_metrics);
        std::filesystem::path ckpt_dir = tr_ckpt_dir;
        trainer.run(&metrics, &ckpt_dir);
        std::cout << "trained " << trainer.steps_done() << " steps; final checkpoint in " << tr_ckpt_dir
                  << "\n";
        return 0;
    }

    if (ev->parsed()) {
        Model model = load_checkpoint(ev_ckpt);
        data::ClassSplit split = load_split(ev_data);
        EvalReport r = evaluate(model, split.target_test, ev_episodes, ev_way, ev_shot, ev_q, ev_seed,
                                ev_threads);
        std::printf("top1=%.4f ci95=%.4f\n", r.top1, r.ci95);
        if (!ev_out.empty()) {
            std::ofstream out(ev_out);
            if (!out) throw IoError("cannot open report file: " + ev_out);
            out << eval_report_json(r) << "\n";
        }
        return 0;
    }

    if (ab->parsed()) {
        data::ClassSplit split = load_split(ab_data);
        std::vector<Variant> variants;
        for (auto& name : CLI::detail::split(ab_variants, ',')) variants.push_back(parse_variant(name));
        std::vector<std::uint64_t> seeds;
        for (auto& s : CLI::detail::split(ab_seeds, ',')) seeds.push_back(std::stoull(s));
        EvalSettings eval;
        eval.episodes = ab_episodes;
        eval.way = ab_way > 0 ? ab_way : ab_cfg.n_meta;
        eval.shot = ab_shot > 0 ? ab_shot : ab_cfg.k;
        eval.queries_per_class = ab_q;
        AblationResult result = run_ablation(ab_cfg, variants, seeds, split, eval, ab_jobs);
        std::ofstream csv(ab_csv);
        if (!csv) throw IoError("cannot open ablation CSV: " + ab_csv);
        write_ablation_csv(csv, result);
        write_ablation_plot(ab_plot, result);
        for (Variant v : variants)
            std::printf("%-10s mean_top1=%.4f\n", variant_name(v), result.mean_top1(v));
        std::cout << "wrote " << ab_csv << " and " << ab_plot << "\n";
        return 0;
    }

    if (ex->parsed()) {
        Model model = load_checkpoint(ex_ckpt);
        data::ClassSplit split = load_split(ex_data);
        std::ofstream out(ex_out);
        if (!out) throw IoError("cannot open output TSV: " + ex_out);
        export_embeddings(model, split, ex_per_domain, ex_seed, out);
        std::cout << "wrote " << ex_out << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const dapn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
