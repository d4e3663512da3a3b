#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dapn/data.hpp"
#include "dapn/model.hpp"

namespace dapn {

struct TrainConfig {
    // optimisation
    double eta0 = 0.001;
    double alpha = 10.0;
    double beta = 0.75;
    double momentum = 0.9;
    double weight_decay = 0.01;
    int total_steps = 10000;
    // episodes
    int n_sc = 20;  // source episode way (> n_meta)
    int n_meta = 5; // target episode way N_dc == N_meta; default evaluation way
    int k = 5;      // shot
    int q_source = 15;
    int q_target = 5;
    // model
    std::string arch = "small_conv4";
    int input_size = 84;
    int feature_dim = 512;
    int embed_dim = 512;
    int bottleneck_dim = 256;
    int conv_channels = 64;
    std::string dist_mode = "sq_euclidean";
    int disc_hidden = 256;
    int cond_dim = 1024;
    int d_feat = 1024;
    // adversarial schedule
    std::string lambda_mode = "ramp";  // ramp | constant
    double lambda_value = 1.0;
    // run control
    std::uint64_t seed = 0;
    int ckpt_every = 500;
    int pretrain_steps = 0;

    void validate() const;
    ModelConfig model_config() const;
};

/// Polynomial decay eta_p = eta0 * (1 + alpha p)^(-beta) over progress p in
/// [0,1].
double lr_schedule(double progress, const TrainConfig& cfg);

enum class Variant { kFsl, kFslDc, kFslDcDs, kFull };

Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);
std::array<double, 4> variant_coefficients(Variant v);

struct StepStats {
    int step = 0;
    double lps = 0.0, lpd = 0.0, ldc = 0.0, lds = 0.0;
    std::array<double, 4> w{};
    double lr = 0.0;
    double lambda = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,lps,lpd,ldc,lds,w1,w2,w3,w4,lr,lambda";
void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const StepStats& s);

/// One source + one target episode per optimisation step; all four losses are
/// evaluated every step and the variant decides which of them reach the total.
class Trainer {
public:
    Trainer(const TrainConfig& cfg, const data::ClassSplit& split, Variant variant = Variant::kFull);
    ~Trainer();

    StepStats step();
    /// Runs pretraining (if configured) plus total_steps steps, streaming
    /// metrics rows and writing checkpoints under ckpt_dir (optional).
    void run(std::ostream* metrics, const std::filesystem::path* ckpt_dir = nullptr);

    Model& model() { return *model_; }
    const Model& model() const { return *model_; }
    /// Hands the trained model over; the trainer must not step afterwards.
    std::unique_ptr<Model> release_model() { return std::move(model_); }
    int steps_done() const { return step_; }
    const TrainConfig& config() const { return cfg_; }

private:
    struct EpisodeForward;
    EpisodeForward forward_episode(const data::Episode& e) const;
    ad::Var combined(const LossBundle& bundle) const;
    void warm_up();

    TrainConfig cfg_;
    Variant variant_;
    const data::ClassSplit& split_;
    data::ClassPool fewshot_pool_;  // C_d trimmed to k per class, then augmented
    std::unique_ptr<Model> model_;
    std::unique_ptr<nn::SgdMomentum> opt_;
    Rng rng_source_;
    Rng rng_target_;
    int step_ = 0;
};

struct EvalReport {
    double top1 = 0.0;
    double ci95 = 0.0;
    int episodes = 0;
    int way = 0;
    int shot = 0;
    int queries_per_class = 0;
    std::vector<double> per_episode;
};

/// Nearest-prototype evaluation on gated embeddings over n_episodes tasks
/// sampled from the test pool. Episodes derive independent seeds, so thread
/// count never changes the result; ci95 = 1.96 * stddev / sqrt(n) (0 when
/// n == 1).
EvalReport evaluate(const Model& model, const data::ClassPool& test_pool, int n_episodes, int way, int shot,
                    int queries_per_class, std::uint64_t seed, int threads = 1);

/// Same protocol with a custom embedding function (one row per sample, support
/// rows first). Useful for reference embedders in tests.
using EmbedFn = std::function<ad::Mat(const std::vector<const data::Sample*>&)>;
EvalReport evaluate_with(const EmbedFn& embed, const data::ClassPool& test_pool, int n_episodes, int way,
                         int shot, int queries_per_class, std::uint64_t seed, int threads = 1,
                         proto::DistMode dist = proto::DistMode::kSqEuclidean);

std::string eval_report_json(const EvalReport& r);

struct EvalSettings {
    int episodes = 600;
    int way = 5;
    int shot = 5;
    int queries_per_class = 15;
    int threads = 1;
};

struct AblationRow {
    Variant variant;
    std::uint64_t seed = 0;
    EvalReport report;
    std::shared_ptr<Model> model;  // retained for post-hoc probes
};

struct AblationResult {
    std::vector<Variant> variants;
    std::vector<std::uint64_t> seeds;
    std::vector<AblationRow> rows;  // variant-major, seed-minor

    double mean_top1(Variant v) const;
};

/// Trains every (variant, seed) combination on identical data/episode streams
/// and evaluates each on the same evaluation episodes. Runs are independent,
/// so `jobs` workers may execute them concurrently without changing any
/// result.
AblationResult run_ablation(const TrainConfig& base, const std::vector<Variant>& variants,
                            const std::vector<std::uint64_t>& seeds, const data::ClassSplit& split,
                            const EvalSettings& eval, int jobs = 1, bool keep_models = false);

void write_ablation_csv(std::ostream& os, const AblationResult& result);
void write_ablation_plot(const std::filesystem::path& png_path, const AblationResult& result);

struct ProbeReport {
    double acc_pre = 0.0;   // linear probe accuracy separating domains on f~
    double acc_post = 0.0;  // same probe on f
};

/// Trains a fresh logistic probe per feature stage to separate the two
/// domains; lower post-embedding accuracy indicates domain confusion.
ProbeReport domain_probe(const Model& model, const std::vector<const data::Sample*>& source_samples,
                         const std::vector<const data::Sample*>& target_samples, std::uint64_t seed);

/// TSV dump of {f~, f} with domain labels for external projection tools.
void export_embeddings(const Model& model, const data::ClassSplit& split, int per_domain, std::uint64_t seed,
                       std::ostream& os);

}  // namespace dapn
