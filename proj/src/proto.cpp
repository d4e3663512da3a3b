#include "dapn/proto.hpp"

#include <cmath>

namespace dapn::proto {

DistMode parse_dist(const std::string& name) {
    if (name == "sq_euclidean") return DistMode::kSqEuclidean;
    if (name == "euclidean") return DistMode::kEuclidean;
    throw ConfigError("unknown distance mode: " + name);
}

const char* dist_name(DistMode mode) {
    return mode == DistMode::kSqEuclidean ? "sq_euclidean" : "euclidean";
}

namespace {

Mat averaging_matrix(const std::vector<int>& slots, int way, Eigen::Index n_rows) {
    if (way <= 0) throw ValidationError("compute_prototypes: way must be positive");
    if (static_cast<Eigen::Index>(slots.size()) != n_rows)
        throw ValidationError("compute_prototypes: one slot per support row required");
    std::vector<int> counts(static_cast<size_t>(way), 0);
    for (int s : slots) {
        if (s < 0 || s >= way) throw ValidationError("compute_prototypes: slot out of range");
        counts[static_cast<size_t>(s)]++;
    }
    for (int s = 0; s < way; ++s)
        if (counts[static_cast<size_t>(s)] == 0)
            throw ValidationError("compute_prototypes: class slot " + std::to_string(s) + " has no support samples");
    Mat a = Mat::Zero(way, n_rows);
    for (Eigen::Index i = 0; i < n_rows; ++i) {
        const int s = slots[static_cast<size_t>(i)];
        a(s, i) = 1.0 / counts[static_cast<size_t>(s)];
    }
    return a;
}

}  // namespace

Var compute_prototypes(const Var& support, const std::vector<int>& slots, int way) {
    Mat a = averaging_matrix(slots, way, support.rows());
    return ad::matmul(ad::constant(std::move(a)), support);
}

Var distances(const Var& x, const Var& protos, DistMode mode) {
    Var sq = ad::pairwise_sqdist(x, protos);
    if (mode == DistMode::kSqEuclidean) return sq;
    return ad::sqrt_elem(sq, 1e-12);
}

Var log_class_distribution(const Var& x, const Var& protos, DistMode mode) {
    return ad::log_softmax_rows(ad::neg(distances(x, protos, mode)));
}

Var proto_loss(const Var& query, const std::vector<int>& query_slots, const Var& protos, DistMode mode) {
    if (query.rows() == 0) throw ValidationError("proto_loss: empty query set");
    if (static_cast<Eigen::Index>(query_slots.size()) != query.rows())
        throw ValidationError("proto_loss: one label per query row required");
    for (int s : query_slots)
        if (s < 0 || s >= protos.rows())
            throw ValidationError("proto_loss: query label " + std::to_string(s) +
                                  " is not among the support classes");
    Var logp = log_class_distribution(query, protos, mode);
    return ad::neg(ad::mean_all(ad::pick_per_row(logp, query_slots)));
}

Mat prototype_values(const Mat& support, const std::vector<int>& slots, int way) {
    return averaging_matrix(slots, way, support.rows()) * support;
}

Eigen::VectorXd class_distribution_from_dists(const Eigen::VectorXd& dists) {
    if (!dists.allFinite()) throw NumericError("class_distribution: non-finite distance");
    const double m = dists.minCoeff();
    Eigen::VectorXd p = (-(dists.array() - m)).exp();
    return p / p.sum();
}

Mat class_distribution(const Mat& x, const Mat& protos, DistMode mode) {
    if (x.cols() != protos.cols()) throw ValidationError("class_distribution: dims disagree");
    Mat out(x.rows(), protos.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::VectorXd d(protos.rows());
        for (Eigen::Index j = 0; j < protos.rows(); ++j) {
            const double sq = (x.row(i) - protos.row(j)).squaredNorm();
            d(j) = mode == DistMode::kSqEuclidean ? sq : std::sqrt(sq);
        }
        out.row(i) = class_distribution_from_dists(d).transpose();
    }
    return out;
}

int nearest_prototype(const Eigen::RowVectorXd& x, const Mat& protos, DistMode mode) {
    // squared distance ordering equals euclidean ordering; tie-break: lowest
    // slot index wins via strict comparison
    int best = 0;
    double bd = (x - protos.row(0)).squaredNorm();
    for (Eigen::Index j = 1; j < protos.rows(); ++j) {
        const double d = (x - protos.row(j)).squaredNorm();
        if (d < bd) {
            bd = d;
            best = static_cast<int>(j);
        }
    }
    (void)mode;
    return best;
}

double episode_accuracy(const Mat& support, const std::vector<int>& support_slots, int way, const Mat& query,
                        const std::vector<int>& query_slots, DistMode mode) {
    if (query.rows() == 0) throw ValidationError("episode_accuracy: empty query set");
    Mat protos = prototype_values(support, support_slots, way);
    int correct = 0;
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
        Eigen::RowVectorXd row = query.row(i);
        if (nearest_prototype(row, protos, mode) == query_slots[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(query.rows());
}

}  // namespace dapn::proto
