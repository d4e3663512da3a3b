#pragma once

#include <string>
#include <vector>

#include "dapn/autodiff.hpp"

namespace dapn::proto {

using ad::Mat;
using ad::Var;

enum class DistMode { kSqEuclidean, kEuclidean };

DistMode parse_dist(const std::string& name);
const char* dist_name(DistMode mode);

/// Class prototypes as per-slot means of embedded support rows. `slots` maps
/// each support row to its class slot in [0, way); every slot must be
/// non-empty.
Var compute_prototypes(const Var& support, const std::vector<int>& slots, int way);

/// Distance matrix [n x way] between embeddings and prototypes.
Var distances(const Var& x, const Var& protos, DistMode mode);

/// log softmax(-dist) rows: the episodic class distribution in log space.
Var log_class_distribution(const Var& x, const Var& protos, DistMode mode);

/// Mean over rows of -log p(true slot): serves both the source episode loss
/// and the target episode loss.
Var proto_loss(const Var& query, const std::vector<int>& query_slots, const Var& protos, DistMode mode);

// --- value-level helpers (no gradients; used for evaluation and for the
// --- detached classifier predictions fed to the domain discriminators)

/// Softmax over -distances per row; rows sum to 1.
Mat class_distribution(const Mat& x, const Mat& protos, DistMode mode);

/// Softmax of -dists for a single sample (exposed for shift-invariance
/// checks).
Eigen::VectorXd class_distribution_from_dists(const Eigen::VectorXd& dists);

Mat prototype_values(const Mat& support, const std::vector<int>& slots, int way);

/// Index of the closest prototype; ties resolve to the lowest slot index.
int nearest_prototype(const Eigen::RowVectorXd& x, const Mat& protos, DistMode mode);

/// Top-1 accuracy of nearest-prototype classification on embedded values.
double episode_accuracy(const Mat& support, const std::vector<int>& support_slots, int way, const Mat& query,
                        const std::vector<int>& query_slots, DistMode mode);

}  // namespace dapn::proto
