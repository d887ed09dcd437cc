#pragma once

#include <vector>

#include "hd2/tensor.hpp"

namespace hd2::hsd {

using diffcore::Parameter;
using diffcore::Tensor;

// 1x1 projection that lifts a [C,H,W] feature map into d_exp pseudo slices
// of C channels each.
struct ExpansionLayer {
  Parameter weight;  // [d_exp * c2d, c2d]
  Parameter bias;    // [d_exp * c2d]
  int64_t d_exp = 0;
  int64_t c2d = 0;
};

ExpansionLayer make_expansion_layer(int64_t c2d, int64_t d_exp,
                                    diffcore::Rng& rng,
                                    const std::string& name_prefix = "hsd.de");

// Stack of pseudo-dimension slices, stored as one [D,C,H,W] tensor.
struct PseudoVolume {
  Tensor slices;
  int64_t d_exp() const { return slices.shape()[0]; }
  int64_t channels() const { return slices.shape()[1]; }
};

struct PixelQuerySet {
  Parameter queries;  // [n_query, c2d]
};

// Density-peaks clustering output. Selection (centers, assignment) is fixed
// data of the forward pass; only the centroid means stay differentiable.
struct ClusterSet {
  Tensor centroids;                 // [d_exp, c2d], mean of assigned members
  std::vector<int> assignment;      // per-point cluster id in [0, d_exp)
  std::vector<int> centers;         // point index of each cluster's center
  std::vector<double> density;      // rho
  std::vector<double> separation;   // delta
  double kmeans_objective = 0.0;    // sum of squared distances to centroids
};

// Applies the expansion projection per pixel and reshapes the d_exp*C outputs
// into slices.
PseudoVolume dim_expand(const Tensor& f_cam, const ExpansionLayer& layer);

// lambda * mean |W_hat . W_hat^T - I| with rows of the expansion weight
// normalized first. Zero rows are a domain error.
Tensor orthogonal_loss(const ExpansionLayer& layer, double lambda);

// Cross attention of the pixel queries over every pseudo-volume feature
// vector (slices and positions flattened). Returns [n_query, c2d].
Tensor collect_global_semantics(const PixelQuerySet& queries,
                                const PseudoVolume& volume);

// Density-peaks clustering with kNN density estimates. Ties anywhere resolve
// to the lowest point index.
ClusterSet dpc_knn_cluster(const Tensor& points, int64_t d_exp, int64_t k_nn);

// Sum over unordered centroid pairs of their cosine similarity.
Tensor decoupling_loss(const ClusterSet& clusters);

// Weights each slice by its best cosine match against the cluster centroids
// and sums the weighted slices into a [C,H,W] map. With slice_level_sim the
// weight is one scalar per slice (computed from the spatial mean feature)
// instead of one per location.
Tensor semantic_aggregate(const PseudoVolume& volume, const ClusterSet& clusters,
                          bool slice_level_sim = false);

}  // namespace hd2::hsd
