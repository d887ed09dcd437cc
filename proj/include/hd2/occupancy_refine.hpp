#pragma once

#include <string>
#include <vector>

#include "hd2/tensor.hpp"

namespace hd2::hor {

using diffcore::Parameter;
using diffcore::Tensor;

struct VoxelQuerySet {
  Parameter queries;  // [n_query, c3d]
};

// Occupied-vs-free and foreground-vs-background logit fields, both [H,W,Z].
struct ScoreMaps {
  Tensor occ_free;
  Tensor fore_back;
};

enum class CriticalKind { geometric, semantic };

// Top-k voxel selection. Indices are ordered by descending score; ties fall
// to the lowest linear index, and every excluded voxel scores at most the
// last included one.
struct CriticalSet {
  std::vector<int64_t> indices;
  std::vector<double> scores;
  CriticalKind kind = CriticalKind::geometric;
};

// Per-voxel linear head over [feature ; pooled query context].
struct HeadParams {
  Parameter w_feat;  // [c3d, k_out]
  Parameter w_ctx;   // [c3d, k_out]
  Parameter bias;    // [k_out]
};

HeadParams make_head(int64_t c3d, int64_t k_out, const std::string& prefix,
                     diffcore::Rng& rng);

// Two-layer residual head; the output layer starts at zero so refinement
// begins as the identity.
struct RefineMlp {
  Parameter w1;  // [c3d + 2, hidden]
  Parameter b1;  // [hidden]
  Parameter w2;  // [hidden, classes]
  Parameter b2;  // [classes]
};

RefineMlp make_refine_mlp(int64_t c3d, int64_t hidden, int64_t classes,
                          const std::string& prefix, diffcore::Rng& rng);

// Queries cross-attend to the flattened voxel features; the attended rows are
// mean-pooled into one context vector. Each voxel's logits combine its own
// feature with that context through the head weights.
ScoreMaps binary_heads(const Tensor& f_voxel, const VoxelQuerySet& queries,
                       const HeadParams& head);

// Same context scheme with an n_classes-way head. Returns [n_classes,H,W,Z].
Tensor classwise_head(const Tensor& f_voxel, const VoxelQuerySet& queries,
                      const HeadParams& head, int64_t n_classes);

// Top-k voxels of the summed score maps.
CriticalSet geometric_critical(const ScoreMaps& maps, int64_t k);

// Top-k voxels by best class logit.
CriticalSet semantic_critical(const Tensor& y_init, int64_t k);

// Symmetric KL between the softmax fields of the geometric density scores
// and the per-voxel semantic confidences. With subset non-null, both
// distributions are formed over just those voxel indices.
Tensor critical_alignment_loss(const ScoreMaps& maps, const Tensor& y_init,
                               const std::vector<int64_t>* subset = nullptr);

// Residual refinement at the union of the two critical sets: gathers
// [feature ; geometric score ; semantic confidence] per critical voxel,
// runs the MLP, and adds the class residuals in place. Voxels outside the
// union are returned bit-identical.
Tensor refine(const Tensor& y_init, const Tensor& f_voxel,
              const ScoreMaps& maps, const CriticalSet& v_geo,
              const CriticalSet& v_sem, const RefineMlp& mlp);

}  // namespace hd2::hor
