#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hd2/voxelgrid.hpp"

namespace hd2::metrics {

// Integer confusion counts: rows are ground truth, columns predictions.
// Integer accumulation makes merges exactly order-independent.
struct ConfusionMatrix {
  int64_t n_classes = 0;
  std::vector<int64_t> counts;  // n_classes * n_classes
  int64_t valid_total = 0;

  explicit ConfusionMatrix(int64_t n)
      : n_classes(n), counts(static_cast<size_t>(n * n), 0) {}
  int64_t& at(int64_t gt, int64_t pred) { return counts[gt * n_classes + pred]; }
  int64_t at(int64_t gt, int64_t pred) const {
    return counts[gt * n_classes + pred];
  }
  void merge(const ConfusionMatrix& other);
};

// Tallies one prediction/ground-truth pair. Voxels outside the valid mask or
// carrying the invalid sentinel contribute to no cell.
void accumulate(const VoxelGrid& pred, const VoxelGrid& gt, ConfusionMatrix& cm);

// Class-agnostic scene completion IoU: occupied = any class != 0.
// Returns 0 on an all-empty denominator.
double scene_iou(const ConfusionMatrix& cm);

struct MiouResult {
  std::vector<double> per_class;  // classes 1..N; 0 where absent
  std::vector<bool> present;      // union non-empty for that class
  double miou = 0.0;              // mean over present classes
};

// Per-class IoU over the semantic classes (empty excluded). Classes absent
// from both prediction and ground truth are excluded from the mean.
MiouResult semantic_miou(const ConfusionMatrix& cm);

// CSV report: header and one value row, columns scene IoU, mIoU, then the
// per-class IoUs in label-space order (absent classes print empty cells).
std::string metrics_csv(const ConfusionMatrix& cm, const LabelSpace& space);

}  // namespace hd2::metrics
