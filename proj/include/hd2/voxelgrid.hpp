#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hd2/error.hpp"

namespace hd2 {

// Labels use the invalid sentinel 255; the valid mask excludes voxels from
// losses and metrics.
inline constexpr uint16_t kInvalidLabel = 255;

struct VoxelGrid {
  int64_t h = 0, w = 0, z = 0;
  std::vector<uint16_t> labels;  // row-major, h outer, z inner
  std::vector<uint8_t> valid;    // 0/1 per voxel

  int64_t numel() const { return h * w * z; }
  int64_t linear(int64_t i, int64_t j, int64_t k) const {
    return (i * w + j) * z + k;
  }
  static VoxelGrid empty(int64_t h, int64_t w, int64_t z) {
    VoxelGrid g{h, w, z, {}, {}};
    g.labels.assign(static_cast<size_t>(h * w * z), 0);
    g.valid.assign(static_cast<size_t>(h * w * z), 1);
    return g;
  }
};

struct LabelSpace {
  std::vector<std::string> names;            // names[0] == "empty"
  std::vector<uint16_t> foreground;          // movable-object class ids
  std::vector<std::array<uint8_t, 3>> colors;

  int64_t num_classes() const { return static_cast<int64_t>(names.size()); }
  bool is_foreground(uint16_t label) const {
    for (uint16_t f : foreground)
      if (f == label) return true;
    return false;
  }
};

// Six desk-scale classes covering the foreground/background split plus one
// class that never occurs in generated scenes (exercises mIoU exclusion).
LabelSpace synthetic_label_space();

// The 19 semantic classes of the outdoor driving benchmark plus "empty",
// in the standard reporting order.
LabelSpace semantickitti_label_space();

}  // namespace hd2
