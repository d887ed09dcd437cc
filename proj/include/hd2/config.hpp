#pragma once

#include <cstdint>
#include <string>

#include "hd2/error.hpp"

namespace hd2 {

// Desk-scale defaults; every loss-bearing knob is exposed through the text
// config (see dataio::parse_config).
struct ModelConfig {
  int64_t grid_h = 32, grid_w = 32, grid_z = 8;
  double resolution = 0.4;  // meters per voxel edge

  int64_t c2d = 32;         // 2D feature channels
  int64_t c3d = 16;         // 3D feature channels
  int64_t d_exp = 4;        // pseudo-dimension expansion factor
  int64_t n_query = 32;     // pixel and voxel query count
  int64_t k_critical = 64;  // critical voxels per selection

  double lambda_orth = 0.01;
  double w_decouple = 0.01;
  double w_critical = 0.1;

  double lr = 2e-4;
  double weight_decay = 1e-2;
  int64_t epochs = 24;
  uint64_t seed = 42;

  bool slice_level_sim = false;  // hsd.slice_level_sim
  bool kl_topk_only = false;     // hor.kl_topk_only

  // Fixed at desk scale (not config-file keys).
  int64_t k_nn = 5;
  int64_t refine_hidden = 16;
  int64_t image_w = 64, image_h = 64;
  int64_t num_classes = 6;  // including "empty"
  bool freeze_refine = false;

  int64_t voxel_count() const { return grid_h * grid_w * grid_z; }
  void validate() const;
};

// Full-scale reference values, recorded for documentation; desk-scale runs
// never use them.
namespace full_scale {
inline constexpr int64_t kGridH = 128, kGridW = 128, kGridZ = 16;
inline constexpr double kResolution = 0.2;
inline constexpr int64_t kC2d = 256, kC3d = 32;
inline constexpr int64_t kDExp = 4;
inline constexpr int64_t kNQuery = 100;
inline constexpr int64_t kKCritical = 4096;
inline constexpr int64_t kUpsampleFactor = 2;  // predictions to 256x256x32
inline constexpr double kLr = 2e-4, kWeightDecay = 1e-2;
inline constexpr int64_t kEpochs = 24;
}  // namespace full_scale

}  // namespace hd2
