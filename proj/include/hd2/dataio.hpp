#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "hd2/config.hpp"
#include "hd2/geometry.hpp"
#include "hd2/tensor.hpp"
#include "hd2/voxelgrid.hpp"

namespace hd2::dataio {

// One training/eval unit. images holds the temporal stack; desk-scale runs
// use a single frame.
struct SceneSample {
  std::vector<diffcore::Tensor> images;  // each [3,H,W], values in [0,1]
  geom::CameraModel camera;
  VoxelGrid gt;
  std::vector<uint8_t> foreground_mask;  // 0/1 per voxel
};

// Deterministic procedural scenes: a road plane, walls, and foreground boxes
// rendered into images with a depth-buffered splatter. Identical seeds give
// identical bytes.
std::vector<SceneSample> generate_synthetic(uint64_t seed, int64_t count,
                                            const geom::VoxelGridSpec& spec,
                                            const LabelSpace& space,
                                            int64_t image_w = 64,
                                            int64_t image_h = 64);

// ---- SSCV voxel-grid container ------------------------------------------------
// magic "SSCV", u16 version, 3 x u32 dims, u16 little-endian labels
// (h outer, z inner), then the valid mask bit-packed MSB-first.
void write_sscv(const VoxelGrid& grid, const std::string& path);
VoxelGrid read_sscv(const std::string& path);

// ---- SemanticKITTI-convention voxel files ---------------------------------------
struct ClassMap {
  std::unordered_map<uint16_t, uint16_t> remap;  // raw label -> class id or 255
};
ClassMap load_class_map(const std::string& path);
// Identity over the class-id range; raw values >= num_classes are unmapped.
ClassMap identity_class_map(int64_t num_classes);

// Reads <frame_id>.label (u16 LE per voxel) and <frame_id>.invalid
// (bit-packed MSB-first) as a 256 x 256 x 32 grid, remapping labels through
// the class map.
VoxelGrid read_semantickitti_voxels(const std::string& dir,
                                    const std::string& frame_id,
                                    const ClassMap& map);

// ---- config ---------------------------------------------------------------------
// Key = value lines, '#' comments. Unknown keys, bad types, and invariant
// violations all raise ConfigError naming the key.
ModelConfig parse_config(const std::string& path);

// ---- dataset directories ----------------------------------------------------------
// sample_### subdirectories holding gt.sscv, fg.sscv, camera.txt and
// image_#.t64 tensors.
void save_sample(const SceneSample& sample, const std::string& dir);
SceneSample load_sample(const std::string& dir);
void save_dataset(const std::vector<SceneSample>& samples,
                  const std::string& dir);
std::vector<SceneSample> load_dataset(const std::string& dir);

// Simple tensor container: magic "HD2T", u8 rank, u32 dims, f64 LE payload.
void write_tensor(const diffcore::Tensor& t, const std::string& path);
diffcore::Tensor read_tensor(const std::string& path);

void write_camera(const geom::CameraModel& cam, const std::string& path);
geom::CameraModel read_camera(const std::string& path);

}  // namespace hd2::dataio
