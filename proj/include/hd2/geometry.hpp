#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hd2/tensor.hpp"

namespace hd2::geom {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

struct Mat3 {
  // Row-major.
  std::array<double, 9> m{};
  static Mat3 identity();
  Vec3 apply(const Vec3& v) const;
  Mat3 transposed() const;
  double det() const;
};

// Pinhole camera: camera coords = R . p + t, pixel = perspective division
// through K. Axis convention: world x forward, y left, z up; the camera
// frame orders (right, down, optical depth).
struct CameraModel {
  Mat3 intrinsics;  // upper triangular, [2][2] == 1, positive focals
  Mat3 rotation;
  Vec3 translation;

  // Throws DomainError when the intrinsic/rotation invariants fail.
  void validate() const;
};

struct VoxelGridSpec {
  int64_t h = 0, w = 0, z = 0;
  Vec3 origin;
  double resolution = 0.0;  // voxel edge length, meters

  int64_t numel() const { return h * w * z; }
  int64_t linear(int64_t i, int64_t j, int64_t k) const {
    return (i * w + j) * z + k;
  }
  Vec3 centroid(int64_t i, int64_t j, int64_t k) const;
  void validate() const;
};

// Per-voxel projection results; invalid voxels are flagged, never dropped.
struct Projection {
  int64_t h = 0, w = 0, z = 0;
  std::vector<double> u, v, depth;
  std::vector<uint8_t> valid;  // in front of the camera and inside the image
};

Projection project_voxels(const VoxelGridSpec& spec, const CameraModel& cam,
                          int64_t image_w, int64_t image_h);

// Single-point projection; returns whether the point lies in front of the
// camera and inside the image. u/v/depth are written whenever depth > 0.
bool project_point(const CameraModel& cam, const Vec3& p, int64_t image_w,
                   int64_t image_h, double* u, double* v, double* depth);

// Bilinear samples of a [C,Hf,Wf] feature map at each valid voxel's pixel,
// with pixel coordinates mapped onto the feature lattice by the encoder's
// downsample factor (pixel-center aligned). Invalid voxels receive zeros.
// Returns [C,H,W,Z]; differentiable w.r.t. the features.
diffcore::Tensor sample_image_features(const diffcore::Tensor& features,
                                       const Projection& proj,
                                       double downsample_factor);

}  // namespace hd2::geom
