#include "hd2/geometry.hpp"

#include <cmath>

namespace hd2::geom {

Mat3 Mat3::identity() {
  Mat3 r;
  r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  return r;
}

Vec3 Mat3::apply(const Vec3& v) const {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
          m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  r.m = {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
  return r;
}

double Mat3::det() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void CameraModel::validate() const {
  const auto& k = intrinsics.m;
  if (k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0)
    throw DomainError("intrinsic matrix must be upper triangular");
  if (k[8] != 1.0) throw DomainError("intrinsic matrix must have K[2][2] == 1");
  if (!(k[0] > 0.0) || !(k[4] > 0.0))
    throw DomainError("focal lengths must be positive");

  Mat3 rt = rotation.transposed();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int l = 0; l < 3; ++l)
        dot += rotation.m[i * 3 + l] * rt.m[l * 3 + j];
      double want = i == j ? 1.0 : 0.0;
      if (std::fabs(dot - want) > 1e-9)
        throw DomainError("rotation is not orthonormal");
    }
  if (std::fabs(rotation.det() - 1.0) > 1e-9)
    throw DomainError("rotation determinant is not 1");
}

Vec3 VoxelGridSpec::centroid(int64_t i, int64_t j, int64_t k) const {
  return {origin.x + resolution * (static_cast<double>(i) + 0.5),
          origin.y + resolution * (static_cast<double>(j) + 0.5),
          origin.z + resolution * (static_cast<double>(k) + 0.5)};
}

void VoxelGridSpec::validate() const {
  if (h <= 0 || w <= 0 || z <= 0)
    throw ConfigError("voxel grid extents must be positive");
  if (!(resolution > 0.0)) throw ConfigError("voxel resolution must be > 0");
}

bool project_point(const CameraModel& cam, const Vec3& p, int64_t image_w,
                   int64_t image_h, double* u, double* v, double* depth) {
  Vec3 pc = cam.rotation.apply(p);
  pc.x += cam.translation.x;
  pc.y += cam.translation.y;
  pc.z += cam.translation.z;
  if (depth) *depth = pc.z;
  if (!(pc.z > 0.0)) return false;
  const auto& k = cam.intrinsics.m;
  double uu = (k[0] * pc.x + k[1] * pc.y + k[2] * pc.z) / pc.z;
  double vv = (k[4] * pc.y + k[5] * pc.z) / pc.z;
  if (u) *u = uu;
  if (v) *v = vv;
  return uu >= 0.0 && uu < static_cast<double>(image_w) && vv >= 0.0 &&
         vv < static_cast<double>(image_h);
}

Projection project_voxels(const VoxelGridSpec& spec, const CameraModel& cam,
                          int64_t image_w, int64_t image_h) {
  spec.validate();
  cam.validate();

  Projection p;
  p.h = spec.h;
  p.w = spec.w;
  p.z = spec.z;
  int64_t n = spec.numel();
  p.u.assign(n, 0.0);
  p.v.assign(n, 0.0);
  p.depth.assign(n, 0.0);
  p.valid.assign(n, 0);

  for (int64_t i = 0; i < spec.h; ++i)
    for (int64_t j = 0; j < spec.w; ++j)
      for (int64_t l = 0; l < spec.z; ++l) {
        int64_t at = spec.linear(i, j, l);
        p.valid[at] = project_point(cam, spec.centroid(i, j, l), image_w,
                                    image_h, &p.u[at], &p.v[at], &p.depth[at]);
      }
  return p;
}

diffcore::Tensor sample_image_features(const diffcore::Tensor& features,
                                       const Projection& proj,
                                       double downsample_factor) {
  if (!(downsample_factor > 0.0))
    throw ConfigError("downsample factor must be > 0");
  if (features.rank() != 3)
    throw ShapeError("sample_image_features expects [C,Hf,Wf]");

  size_t n = proj.valid.size();
  std::vector<double> xs(n), ys(n);
  double off = (downsample_factor - 1.0) / 2.0;
  for (size_t i = 0; i < n; ++i) {
    xs[i] = (proj.u[i] - off) / downsample_factor;
    ys[i] = (proj.v[i] - off) / downsample_factor;
  }
  diffcore::Tensor rows =
      diffcore::bilinear_sample(features, xs, ys, proj.valid);  // [N,C]
  diffcore::Tensor cols = diffcore::permute(rows, {1, 0});      // [C,N]
  return diffcore::reshape(cols,
                           {features.shape()[0], proj.h, proj.w, proj.z});
}

}  // namespace hd2::geom
