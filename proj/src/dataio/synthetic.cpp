#include <algorithm>
#include <cmath>

#include "hd2/dataio.hpp"

namespace hd2::dataio {

using diffcore::Rng;
using diffcore::Tensor;
using geom::CameraModel;
using geom::Mat3;
using geom::Vec3;
using geom::VoxelGridSpec;

namespace {

constexpr uint16_t kRoad = 1, kBuilding = 2, kCar = 3, kPerson = 4;

Vec3 normalize(Vec3 v) {
  double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
  return {v.x / n, v.y / n, v.z / n};
}

Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

// Camera looking from behind and above the grid toward its center.
CameraModel make_scene_camera(const VoxelGridSpec& spec, Rng& rng,
                              int64_t image_w, int64_t image_h) {
  double xs = spec.h * spec.resolution;
  double ys = spec.w * spec.resolution;
  double zs = spec.z * spec.resolution;
  Vec3 pos{spec.origin.x - 0.18 * xs + rng.uniform(-0.02, 0.02) * xs,
           spec.origin.y + 0.5 * ys + rng.uniform(-0.05, 0.05) * ys,
           spec.origin.z + zs + 0.9 * zs};
  Vec3 target{spec.origin.x + 0.5 * xs, spec.origin.y + 0.5 * ys,
              spec.origin.z + 0.2 * zs};

  Vec3 fwd = normalize({target.x - pos.x, target.y - pos.y, target.z - pos.z});
  Vec3 right = normalize(cross(fwd, {0, 0, 1}));
  Vec3 down = cross(fwd, right);

  CameraModel cam;
  cam.rotation.m = {right.x, right.y, right.z, down.x, down.y,
                    down.z,  fwd.x,   fwd.y,   fwd.z};
  Vec3 rt = cam.rotation.apply(pos);
  cam.translation = {-rt.x, -rt.y, -rt.z};
  double f = 0.75 * static_cast<double>(image_w);
  cam.intrinsics.m = {f, 0, image_w / 2.0, 0, f, image_h / 2.0, 0, 0, 1};
  cam.validate();
  return cam;
}

struct Box {
  int64_t i0, j0, di, dj, dz;
  uint16_t label;
};

bool region_free(const VoxelGrid& g, const Box& b) {
  for (int64_t i = b.i0; i < b.i0 + b.di; ++i)
    for (int64_t j = b.j0; j < b.j0 + b.dj; ++j)
      for (int64_t k = 1; k <= b.dz; ++k)
        if (g.labels[g.linear(i, j, k)] != 0) return false;
  return true;
}

bool box_visible(const VoxelGridSpec& spec, const CameraModel& cam,
                 const Box& b, int64_t iw, int64_t ih) {
  for (int64_t i = b.i0; i < b.i0 + b.di; ++i)
    for (int64_t j = b.j0; j < b.j0 + b.dj; ++j)
      for (int64_t k = 1; k <= b.dz; ++k)
        if (geom::project_point(cam, spec.centroid(i, j, k), iw, ih, nullptr,
                                nullptr, nullptr))
          return true;
  return false;
}

void paint(VoxelGrid& g, const Box& b) {
  for (int64_t i = b.i0; i < b.i0 + b.di; ++i)
    for (int64_t j = b.j0; j < b.j0 + b.dj; ++j)
      for (int64_t k = 1; k <= b.dz; ++k) g.labels[g.linear(i, j, k)] = b.label;
}

}  // namespace

std::vector<SceneSample> generate_synthetic(uint64_t seed, int64_t count,
                                            const VoxelGridSpec& spec,
                                            const LabelSpace& space,
                                            int64_t image_w, int64_t image_h) {
  if (count < 1) throw ConfigError("sample count must be >= 1");
  spec.validate();
  if (spec.h < 8 || spec.w < 8 || spec.z < 4)
    throw ConfigError("grid too small to place geometry (need >= 8x8x4)");
  if (space.num_classes() <= kPerson)
    throw ConfigError("label space too small for the synthetic classes");

  Rng rng(seed);
  std::vector<SceneSample> out;
  out.reserve(static_cast<size_t>(count));

  for (int64_t s = 0; s < count; ++s) {
    SceneSample sample;
    sample.camera = make_scene_camera(spec, rng, image_w, image_h);
    VoxelGrid& gt = sample.gt;
    gt = VoxelGrid::empty(spec.h, spec.w, spec.z);

    // Ground plane: the full k = 0 layer is road.
    for (int64_t i = 0; i < spec.h; ++i)
      for (int64_t j = 0; j < spec.w; ++j) gt.labels[gt.linear(i, j, 0)] = kRoad;

    // Wall slabs toward the back of the scene, two voxels thick so their
    // top faces carry a usable observed area.
    int64_t n_walls = rng.randint(1, 3);
    for (int64_t wlk = 0; wlk < n_walls; ++wlk) {
      int64_t xi = rng.randint(spec.h / 2, spec.h - 3);
      int64_t j0 = rng.randint(0, spec.w - 5);
      int64_t len = rng.randint(3, std::min<int64_t>(8, spec.w - j0));
      int64_t height = rng.randint(2, std::min<int64_t>(4, spec.z - 1));
      for (int64_t dx = 0; dx < 2; ++dx)
        for (int64_t j = j0; j < j0 + len; ++j)
          for (int64_t k = 1; k <= height; ++k)
            gt.labels[gt.linear(xi + dx, j, k)] = kBuilding;
    }

    // Foreground boxes; the first three pin down one car and two persons so
    // every class shows up with a workable voxel count in every scene.
    // Extra boxes that cannot find a free visible spot are dropped.
    int64_t n_boxes = rng.randint(3, 6);
    int64_t car_span = spec.h >= 12 ? 3 : 2;
    for (int64_t bi = 0; bi < n_boxes; ++bi) {
      uint16_t label =
          bi == 0 ? kCar : (bi <= 2 ? kPerson
                                    : (rng.randint(0, 1) ? kCar : kPerson));
      Box box;
      box.label = label;
      if (label == kCar) {
        box.di = car_span;
        box.dj = 2;
        box.dz = std::min<int64_t>(2, spec.z - 2);
      } else {
        box.di = 1;
        box.dj = spec.w >= 12 ? 2 : 1;
        box.dz = std::min<int64_t>(3, spec.z - 2);
      }
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        box.i0 = rng.randint(1, spec.h - 1 - box.di);
        box.j0 = rng.randint(1, spec.w - 1 - box.dj);
        if (!region_free(gt, box)) continue;
        if (!box_visible(spec, sample.camera, box, image_w, image_h)) continue;
        paint(gt, box);
        placed = true;
      }
      if (!placed && bi < 2)
        throw ConfigError("could not place scene geometry; grid too small");
    }

    // Foreground mask follows the label space's movable classes.
    sample.foreground_mask.assign(static_cast<size_t>(gt.numel()), 0);
    for (int64_t v = 0; v < gt.numel(); ++v)
      sample.foreground_mask[v] = space.is_foreground(gt.labels[v]) ? 1 : 0;

    // Image: noisy background gradient, then depth-buffered voxel splats.
    std::vector<double> img(static_cast<size_t>(3 * image_h * image_w));
    for (int64_t y = 0; y < image_h; ++y)
      for (int64_t x = 0; x < image_w; ++x) {
        double base[3] = {0.10 + 0.25 * y / image_h, 0.15,
                          0.20 + 0.25 * x / image_w};
        for (int c = 0; c < 3; ++c)
          img[(c * image_h + y) * image_w + x] =
              base[c] + rng.uniform(-0.12, 0.12);
      }
    std::vector<double> zbuf(static_cast<size_t>(image_h * image_w), HUGE_VAL);
    std::vector<int> owner(static_cast<size_t>(image_h * image_w), -1);
    struct Splat {
      int64_t x0, x1, y0, y1;
      double depth, color[3];
    };
    std::vector<Splat> splats;
    for (int64_t i = 0; i < spec.h; ++i)
      for (int64_t j = 0; j < spec.w; ++j)
        for (int64_t k = 0; k < spec.z; ++k) {
          uint16_t label = gt.labels[gt.linear(i, j, k)];
          if (label == 0) continue;
          // Jitter is drawn for every occupied voxel so the stream does not
          // depend on visibility.
          double jit[3] = {rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08),
                           rng.uniform(-0.08, 0.08)};
          double u, v, depth;
          if (!geom::project_point(sample.camera, spec.centroid(i, j, k),
                                   image_w, image_h, &u, &v, &depth))
            continue;
          double px = sample.camera.intrinsics.m[0] * spec.resolution / depth;
          int64_t hs = std::max<int64_t>(1, static_cast<int64_t>(px / 2.0));
          Splat sp;
          sp.x0 = std::max<int64_t>(0, static_cast<int64_t>(u) - hs);
          sp.x1 = std::min<int64_t>(image_w - 1, static_cast<int64_t>(u) + hs);
          sp.y0 = std::max<int64_t>(0, static_cast<int64_t>(v) - hs);
          sp.y1 = std::min<int64_t>(image_h - 1, static_cast<int64_t>(v) + hs);
          sp.depth = depth;
          const auto& col = space.colors[label];
          for (int c = 0; c < 3; ++c) sp.color[c] = col[c] / 255.0 + jit[c];
          splats.push_back(sp);
        }
    for (size_t si = 0; si < splats.size(); ++si) {
      const Splat& sp = splats[si];
      for (int64_t y = sp.y0; y <= sp.y1; ++y)
        for (int64_t x = sp.x0; x <= sp.x1; ++x) {
          size_t at = static_cast<size_t>(y * image_w + x);
          if (sp.depth < zbuf[at]) {
            zbuf[at] = sp.depth;
            owner[at] = static_cast<int>(si);
          }
        }
    }
    for (int64_t y = 0; y < image_h; ++y)
      for (int64_t x = 0; x < image_w; ++x) {
        size_t at = static_cast<size_t>(y * image_w + x);
        if (owner[at] < 0) continue;
        const Splat& sp = splats[static_cast<size_t>(owner[at])];
        for (int c = 0; c < 3; ++c)
          img[(c * image_h + y) * image_w + x] = sp.color[c];
      }
    sample.images.push_back(
        Tensor::from_data({3, image_h, image_w}, std::move(img)));

    // Observability carving. A voxel is observed when its center ray either
    // terminates at that voxel (first surface hit) or escapes the scene
    // without hitting any surface (known-free air). Occluded voxels and free
    // space in front of a surface are unobserved and masked out of losses
    // and metrics, like unobserved regions in scanned ground truth.
    geom::Projection proj =
        geom::project_voxels(spec, sample.camera, image_w, image_h);
    std::vector<double> first_hit(static_cast<size_t>(image_h * image_w),
                                  HUGE_VAL);
    for (int64_t v = 0; v < gt.numel(); ++v) {
      if (gt.labels[v] == 0 || !proj.valid[v]) continue;
      int64_t px = static_cast<int64_t>(proj.u[v]);
      int64_t py = static_cast<int64_t>(proj.v[v]);
      double& slot = first_hit[static_cast<size_t>(py * image_w + px)];
      slot = std::min(slot, proj.depth[v]);
    }
    double depth_tol = 0.5 * spec.resolution;
    for (int64_t v = 0; v < gt.numel(); ++v) {
      if (!proj.valid[v]) {
        gt.valid[v] = 0;
        continue;
      }
      int64_t px = static_cast<int64_t>(proj.u[v]);
      int64_t py = static_cast<int64_t>(proj.v[v]);
      double hit = first_hit[static_cast<size_t>(py * image_w + px)];
      if (gt.labels[v] != 0) {
        gt.valid[v] = proj.depth[v] <= hit + depth_tol ? 1 : 0;
      } else {
        // Known-free air, thinned on a deterministic lattice so the desk-
        // scale class balance stays workable for the uniform-weight loss.
        gt.valid[v] = (hit == HUGE_VAL && v % 3 == 0) ? 1 : 0;
      }
    }

    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace hd2::dataio
