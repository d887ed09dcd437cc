#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hd2/config.hpp"
#include "hd2/dataio.hpp"
#include "hd2/geometry.hpp"
#include "hd2/metrics.hpp"
#include "hd2/occupancy_refine.hpp"
#include "hd2/semantic_decoupling.hpp"
#include "hd2/tensor.hpp"
#include "hd2/voxelgrid.hpp"

namespace hd2::pipe {

using diffcore::Parameter;
using diffcore::Tensor;

struct LossReport {
  double total = 0, ce = 0, bce_of = 0, bce_fb = 0, orth = 0, decouple = 0,
         critical = 0;
};

struct EncoderParams {
  Parameter conv1_w, conv1_b;  // 3 -> c2d, stride 2
  Parameter conv2_w, conv2_b;  // c2d -> c2d, stride 2
};

struct ForwardResult {
  Tensor refined;  // [N+1,H,W,Z]
  Tensor initial;  // [N+1,H,W,Z]
  hor::ScoreMaps maps;
  hor::CriticalSet v_geo, v_sem;
  Tensor orth_loss, decouple_loss, critical_loss;  // scalar graph tensors
  hsd::ClusterSet clusters;                        // diagnostics
};

// Encoder -> semantic decoupling -> view transform -> occupancy refinement.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  geom::VoxelGridSpec grid_spec() const;

  // Stable-ordered parameter list; names are unique.
  std::vector<Parameter*> parameters();
  // Same list minus the frozen refinement output layer when configured.
  std::vector<Parameter*> trainable_parameters();

  // Stage functions; forward() composes them.
  Tensor encode(const Tensor& image) const;
  struct HsdOut {
    hsd::PseudoVolume volume;
    hsd::ClusterSet clusters;
    Tensor aggregated;  // [c2d, H2d, W2d]
  };
  HsdOut run_hsd(const Tensor& f_cam) const;
  Tensor view_transform(const Tensor& f_agg, const geom::Projection& proj) const;

  ForwardResult forward(const dataio::SceneSample& sample,
                        const geom::Projection* proj = nullptr) const;

  // Cached projection for the model grid.
  geom::Projection project(const geom::CameraModel& cam) const;

  // Argmax class labels of refined logits; every voxel marked valid.
  VoxelGrid predict(const dataio::SceneSample& sample,
                    const geom::Projection* proj = nullptr) const;

  EncoderParams encoder;
  hsd::ExpansionLayer expansion;
  hsd::PixelQuerySet pixel_queries;
  Parameter voxel_conv_w, voxel_conv_b;  // 3x3x3, c2d -> c3d
  hor::VoxelQuerySet voxel_queries;
  hor::HeadParams binary_head;   // 2-way
  hor::HeadParams class_head;    // num_classes-way
  hor::RefineMlp refine_mlp;

 private:
  ModelConfig cfg_;
  diffcore::Conv2dPlan enc_plan1_, enc_plan2_;
  diffcore::Conv3dPlan voxel_plan_;
};

struct TotalLoss {
  Tensor total;  // scalar graph tensor
  LossReport report;
};

// ce over valid voxels of the refined logits, the two binary supervision
// terms, and the weighted auxiliary losses.
TotalLoss total_loss(const ForwardResult& fr, const dataio::SceneSample& sample,
                     const ModelConfig& cfg);

// Nearest-neighbor repetition of class logits along all three spatial axes.
Tensor upsample_logits(const Tensor& y, int factor);

struct TrainOptions {
  int64_t max_steps = -1;     // cap on optimizer steps; -1 = epochs * samples
  double stop_miou = -1.0;    // early stop once both targets are met
  double stop_sc_iou = -1.0;
  int64_t eval_every = 0;     // epochs between early-stop evaluations; 0 = never
};

struct TrainResult {
  std::vector<LossReport> per_epoch;
  int64_t steps = 0;
  double final_miou = 0.0;
  double final_sc_iou = 0.0;
  std::vector<std::string> silent_params;  // never saw a nonzero gradient
};

// Decoupled-weight-decay adaptive-moment descent, one sample per step, in
// fixed dataset order. Throws NumericError on a non-finite loss.
TrainResult train(Model& model, const std::vector<dataio::SceneSample>& dataset,
                  const TrainOptions& opts = {});

// Confusion accumulation over a dataset; workers > 1 splits samples across
// threads and merges in sample order, so output is identical for any count.
metrics::ConfusionMatrix evaluate(const Model& model,
                                  const std::vector<dataio::SceneSample>& dataset,
                                  int workers = 1);

// ---- checkpoints -----------------------------------------------------------
// magic "HD2C", u16 version, u32 count, then per parameter: u16 name length,
// name bytes, u8 rank, u32 dims, f64 little-endian values.
void save_checkpoint(Model& model, const std::string& path);
// Shape/name mismatches raise DataError.
void load_checkpoint(Model& model, const std::string& path);

}  // namespace hd2::pipe
