#include "hd2/model.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>

namespace hd2::pipe {

using namespace diffcore;

Model::Model(const ModelConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      enc_plan1_(make_conv2d_plan(3, cfg.image_h, cfg.image_w, 3, 3, 2, 1)),
      enc_plan2_(make_conv2d_plan(cfg.c2d, cfg.image_h / 2, cfg.image_w / 2, 3,
                                  3, 2, 1)),
      voxel_plan_(make_conv3d_plan(cfg.c2d, cfg.grid_h, cfg.grid_w, cfg.grid_z,
                                   3, 1, 1)) {
  if (cfg.image_h % 4 != 0 || cfg.image_w % 4 != 0)
    throw ConfigError("image dimensions must be divisible by 4");

  Rng rng(cfg.seed);
  encoder.conv1_w = make_param("enc.conv1.weight", {cfg.c2d, 3, 3, 3}, 3 * 9, rng);
  encoder.conv1_b = make_param("enc.conv1.bias", {cfg.c2d}, 3 * 9, rng);
  encoder.conv2_w =
      make_param("enc.conv2.weight", {cfg.c2d, cfg.c2d, 3, 3}, cfg.c2d * 9, rng);
  encoder.conv2_b = make_param("enc.conv2.bias", {cfg.c2d}, cfg.c2d * 9, rng);

  expansion = hsd::make_expansion_layer(cfg.c2d, cfg.d_exp, rng, "hsd.de");
  pixel_queries.queries =
      make_param("hsd.q_pixel", {cfg.n_query, cfg.c2d}, cfg.c2d, rng);

  voxel_conv_w = make_param("view.conv3d.weight",
                            {cfg.c3d, cfg.c2d, 3, 3, 3}, cfg.c2d * 27, rng);
  voxel_conv_b = make_param("view.conv3d.bias", {cfg.c3d}, cfg.c2d * 27, rng);

  voxel_queries.queries =
      make_param("hor.q_voxel", {cfg.n_query, cfg.c3d}, cfg.c3d, rng);
  binary_head = hor::make_head(cfg.c3d, 2, "hor.bc", rng);
  class_head = hor::make_head(cfg.c3d, cfg.num_classes, "hor.cc", rng);
  refine_mlp = hor::make_refine_mlp(cfg.c3d, cfg.refine_hidden,
                                    cfg.num_classes, "hor.refine", rng);
}

geom::VoxelGridSpec Model::grid_spec() const {
  geom::VoxelGridSpec spec;
  spec.h = cfg_.grid_h;
  spec.w = cfg_.grid_w;
  spec.z = cfg_.grid_z;
  spec.resolution = cfg_.resolution;
  // Grid starts at the world origin, centered laterally.
  spec.origin = {0.0, -0.5 * cfg_.grid_w * cfg_.resolution, 0.0};
  return spec;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> ps{
      &encoder.conv1_w, &encoder.conv1_b, &encoder.conv2_w, &encoder.conv2_b,
      &expansion.weight, &expansion.bias, &pixel_queries.queries,
      &voxel_conv_w, &voxel_conv_b, &voxel_queries.queries,
      &binary_head.w_feat, &binary_head.w_ctx, &binary_head.bias,
      &class_head.w_feat, &class_head.w_ctx, &class_head.bias,
      &refine_mlp.w1, &refine_mlp.b1, &refine_mlp.w2, &refine_mlp.b2};
  std::set<std::string> names;
  for (Parameter* p : ps)
    if (!names.insert(p->name).second)
      throw InternalError("duplicate parameter name " + p->name);
  return ps;
}

std::vector<Parameter*> Model::trainable_parameters() {
  std::vector<Parameter*> ps = parameters();
  if (cfg_.freeze_refine) {
    std::erase_if(ps, [](Parameter* p) {
      return p->name == "hor.refine.w2" || p->name == "hor.refine.b2";
    });
  }
  return ps;
}

Tensor Model::encode(const Tensor& image) const {
  if (image.rank() != 3 || image.shape()[0] != 3 ||
      image.shape()[1] != cfg_.image_h || image.shape()[2] != cfg_.image_w)
    throw ShapeError("encoder expects a [3," + std::to_string(cfg_.image_h) +
                     "," + std::to_string(cfg_.image_w) + "] image");
  Tensor h1 = relu(conv2d(image, encoder.conv1_w.value, encoder.conv1_b.value,
                          enc_plan1_));
  return relu(conv2d(h1, encoder.conv2_w.value, encoder.conv2_b.value,
                     enc_plan2_));
}

Model::HsdOut Model::run_hsd(const Tensor& f_cam) const {
  HsdOut out;
  out.volume = hsd::dim_expand(f_cam, expansion);
  Tensor collected = hsd::collect_global_semantics(pixel_queries, out.volume);
  out.clusters = hsd::dpc_knn_cluster(collected, cfg_.d_exp, cfg_.k_nn);
  out.aggregated =
      hsd::semantic_aggregate(out.volume, out.clusters, cfg_.slice_level_sim);
  return out;
}

Tensor Model::view_transform(const Tensor& f_agg,
                             const geom::Projection& proj) const {
  double factor = static_cast<double>(cfg_.image_w) /
                  static_cast<double>(f_agg.shape()[2]);
  Tensor sampled = geom::sample_image_features(f_agg, proj, factor);
  return conv3d(sampled, voxel_conv_w.value, voxel_conv_b.value, voxel_plan_);
}

geom::Projection Model::project(const geom::CameraModel& cam) const {
  return geom::project_voxels(grid_spec(), cam, cfg_.image_w, cfg_.image_h);
}

ForwardResult Model::forward(const dataio::SceneSample& sample,
                             const geom::Projection* proj) const {
  if (sample.images.empty()) throw DataError("sample has no image");
  geom::Projection local;
  if (!proj) {
    local = project(sample.camera);
    proj = &local;
  }

  ForwardResult fr;
  Tensor f_cam = encode(sample.images[0]);
  HsdOut hsd_out = run_hsd(f_cam);
  fr.clusters = hsd_out.clusters;
  fr.orth_loss = hsd::orthogonal_loss(expansion, cfg_.lambda_orth);
  fr.decouple_loss = hsd::decoupling_loss(hsd_out.clusters);

  Tensor f_voxel = view_transform(hsd_out.aggregated, *proj);
  fr.maps = hor::binary_heads(f_voxel, voxel_queries, binary_head);
  fr.initial =
      hor::classwise_head(f_voxel, voxel_queries, class_head, cfg_.num_classes);
  fr.v_geo = hor::geometric_critical(fr.maps, cfg_.k_critical);
  fr.v_sem = hor::semantic_critical(fr.initial, cfg_.k_critical);

  if (cfg_.kl_topk_only) {
    std::vector<int64_t> uni = fr.v_geo.indices;
    uni.insert(uni.end(), fr.v_sem.indices.begin(), fr.v_sem.indices.end());
    std::sort(uni.begin(), uni.end());
    uni.erase(std::unique(uni.begin(), uni.end()), uni.end());
    fr.critical_loss = hor::critical_alignment_loss(fr.maps, fr.initial, &uni);
  } else {
    fr.critical_loss = hor::critical_alignment_loss(fr.maps, fr.initial);
  }

  fr.refined =
      hor::refine(fr.initial, f_voxel, fr.maps, fr.v_geo, fr.v_sem, refine_mlp);
  return fr;
}

VoxelGrid Model::predict(const dataio::SceneSample& sample,
                         const geom::Projection* proj) const {
  NoGradGuard no_grad;
  ForwardResult fr = forward(sample, proj);
  VoxelGrid out = VoxelGrid::empty(cfg_.grid_h, cfg_.grid_w, cfg_.grid_z);
  int64_t n = out.numel();
  const double* logits = fr.refined.data();
  for (int64_t v = 0; v < n; ++v) {
    int64_t best = 0;
    double bv = logits[v];
    for (int64_t c = 1; c < cfg_.num_classes; ++c)
      if (logits[c * n + v] > bv) {
        bv = logits[c * n + v];
        best = c;
      }
    out.labels[v] = static_cast<uint16_t>(best);
  }
  return out;
}

namespace {

// -mean over picked log-probabilities; picks index into the flattened
// class-major logit matrix.
Tensor picked_nll(const Tensor& logits_cs, std::shared_ptr<std::vector<int64_t>> picks) {
  Tensor probs = clamp(softmax(logits_cs, 0), 1e-12, 1.0);
  int64_t n = static_cast<int64_t>(picks->size());
  Tensor chosen = gather(log_elem(probs), picks, {n});
  return scale(sum_all(chosen), -1.0 / static_cast<double>(n));
}

// Binary cross-entropy with logits over a gathered voxel subset.
Tensor masked_bce(const Tensor& field_flat,
                  std::shared_ptr<std::vector<int64_t>> idx,
                  const std::vector<double>& targets) {
  int64_t n = static_cast<int64_t>(idx->size());
  Tensor s = sigmoid(gather(field_flat, idx, {n}));
  Tensor pos = log_elem(clamp(s, 1e-12, 1.0));
  Tensor negp = log_elem(clamp(add_scalar(neg(s), 1.0), 1e-12, 1.0));
  Tensor t = Tensor::from_data({n}, targets);
  Tensor tc = Tensor::from_data({n}, [&] {
    std::vector<double> inv(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) inv[i] = 1.0 - targets[i];
    return inv;
  }());
  Tensor ll = add(mul(t, pos), mul(tc, negp));
  return scale(sum_all(ll), -1.0 / static_cast<double>(n));
}

}  // namespace

TotalLoss total_loss(const ForwardResult& fr, const dataio::SceneSample& sample,
                     const ModelConfig& cfg) {
  const VoxelGrid& gt = sample.gt;
  int64_t n = gt.numel();
  if (fr.refined.numel() != cfg.num_classes * n)
    throw ShapeError("logits do not match the ground-truth grid");

  auto ce_picks = std::make_shared<std::vector<int64_t>>();
  auto valid_idx = std::make_shared<std::vector<int64_t>>();
  std::vector<double> occ_targets;
  auto occupied_idx = std::make_shared<std::vector<int64_t>>();
  std::vector<double> fb_targets;
  for (int64_t v = 0; v < n; ++v) {
    if (!gt.valid[v] || gt.labels[v] == kInvalidLabel) continue;
    ce_picks->push_back(static_cast<int64_t>(gt.labels[v]) * n + v);
    valid_idx->push_back(v);
    occ_targets.push_back(gt.labels[v] != 0 ? 1.0 : 0.0);
    if (gt.labels[v] != 0) {
      occupied_idx->push_back(v);
      fb_targets.push_back(sample.foreground_mask[v] ? 1.0 : 0.0);
    }
  }
  if (valid_idx->empty())
    throw DomainError("no valid voxels to supervise");

  Tensor ce = picked_nll(reshape(fr.refined, {cfg.num_classes, n}), ce_picks);
  Tensor of_flat = reshape(fr.maps.occ_free, {n});
  Tensor fb_flat = reshape(fr.maps.fore_back, {n});
  Tensor bce_of = masked_bce(of_flat, valid_idx, occ_targets);
  Tensor bce_fb = occupied_idx->empty()
                      ? Tensor::scalar(0.0)
                      : masked_bce(fb_flat, occupied_idx, fb_targets);

  Tensor total = add(ce, bce_of);
  total = add(total, bce_fb);
  total = add(total, fr.orth_loss);
  total = add(total, scale(fr.decouple_loss, cfg.w_decouple));
  total = add(total, scale(fr.critical_loss, cfg.w_critical));

  TotalLoss out;
  out.total = total;
  out.report = LossReport{total.item(),
                          ce.item(),
                          bce_of.item(),
                          bce_fb.item(),
                          fr.orth_loss.item(),
                          fr.decouple_loss.item(),
                          fr.critical_loss.item()};
  return out;
}

Tensor upsample_logits(const Tensor& y, int factor) {
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  return upsample3d_nearest(y, factor);
}

}  // namespace hd2::pipe
