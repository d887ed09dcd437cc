#include "hd2/occupancy_refine.hpp"

#include <algorithm>
#include <memory>
#include <numeric>

namespace hd2::hor {

using namespace diffcore;

namespace {

Tensor broadcast_cols(const Tensor& vec, int64_t rows, int64_t cols) {
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) idx->push_back(c);
  return gather(vec, idx, {rows, cols});
}

// [C,H,W,Z] -> [H*W*Z, C]
Tensor voxel_rows(const Tensor& f_voxel) {
  if (f_voxel.rank() != 4)
    throw ShapeError("voxel features must be [C,H,W,Z]");
  int64_t c = f_voxel.shape()[0];
  int64_t s = f_voxel.numel() / c;
  return permute(reshape(f_voxel, {c, s}), {1, 0});
}

// Shared head scheme: per-voxel logits from [f_v ; pooled context].
Tensor head_logits(const Tensor& f_voxel, const VoxelQuerySet& queries,
                   const HeadParams& head) {
  int64_t c3d = f_voxel.shape()[0];
  if (queries.queries.value.shape()[1] != c3d)
    throw ShapeError("voxel query width does not match feature channels");
  if (head.w_feat.value.shape()[0] != c3d)
    throw ShapeError("head width does not match feature channels");

  Tensor feats = voxel_rows(f_voxel);  // [S, C]
  Tensor attended =
      scaled_dot_attention(queries.queries.value, feats, feats);  // [Nq, C]
  int64_t nq = attended.shape()[0];
  Tensor ctx = scale(sum_axis(attended, 0), 1.0 / static_cast<double>(nq));

  int64_t k_out = head.w_feat.value.shape()[1];
  int64_t s = feats.shape()[0];
  Tensor per_voxel = matmul(feats, head.w_feat.value);              // [S, K]
  Tensor from_ctx = matmul(reshape(ctx, {1, c3d}), head.w_ctx.value);  // [1, K]
  Tensor out = add(per_voxel, broadcast_cols(reshape(from_ctx, {k_out}), s, k_out));
  return add(out, broadcast_cols(head.bias.value, s, k_out));
}

std::vector<int64_t> top_k_indices(const std::vector<double>& scores, int64_t k,
                                   const char* what) {
  if (k <= 0) throw ConfigError(std::string(what) + ": k must be >= 1");
  if (k > static_cast<int64_t>(scores.size()))
    throw ConfigError(std::string(what) + ": k exceeds the voxel count");
  std::vector<int64_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  order.resize(k);
  return order;
}

}  // namespace

HeadParams make_head(int64_t c3d, int64_t k_out, const std::string& prefix,
                     diffcore::Rng& rng) {
  HeadParams h;
  // Fan-in counts both the voxel feature and the context vector.
  h.w_feat = make_param(prefix + ".w_feat", {c3d, k_out}, 2 * c3d, rng);
  h.w_ctx = make_param(prefix + ".w_ctx", {c3d, k_out}, 2 * c3d, rng);
  h.bias = make_param(prefix + ".bias", {k_out}, 2 * c3d, rng);
  return h;
}

RefineMlp make_refine_mlp(int64_t c3d, int64_t hidden, int64_t classes,
                          const std::string& prefix, diffcore::Rng& rng) {
  RefineMlp m;
  m.w1 = make_param(prefix + ".w1", {c3d + 2, hidden}, c3d + 2, rng);
  m.b1 = make_param(prefix + ".b1", {hidden}, c3d + 2, rng);
  m.w2 = make_param_zero(prefix + ".w2", {hidden, classes});
  m.b2 = make_param_zero(prefix + ".b2", {classes});
  return m;
}

ScoreMaps binary_heads(const Tensor& f_voxel, const VoxelQuerySet& queries,
                       const HeadParams& head) {
  if (head.w_feat.value.shape()[1] != 2)
    throw ShapeError("binary head must emit two logits per voxel");
  Tensor logits = head_logits(f_voxel, queries, head);  // [S, 2]
  int64_t s = logits.shape()[0];
  Shape grid{f_voxel.shape()[1], f_voxel.shape()[2], f_voxel.shape()[3]};
  auto col = [&](int64_t c) {
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(s);
    for (int64_t i = 0; i < s; ++i) idx->push_back(i * 2 + c);
    return gather(logits, idx, grid);
  };
  return ScoreMaps{col(0), col(1)};
}

Tensor classwise_head(const Tensor& f_voxel, const VoxelQuerySet& queries,
                      const HeadParams& head, int64_t n_classes) {
  if (n_classes < 2) throw ConfigError("classwise head needs >= 2 classes");
  if (head.w_feat.value.shape()[1] != n_classes)
    throw ShapeError("classwise head width does not match class count");
  Tensor logits = head_logits(f_voxel, queries, head);     // [S, N+1]
  Tensor by_class = permute(logits, {1, 0});               // [N+1, S]
  return reshape(by_class, {n_classes, f_voxel.shape()[1], f_voxel.shape()[2],
                            f_voxel.shape()[3]});
}

CriticalSet geometric_critical(const ScoreMaps& maps, int64_t k) {
  if (maps.occ_free.shape() != maps.fore_back.shape())
    throw ShapeError("score maps disagree in shape");
  int64_t n = maps.occ_free.numel();
  std::vector<double> scores(static_cast<size_t>(n));
  const double* of = maps.occ_free.data();
  const double* fb = maps.fore_back.data();
  for (int64_t i = 0; i < n; ++i) scores[i] = of[i] + fb[i];

  CriticalSet out;
  out.kind = CriticalKind::geometric;
  out.indices = top_k_indices(scores, k, "geometric_critical");
  out.scores.reserve(out.indices.size());
  for (int64_t i : out.indices) out.scores.push_back(scores[i]);
  return out;
}

CriticalSet semantic_critical(const Tensor& y_init, int64_t k) {
  if (y_init.rank() != 4)
    throw ShapeError("semantic_critical expects [N+1,H,W,Z] logits");
  int64_t classes = y_init.shape()[0];
  int64_t n = y_init.numel() / classes;
  std::vector<double> conf(static_cast<size_t>(n));
  const double* p = y_init.data();
  for (int64_t v = 0; v < n; ++v) {
    double best = p[v];
    for (int64_t c = 1; c < classes; ++c) best = std::max(best, p[c * n + v]);
    conf[v] = best;
  }

  CriticalSet out;
  out.kind = CriticalKind::semantic;
  out.indices = top_k_indices(conf, k, "semantic_critical");
  out.scores.reserve(out.indices.size());
  for (int64_t i : out.indices) out.scores.push_back(conf[i]);
  return out;
}

namespace {

// Geometric density field and semantic confidence field, flattened [S].
Tensor geo_field(const ScoreMaps& maps) {
  int64_t n = maps.occ_free.numel();
  return reshape(add(maps.occ_free, maps.fore_back), {n});
}

Tensor sem_field(const Tensor& y_init) {
  int64_t classes = y_init.shape()[0];
  int64_t n = y_init.numel() / classes;
  return max_axis(reshape(y_init, {classes, n}), 0);
}

}  // namespace

Tensor critical_alignment_loss(const ScoreMaps& maps, const Tensor& y_init,
                               const std::vector<int64_t>* subset) {
  if (maps.occ_free.numel() * y_init.shape()[0] != y_init.numel())
    throw ShapeError("score maps and class logits cover different grids");
  Tensor geo = geo_field(maps);
  Tensor sem = sem_field(y_init);
  if (subset) {
    if (subset->empty())
      throw ConfigError("critical_alignment_loss: empty voxel subset");
    auto idx = std::make_shared<std::vector<int64_t>>(*subset);
    int64_t m = static_cast<int64_t>(idx->size());
    geo = gather(geo, idx, {m});
    sem = gather(sem, idx, {m});
  }
  Tensor p_geo = softmax(geo, 0);
  Tensor p_sem = softmax(sem, 0);
  return add(kl_divergence(p_geo, p_sem), kl_divergence(p_sem, p_geo));
}

Tensor refine(const Tensor& y_init, const Tensor& f_voxel,
              const ScoreMaps& maps, const CriticalSet& v_geo,
              const CriticalSet& v_sem, const RefineMlp& mlp) {
  int64_t classes = y_init.shape()[0];
  int64_t n = y_init.numel() / classes;
  int64_t c3d = f_voxel.shape()[0];

  std::vector<int64_t> uni;
  uni.reserve(v_geo.indices.size() + v_sem.indices.size());
  uni.insert(uni.end(), v_geo.indices.begin(), v_geo.indices.end());
  uni.insert(uni.end(), v_sem.indices.begin(), v_sem.indices.end());
  std::sort(uni.begin(), uni.end());
  uni.erase(std::unique(uni.begin(), uni.end()), uni.end());
  for (int64_t v : uni)
    if (v < 0 || v >= n)
      throw InternalError("critical voxel index " + std::to_string(v) +
                          " outside grid of " + std::to_string(n));
  int64_t u = static_cast<int64_t>(uni.size());

  Tensor feats = voxel_rows(f_voxel);  // [S, C]
  auto fidx = std::make_shared<std::vector<int64_t>>();
  fidx->reserve(static_cast<size_t>(u * c3d));
  for (int64_t i = 0; i < u; ++i)
    for (int64_t c = 0; c < c3d; ++c) fidx->push_back(uni[i] * c3d + c);
  Tensor crit_feats = gather(feats, fidx, {u, c3d});

  auto vidx = std::make_shared<std::vector<int64_t>>(uni);
  Tensor geo_col = reshape(gather(geo_field(maps), vidx, {u}), {u, 1});
  Tensor sem_col = reshape(gather(sem_field(y_init), vidx, {u}), {u, 1});

  Tensor x = concat_cols({crit_feats, geo_col, sem_col});  // [U, C+2]
  Tensor hidden = add(matmul(x, mlp.w1.value),
                      broadcast_cols(mlp.b1.value, u, mlp.b1.value.numel()));
  hidden = relu(hidden);
  Tensor res = add(matmul(hidden, mlp.w2.value),
                   broadcast_cols(mlp.b2.value, u, classes));  // [U, N+1]

  auto tgt = std::make_shared<std::vector<int64_t>>();
  tgt->reserve(static_cast<size_t>(u * classes));
  for (int64_t i = 0; i < u; ++i)
    for (int64_t c = 0; c < classes; ++c) tgt->push_back(c * n + uni[i]);
  return scatter_add(y_init, tgt, reshape(res, {u * classes}));
}

}  // namespace hd2::hor
