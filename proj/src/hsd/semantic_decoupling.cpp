#include "hd2/semantic_decoupling.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace hd2::hsd {

using namespace diffcore;

namespace {

// vec[r] broadcast over the columns of an [R,C] matrix.
Tensor broadcast_rows(const Tensor& vec, int64_t rows, int64_t cols) {
  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) idx->push_back(r);
  return gather(vec, idx, {rows, cols});
}

Tensor row_norms_squared(const Tensor& mat) {
  return sum_axis(mul(mat, mat), 1);
}

// Rows scaled to unit length; throws on an exactly zero row.
Tensor normalize_rows_strict(const Tensor& mat, const char* what) {
  Tensor n2 = row_norms_squared(mat);
  for (double v : n2.data_vec())
    if (v == 0.0) throw DomainError(std::string(what) + ": zero row cannot be normalized");
  Tensor inv = reciprocal(sqrt_elem(n2));
  return mul(mat, broadcast_rows(inv, mat.shape()[0], mat.shape()[1]));
}

// Rows with norm below 1e-12 come out as zero vectors (cosine 0 everywhere).
Tensor normalize_rows_safe(const Tensor& mat) {
  Tensor n2 = clamp(row_norms_squared(mat), 1e-24, HUGE_VAL);
  Tensor inv = reciprocal(sqrt_elem(n2));
  return mul(mat, broadcast_rows(inv, mat.shape()[0], mat.shape()[1]));
}

}  // namespace

ExpansionLayer make_expansion_layer(int64_t c2d, int64_t d_exp,
                                    diffcore::Rng& rng,
                                    const std::string& name_prefix) {
  if (d_exp < 1) throw ConfigError("expansion factor must be >= 1");
  ExpansionLayer layer;
  layer.d_exp = d_exp;
  layer.c2d = c2d;
  layer.weight = make_param(name_prefix + ".weight", {d_exp * c2d, c2d}, c2d, rng);
  layer.bias = make_param(name_prefix + ".bias", {d_exp * c2d}, c2d, rng);
  return layer;
}

PseudoVolume dim_expand(const Tensor& f_cam, const ExpansionLayer& layer) {
  if (f_cam.rank() != 3)
    throw ShapeError("dim_expand expects [C,H,W] features");
  if (f_cam.shape()[0] != layer.c2d)
    throw ShapeError("dim_expand channel mismatch: features have " +
                     std::to_string(f_cam.shape()[0]) + ", layer expects " +
                     std::to_string(layer.c2d));
  int64_t c = layer.c2d, h = f_cam.shape()[1], w = f_cam.shape()[2];
  int64_t dc = layer.d_exp * c;
  Tensor fmat = reshape(f_cam, {c, h * w});
  Tensor out = matmul(layer.weight.value, fmat);  // [d*c, h*w]
  out = add(out, broadcast_rows(layer.bias.value, dc, h * w));
  return PseudoVolume{reshape(out, {layer.d_exp, c, h, w})};
}

Tensor orthogonal_loss(const ExpansionLayer& layer, double lambda) {
  if (lambda < 0.0) throw DomainError("orthogonal loss weight must be >= 0");
  const Tensor& w = layer.weight.value;
  Tensor wn = normalize_rows_strict(w, "orthogonal_loss");
  Tensor gram = matmul(wn, wn, false, true);
  int64_t r = w.shape()[0];
  std::vector<double> eye(static_cast<size_t>(r * r), 0.0);
  for (int64_t i = 0; i < r; ++i) eye[i * r + i] = 1.0;
  Tensor diff = sub(gram, Tensor::from_data({r, r}, std::move(eye)));
  return scale(mean_all(abs_val(diff)), lambda);
}

Tensor collect_global_semantics(const PixelQuerySet& queries,
                                const PseudoVolume& volume) {
  if (!volume.slices.defined() || volume.slices.rank() != 4)
    throw ShapeError("collect_global_semantics expects a [D,C,H,W] volume");
  int64_t d = volume.d_exp(), c = volume.channels();
  int64_t hw = volume.slices.shape()[2] * volume.slices.shape()[3];
  // [D,C,HW] -> [D,HW,C] -> [D*HW, C]
  Tensor keys = reshape(permute(reshape(volume.slices, {d, c, hw}), {0, 2, 1}),
                        {d * hw, c});
  return scaled_dot_attention(queries.queries.value, keys, keys);
}

ClusterSet dpc_knn_cluster(const Tensor& points, int64_t d_exp, int64_t k_nn) {
  if (points.rank() != 2) throw ShapeError("dpc_knn_cluster expects [N,C]");
  int64_t n = points.shape()[0];
  int64_t c = points.shape()[1];
  if (n < d_exp)
    throw DomainError("dpc_knn_cluster needs at least one point per cluster");
  if (k_nn < 1 || k_nn >= n)
    throw DomainError("dpc_knn_cluster needs 1 <= k_nn < n_points");

  const double* p = points.data();
  auto d2 = [&](int64_t i, int64_t j) {
    double acc = 0.0;
    for (int64_t l = 0; l < c; ++l) {
      double diff = p[i * c + l] - p[j * c + l];
      acc += diff * diff;
    }
    return acc;
  };

  // rho_i = exp(-mean squared distance to the k_nn nearest neighbors).
  std::vector<double> rho(n);
  std::vector<std::vector<double>> dist(n, std::vector<double>(n));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) dist[i][j] = d2(i, j);
  for (int64_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, int64_t>> others;
    others.reserve(n - 1);
    for (int64_t j = 0; j < n; ++j)
      if (j != i) others.emplace_back(dist[i][j], j);
    std::sort(others.begin(), others.end());
    double mean = 0.0;
    for (int64_t k = 0; k < k_nn; ++k) mean += others[k].first;
    mean /= static_cast<double>(k_nn);
    rho[i] = std::exp(-mean);
  }

  double max_pair = 0.0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j)
      max_pair = std::max(max_pair, dist[i][j]);
  max_pair = std::sqrt(max_pair);

  // delta_i: distance to the nearest strictly denser point; density peaks
  // (nothing strictly denser) get the maximum pairwise distance.
  std::vector<double> delta(n);
  for (int64_t i = 0; i < n; ++i) {
    double best = HUGE_VAL;
    for (int64_t j = 0; j < n; ++j)
      if (rho[j] > rho[i]) best = std::min(best, dist[i][j]);
    delta[i] = best == HUGE_VAL ? max_pair : std::sqrt(best);
  }

  // Centers: largest gamma = rho * delta, ties to the lowest index.
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> gamma(n);
  for (int64_t i = 0; i < n; ++i) gamma[i] = rho[i] * delta[i];
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (gamma[a] != gamma[b]) return gamma[a] > gamma[b];
    return a < b;
  });
  std::vector<int> centers(order.begin(), order.begin() + d_exp);
  std::vector<int> cluster_of_center(n, -1);
  for (int64_t ci = 0; ci < d_exp; ++ci) cluster_of_center[centers[ci]] = ci;

  // Standard density-peaks chain: walk points by decreasing density (index
  // breaks ties); non-centers inherit the label of the nearest earlier point.
  std::vector<int64_t> by_density(n);
  std::iota(by_density.begin(), by_density.end(), 0);
  std::sort(by_density.begin(), by_density.end(), [&](int64_t a, int64_t b) {
    if (rho[a] != rho[b]) return rho[a] > rho[b];
    return a < b;
  });
  std::vector<int> assignment(n, -1);
  for (int64_t pos = 0; pos < n; ++pos) {
    int64_t i = by_density[pos];
    if (cluster_of_center[i] >= 0) {
      assignment[i] = cluster_of_center[i];
      continue;
    }
    int64_t best = -1;
    double best_d = HUGE_VAL;
    for (int64_t q = 0; q < pos; ++q) {
      int64_t j = by_density[q];
      if (dist[i][j] < best_d || (dist[i][j] == best_d && j < best)) {
        best_d = dist[i][j];
        best = j;
      }
    }
    if (best < 0)
      throw InternalError("density chain starts at a non-center point");
    assignment[i] = assignment[best];
  }

  // Differentiable centroids: mean of members through a constant selector.
  std::vector<int64_t> count(d_exp, 0);
  for (int a : assignment) ++count[a];
  std::vector<double> sel(static_cast<size_t>(d_exp * n), 0.0);
  for (int64_t i = 0; i < n; ++i)
    sel[assignment[i] * n + i] = 1.0 / static_cast<double>(count[assignment[i]]);
  Tensor centroids = matmul(Tensor::from_data({d_exp, n}, std::move(sel)), points);

  double objective = 0.0;
  const double* cent = centroids.data();
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t l = 0; l < c; ++l) {
      double diff = p[i * c + l] - cent[assignment[i] * c + l];
      acc += diff * diff;
    }
    objective += acc;
  }

  ClusterSet out;
  out.centroids = std::move(centroids);
  out.assignment = std::move(assignment);
  out.centers = std::move(centers);
  out.density = std::move(rho);
  out.separation = std::move(delta);
  out.kmeans_objective = objective;
  return out;
}

Tensor decoupling_loss(const ClusterSet& clusters) {
  const Tensor& c = clusters.centroids;
  Tensor cn = normalize_rows_strict(c, "decoupling_loss");
  Tensor gram = matmul(cn, cn, false, true);
  int64_t d = c.shape()[0];
  std::vector<double> mask(static_cast<size_t>(d * d), 0.0);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = i + 1; j < d; ++j) mask[i * d + j] = 1.0;
  return sum_all(mul(gram, Tensor::from_data({d, d}, std::move(mask))));
}

Tensor semantic_aggregate(const PseudoVolume& volume, const ClusterSet& clusters,
                          bool slice_level_sim) {
  int64_t d = volume.d_exp(), c = volume.channels();
  if (clusters.centroids.shape()[1] != c)
    throw ShapeError("centroid width does not match slice channels");
  int64_t h = volume.slices.shape()[2], w = volume.slices.shape()[3];
  int64_t hw = h * w;

  Tensor slices = reshape(volume.slices, {d, c, hw});
  Tensor cent_n = normalize_rows_safe(clusters.centroids);  // [d, c]

  Tensor weights;  // flattened weight field, and its broadcast index map
  auto widx = std::make_shared<std::vector<int64_t>>();
  widx->reserve(static_cast<size_t>(d * c * hw));
  if (slice_level_sim) {
    // One scalar per slice from its spatial mean feature.
    Tensor means = scale(sum_axis(slices, 2), 1.0 / static_cast<double>(hw));
    Tensor cos = matmul(normalize_rows_safe(means), cent_n, false, true);
    weights = max_axis(cos, 1);  // [d]
    for (int64_t dd = 0; dd < d; ++dd)
      for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t s = 0; s < hw; ++s) widx->push_back(dd);
  } else {
    // One weight per location: best cosine between the local feature column
    // and any centroid.
    Tensor feats = reshape(permute(slices, {0, 2, 1}), {d * hw, c});
    Tensor cos = matmul(normalize_rows_safe(feats), cent_n, false, true);
    weights = max_axis(cos, 1);  // [d*hw]
    for (int64_t dd = 0; dd < d; ++dd)
      for (int64_t cc = 0; cc < c; ++cc)
        for (int64_t s = 0; s < hw; ++s) widx->push_back(dd * hw + s);
  }
  Tensor wfield = gather(weights, widx, {d, c, hw});
  Tensor agg = sum_axis(mul(slices, wfield), 0);  // [c, hw]
  return reshape(agg, {c, h, w});
}

}  // namespace hd2::hsd
