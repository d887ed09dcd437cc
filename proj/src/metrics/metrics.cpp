#include "hd2/metrics.hpp"

#include <cstdio>

namespace hd2 {

LabelSpace synthetic_label_space() {
  LabelSpace s;
  s.names = {"empty", "road", "building", "car", "person", "vegetation"};
  s.foreground = {3, 4};
  s.colors = {{{0, 0, 0}},
              {{255, 0, 255}},
              {{255, 200, 0}},
              {{91, 155, 213}},
              {{255, 30, 30}},
              {{0, 175, 0}}};
  return s;
}

LabelSpace semantickitti_label_space() {
  LabelSpace s;
  s.names = {"empty",      "car",        "bicycle",     "motorcycle",
             "truck",      "other-vehicle", "person",   "bicyclist",
             "motorcyclist", "road",     "parking",     "sidewalk",
             "other-ground", "building", "fence",       "vegetation",
             "trunk",      "terrain",    "pole",        "traffic-sign"};
  s.foreground = {1, 2, 3, 4, 5, 6, 7, 8};
  s.colors = {{{0, 0, 0}},      {{91, 155, 213}}, {{100, 230, 245}},
              {{30, 60, 150}},  {{80, 30, 180}},  {{0, 0, 255}},
              {{255, 30, 30}},  {{255, 37, 199}}, {{150, 30, 90}},
              {{255, 0, 255}},  {{255, 150, 255}}, {{75, 0, 75}},
              {{175, 0, 75}},   {{255, 200, 0}},  {{255, 120, 50}},
              {{0, 175, 0}},    {{135, 60, 0}},   {{150, 240, 80}},
              {{255, 240, 150}}, {{255, 0, 0}}};
  return s;
}

}  // namespace hd2

namespace hd2::metrics {

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_classes != n_classes)
    throw DataError("merging confusion matrices of different class counts");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  valid_total += other.valid_total;
}

void accumulate(const VoxelGrid& pred, const VoxelGrid& gt,
                ConfusionMatrix& cm) {
  if (pred.h != gt.h || pred.w != gt.w || pred.z != gt.z)
    throw DataError("prediction and ground-truth grids disagree in shape");
  int64_t n = gt.numel();
  for (int64_t v = 0; v < n; ++v) {
    if (!gt.valid[v] || gt.labels[v] == kInvalidLabel) continue;
    int64_t g = gt.labels[v];
    int64_t p = pred.labels[v];
    if (g >= cm.n_classes)
      throw DataError("ground-truth label " + std::to_string(g) +
                      " out of range at voxel " + std::to_string(v));
    if (p >= cm.n_classes || pred.labels[v] == kInvalidLabel)
      throw DataError("predicted label " + std::to_string(p) +
                      " out of range at voxel " + std::to_string(v));
    ++cm.at(g, p);
    ++cm.valid_total;
  }
}

double scene_iou(const ConfusionMatrix& cm) {
  int64_t tp = 0, fp = 0, fn = 0;
  for (int64_t g = 0; g < cm.n_classes; ++g)
    for (int64_t p = 0; p < cm.n_classes; ++p) {
      int64_t c = cm.at(g, p);
      if (g != 0 && p != 0) tp += c;
      else if (g == 0 && p != 0) fp += c;
      else if (g != 0 && p == 0) fn += c;
    }
  int64_t denom = tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

MiouResult semantic_miou(const ConfusionMatrix& cm) {
  MiouResult r;
  int64_t n = cm.n_classes;
  r.per_class.assign(static_cast<size_t>(n - 1), 0.0);
  r.present.assign(static_cast<size_t>(n - 1), false);
  double sum = 0.0;
  int64_t included = 0;
  for (int64_t c = 1; c < n; ++c) {
    int64_t row = 0, col = 0;
    for (int64_t j = 0; j < n; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    int64_t inter = cm.at(c, c);
    int64_t uni = row + col - inter;
    if (uni == 0) continue;
    r.present[c - 1] = true;
    r.per_class[c - 1] = static_cast<double>(inter) / static_cast<double>(uni);
    sum += r.per_class[c - 1];
    ++included;
  }
  r.miou = included == 0 ? 0.0 : sum / static_cast<double>(included);
  return r;
}

std::string metrics_csv(const ConfusionMatrix& cm, const LabelSpace& space) {
  if (space.num_classes() != cm.n_classes)
    throw DataError("label space does not match confusion matrix");
  MiouResult m = semantic_miou(cm);
  std::string header = "sc_iou,miou";
  for (int64_t c = 1; c < space.num_classes(); ++c)
    header += "," + space.names[static_cast<size_t>(c)];

  char buf[64];
  std::string row;
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f", scene_iou(cm), m.miou);
  row += buf;
  for (int64_t c = 1; c < space.num_classes(); ++c) {
    row += ",";
    if (m.present[c - 1]) {
      std::snprintf(buf, sizeof(buf), "%.6f", m.per_class[c - 1]);
      row += buf;
    }
  }
  return header + "\n" + row + "\n";
}

}  // namespace hd2::metrics
