#include <cmath>
#include <thread>

#include "hd2/model.hpp"

namespace hd2::pipe {

using namespace diffcore;

namespace {

// Adaptive moments with decoupled weight decay.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, size_t n_params)
      : lr_(lr), wd_(weight_decay), m_(n_params), v_(n_params) {}

  void step(const std::vector<Parameter*>& params) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Tensor& val = params[pi]->value;
      const auto& g = val.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      if (m.empty()) {
        m.assign(g.size(), 0.0);
        v.assign(g.size(), 0.0);
      }
      double* w = val.data();
      for (size_t i = 0; i < g.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
      }
    }
  }

 private:
  double lr_, wd_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace

TrainResult train(Model& model, const std::vector<dataio::SceneSample>& dataset,
                  const TrainOptions& opts) {
  if (dataset.empty()) throw DataError("training dataset is empty");
  const ModelConfig& cfg = model.config();

  std::vector<geom::Projection> projections;
  projections.reserve(dataset.size());
  for (const auto& s : dataset) projections.push_back(model.project(s.camera));

  std::vector<Parameter*> params = model.trainable_parameters();
  AdamW opt(cfg.lr, cfg.weight_decay, params.size());
  std::vector<bool> saw_grad(params.size(), false);

  TrainResult result;
  int64_t step_cap = opts.max_steps >= 0
                         ? opts.max_steps
                         : cfg.epochs * static_cast<int64_t>(dataset.size());
  bool stop = false;
  for (int64_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    LossReport epoch_sum;
    int64_t epoch_steps = 0;
    for (size_t si = 0; si < dataset.size() && !stop; ++si) {
      if (result.steps >= step_cap) {
        stop = true;
        break;
      }
      ForwardResult fr = model.forward(dataset[si], &projections[si]);
      TotalLoss loss = total_loss(fr, dataset[si], cfg);
      if (!std::isfinite(loss.report.total))
        throw NumericError("training diverged: non-finite loss at step " +
                           std::to_string(result.steps));
      loss.total.backward();
      for (size_t pi = 0; pi < params.size(); ++pi) {
        if (saw_grad[pi]) continue;
        for (double g : params[pi]->value.grad())
          if (g != 0.0) {
            saw_grad[pi] = true;
            break;
          }
      }
      opt.step(params);
      ++result.steps;
      ++epoch_steps;

      epoch_sum.total += loss.report.total;
      epoch_sum.ce += loss.report.ce;
      epoch_sum.bce_of += loss.report.bce_of;
      epoch_sum.bce_fb += loss.report.bce_fb;
      epoch_sum.orth += loss.report.orth;
      epoch_sum.decouple += loss.report.decouple;
      epoch_sum.critical += loss.report.critical;
    }
    if (epoch_steps > 0) {
      double inv = 1.0 / static_cast<double>(epoch_steps);
      epoch_sum.total *= inv;
      epoch_sum.ce *= inv;
      epoch_sum.bce_of *= inv;
      epoch_sum.bce_fb *= inv;
      epoch_sum.orth *= inv;
      epoch_sum.decouple *= inv;
      epoch_sum.critical *= inv;
      result.per_epoch.push_back(epoch_sum);
    }

    if (!stop && opts.eval_every > 0 && (epoch + 1) % opts.eval_every == 0 &&
        (opts.stop_miou >= 0 || opts.stop_sc_iou >= 0)) {
      metrics::ConfusionMatrix cm = evaluate(model, dataset);
      double miou = metrics::semantic_miou(cm).miou;
      double sc = metrics::scene_iou(cm);
      if (miou >= opts.stop_miou && sc >= opts.stop_sc_iou) stop = true;
    }
  }

  metrics::ConfusionMatrix cm = evaluate(model, dataset);
  result.final_miou = metrics::semantic_miou(cm).miou;
  result.final_sc_iou = metrics::scene_iou(cm);
  for (size_t pi = 0; pi < params.size(); ++pi)
    if (!saw_grad[pi] && result.steps > 0)
      result.silent_params.push_back(params[pi]->name);
  return result;
}

metrics::ConfusionMatrix evaluate(const Model& model,
                                  const std::vector<dataio::SceneSample>& dataset,
                                  int workers) {
  if (workers < 1) throw ConfigError("worker count must be >= 1");
  size_t n = dataset.size();
  std::vector<metrics::ConfusionMatrix> partial(
      n, metrics::ConfusionMatrix(model.config().num_classes));

  auto run_range = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      VoxelGrid pred = model.predict(dataset[i]);
      metrics::accumulate(pred, dataset[i].gt, partial[i]);
    }
  };

  if (workers == 1 || n <= 1) {
    run_range(0, n);
  } else {
    size_t w = std::min<size_t>(workers, n);
    std::vector<std::thread> threads;
    size_t chunk = (n + w - 1) / w;
    for (size_t t = 0; t < w; ++t) {
      size_t begin = t * chunk;
      size_t end = std::min(n, begin + chunk);
      if (begin < end) threads.emplace_back(run_range, begin, end);
    }
    for (auto& t : threads) t.join();
  }

  // Sample-order merge keeps results identical for every worker count.
  metrics::ConfusionMatrix total(model.config().num_classes);
  for (const auto& cm : partial) total.merge(cm);
  return total;
}

}  // namespace hd2::pipe
