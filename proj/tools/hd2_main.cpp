#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "hd2/dataio.hpp"
#include "hd2/gradcheck.hpp"
#include "hd2/model.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace hd2;
using nlohmann::json;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

int log_level() {
  const char* env = std::getenv("HD2_LOG");
  std::string v = env ? env : "info";
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[hd2] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << "[hd2:debug] " << msg << "\n";
}

ModelConfig load_config(const std::string& path) {
  if (path.empty()) return ModelConfig{};
  return dataio::parse_config(path);
}

json config_snapshot(const ModelConfig& c) {
  return json{{"grid.h", c.grid_h},
              {"grid.w", c.grid_w},
              {"grid.z", c.grid_z},
              {"grid.resolution", c.resolution},
              {"model.c2d", c.c2d},
              {"model.c3d", c.c3d},
              {"model.d_exp", c.d_exp},
              {"model.n_query", c.n_query},
              {"model.k_critical", c.k_critical},
              {"loss.lambda_orth", c.lambda_orth},
              {"loss.w_decouple", c.w_decouple},
              {"loss.w_critical", c.w_critical},
              {"train.lr", c.lr},
              {"train.weight_decay", c.weight_decay},
              {"train.epochs", c.epochs},
              {"train.seed", c.seed},
              {"hsd.slice_level_sim", c.slice_level_sim},
              {"hor.kl_topk_only", c.kl_topk_only}};
}

// Wall-clock stamps are opt-in (HD2_MANIFEST_CLOCK=1); the default keeps
// command outputs byte-identical across reruns.
std::string timestamp() {
  const char* env = std::getenv("HD2_MANIFEST_CLOCK");
  if (!env || std::string(env) != "1") return "0";
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

void write_manifest(const std::string& path, const std::string& command,
                    const ModelConfig& cfg, const std::string& started,
                    const std::vector<std::string>& outputs) {
  json m{{"artifact_version", kArtifactVersion},
         {"command", command},
         {"seed", cfg.seed},
         {"config", config_snapshot(cfg)},
         {"started", started},
         {"finished", timestamp()},
         {"outputs", outputs}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << m.dump(2) << "\n";
}

geom::VoxelGridSpec grid_of(const ModelConfig& cfg) {
  geom::VoxelGridSpec spec;
  spec.h = cfg.grid_h;
  spec.w = cfg.grid_w;
  spec.z = cfg.grid_z;
  spec.resolution = cfg.resolution;
  spec.origin = {0.0, -0.5 * cfg.grid_w * cfg.resolution, 0.0};
  return spec;
}

std::string loss_csv(const std::vector<pipe::LossReport>& reports) {
  std::string out = "epoch,total,ce,bce_of,bce_fb,orth,decouple,critical\n";
  char buf[256];
  for (size_t e = 0; e < reports.size(); ++e) {
    const auto& r = reports[e];
    std::snprintf(buf, sizeof(buf),
                  "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e, r.total, r.ce,
                  r.bce_of, r.bce_fb, r.orth, r.decouple, r.critical);
    out += buf;
  }
  return out;
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << body;
}

// ---- subcommand bodies ------------------------------------------------------

int run_gen(const std::string& config, const std::string& out, int64_t count) {
  std::string started = timestamp();
  ModelConfig cfg = load_config(config);
  auto samples = dataio::generate_synthetic(
      cfg.seed, count, grid_of(cfg), synthetic_label_space(), cfg.image_w,
      cfg.image_h);
  dataio::save_dataset(samples, out);
  std::vector<std::string> outputs;
  for (size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03zu", i);
    outputs.push_back(name);
  }
  write_manifest(out + "/manifest.json", "gen", cfg, started, outputs);
  log_info("generated " + std::to_string(samples.size()) + " scenes into " + out);
  return 0;
}

int run_train(const std::string& config, const std::string& data,
              const std::string& out) {
  std::string started = timestamp();
  ModelConfig cfg = load_config(config);
  auto dataset = dataio::load_dataset(data);
  log_info("training on " + std::to_string(dataset.size()) + " scenes, " +
           std::to_string(cfg.epochs) + " epochs");
  pipe::Model model(cfg);
  pipe::TrainResult result = pipe::train(model, dataset);

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  pipe::save_checkpoint(model, out + "/checkpoint.hd2c");
  write_text(out + "/loss.csv", loss_csv(result.per_epoch));
  metrics::ConfusionMatrix cm = pipe::evaluate(model, dataset);
  write_text(out + "/metrics.csv",
             metrics::metrics_csv(cm, synthetic_label_space()));
  write_manifest(out + "/manifest.json", "train", cfg, started,
                 {"checkpoint.hd2c", "loss.csv", "metrics.csv"});
  char buf[128];
  std::snprintf(buf, sizeof(buf), "final mIoU %.4f, SC IoU %.4f after %lld steps",
                result.final_miou, result.final_sc_iou,
                static_cast<long long>(result.steps));
  log_info(buf);
  return 0;
}

int run_eval(const std::string& config, const std::string& checkpoint,
             const std::string& data, const std::string& report, int workers,
             bool oracle) {
  std::string started = timestamp();
  ModelConfig cfg = load_config(config);
  auto dataset = dataio::load_dataset(data);

  metrics::ConfusionMatrix cm(cfg.num_classes);
  if (oracle) {
    for (const auto& s : dataset) metrics::accumulate(s.gt, s.gt, cm);
  } else {
    pipe::Model model(cfg);
    pipe::load_checkpoint(model, checkpoint);
    cm = pipe::evaluate(model, dataset, workers);
  }
  write_text(report, metrics::metrics_csv(cm, synthetic_label_space()));
  write_manifest(report + ".manifest.json", "eval", cfg, started, {report});
  log_info("wrote " + report);
  return 0;
}

struct GradRow {
  std::string name;
  double err;
};

int run_gradcheck(const std::string& config, bool corrupt) {
  ModelConfig cfg = load_config(config);
  // Reduced probe widths keep the finite-difference sweep within budget;
  // the grid is fixed at 8x8x4.
  ModelConfig probe = cfg;
  probe.grid_h = 8;
  probe.grid_w = 8;
  probe.grid_z = 4;
  probe.c2d = 8;
  probe.c3d = 6;
  probe.n_query = 6;
  probe.k_nn = 2;
  probe.k_critical = 16;
  probe.image_w = 16;
  probe.image_h = 16;
  probe.refine_hidden = 6;

  pipe::Model model(probe);
  auto data = dataio::generate_synthetic(probe.seed, 1, grid_of(probe),
                                         synthetic_label_space(), probe.image_w,
                                         probe.image_h);
  const dataio::SceneSample& sample = data[0];
  geom::Projection proj = model.project(sample.camera);

  auto full = [&]() { return model.forward(sample, &proj); };

  std::vector<GradRow> rows;
  auto check = [&](const std::string& name, const std::function<diffcore::Tensor()>& f,
                   const std::vector<diffcore::Parameter*>& params) {
    try {
      double err = diffcore::grad_check(f, params, 1e-5, corrupt);
      rows.push_back({name, err});
    } catch (const NumericError& e) {
      std::cout << name << ",nan,FAIL\n";
      std::cerr << "gradcheck: non-finite probe in loss '" << name
                << "': " << e.what() << "\n";
      std::exit(3);
    }
  };

  std::vector<diffcore::Parameter*> all = model.parameters();
  std::vector<diffcore::Parameter*> hsd_params{
      &model.encoder.conv1_w, &model.encoder.conv1_b, &model.encoder.conv2_w,
      &model.encoder.conv2_b, &model.expansion.weight, &model.expansion.bias,
      &model.pixel_queries.queries};
  std::vector<diffcore::Parameter*> detect_params = hsd_params;
  detect_params.insert(detect_params.end(),
                       {&model.voxel_conv_w, &model.voxel_conv_b,
                        &model.voxel_queries.queries, &model.binary_head.w_feat,
                        &model.binary_head.w_ctx, &model.binary_head.bias});
  std::vector<diffcore::Parameter*> sem_params = detect_params;
  sem_params.insert(sem_params.end(),
                    {&model.class_head.w_feat, &model.class_head.w_ctx,
                     &model.class_head.bias});

  check("orth",
        [&]() { return hsd::orthogonal_loss(model.expansion, probe.lambda_orth); },
        {&model.expansion.weight});
  check("decouple",
        [&]() {
          auto h = model.run_hsd(model.encode(sample.images[0]));
          return hsd::decoupling_loss(h.clusters);
        },
        hsd_params);
  check("critical",
        [&]() { return full().critical_loss; }, sem_params);

  // Supervised components, rebuilt as standalone scalars.
  auto gt_indices = [&]() {
    const VoxelGrid& gt = sample.gt;
    int64_t n = gt.numel();
    auto picks = std::make_shared<std::vector<int64_t>>();
    auto valid = std::make_shared<std::vector<int64_t>>();
    auto occupied = std::make_shared<std::vector<int64_t>>();
    for (int64_t v = 0; v < n; ++v) {
      if (!gt.valid[v] || gt.labels[v] == kInvalidLabel) continue;
      picks->push_back(static_cast<int64_t>(gt.labels[v]) * n + v);
      valid->push_back(v);
      if (gt.labels[v] != 0) occupied->push_back(v);
    }
    return std::make_tuple(picks, valid, occupied);
  };
  auto [picks, valid_idx, occupied_idx] = gt_indices();
  int64_t n = sample.gt.numel();

  check("ce",
        [&]() {
          pipe::ForwardResult fr = full();
          using namespace diffcore;
          Tensor probs = clamp(
              softmax(reshape(fr.refined, {probe.num_classes, n}), 0), 1e-12, 1.0);
          Tensor chosen = gather(log_elem(probs), picks,
                                 {static_cast<int64_t>(picks->size())});
          return scale(sum_all(chosen),
                       -1.0 / static_cast<double>(picks->size()));
        },
        all);
  auto bce_over = [&](bool foreground) {
    return [&, foreground]() {
      using namespace diffcore;
      pipe::ForwardResult fr = full();
      auto idx = foreground ? occupied_idx : valid_idx;
      Tensor field = reshape(foreground ? fr.maps.fore_back : fr.maps.occ_free,
                             {n});
      Tensor s = sigmoid(gather(field, idx, {static_cast<int64_t>(idx->size())}));
      std::vector<double> t(idx->size()), tc(idx->size());
      for (size_t i = 0; i < idx->size(); ++i) {
        int64_t v = (*idx)[i];
        double target = foreground ? (sample.foreground_mask[v] ? 1.0 : 0.0)
                                   : (sample.gt.labels[v] != 0 ? 1.0 : 0.0);
        t[i] = target;
        tc[i] = 1.0 - target;
      }
      int64_t m = static_cast<int64_t>(idx->size());
      Tensor pos = log_elem(clamp(s, 1e-12, 1.0));
      Tensor negp = log_elem(clamp(add_scalar(neg(s), 1.0), 1e-12, 1.0));
      Tensor ll = add(mul(Tensor::from_data({m}, t), pos),
                      mul(Tensor::from_data({m}, tc), negp));
      return scale(sum_all(ll), -1.0 / static_cast<double>(m));
    };
  };
  check("bce_of", bce_over(false), detect_params);
  check("bce_fb", bce_over(true), detect_params);
  check("total",
        [&]() { return pipe::total_loss(full(), sample, probe).total; }, all);

  bool ok = true;
  std::cout << "loss,max_rel_err,status\n";
  for (const auto& row : rows) {
    bool pass = row.err < 1e-5;
    ok = ok && pass;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s,%.3e,%s\n", row.name.c_str(), row.err,
                  pass ? "PASS" : "FAIL");
    std::cout << buf;
  }
  return ok ? 0 : 3;
}

int run_export(const std::string& config, const std::string& checkpoint,
               const std::string& data, const std::string& out,
               const std::string& format) {
  std::string started = timestamp();
  ModelConfig cfg = load_config(config);
  auto dataset = dataio::load_dataset(data);
  pipe::Model model(cfg);
  pipe::load_checkpoint(model, checkpoint);
  LabelSpace space = synthetic_label_space();

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());

  geom::VoxelGridSpec spec = grid_of(cfg);
  std::vector<std::string> outputs;
  for (size_t i = 0; i < dataset.size(); ++i) {
    VoxelGrid pred = model.predict(dataset[i]);
    char name[48];
    if (format == "sscv") {
      std::snprintf(name, sizeof(name), "pred_%03zu.sscv", i);
      dataio::write_sscv(pred, out + "/" + name);
    } else {
      // Point list: one colored cube center per occupied predicted voxel.
      std::snprintf(name, sizeof(name), "pred_%03zu.ply", i);
      std::string body;
      char line[160];
      for (int64_t ii = 0; ii < pred.h; ++ii)
        for (int64_t jj = 0; jj < pred.w; ++jj)
          for (int64_t kk = 0; kk < pred.z; ++kk) {
            uint16_t label = pred.labels[pred.linear(ii, jj, kk)];
            if (label == 0) continue;
            geom::Vec3 c = spec.centroid(ii, jj, kk);
            const auto& col = space.colors[label];
            std::snprintf(line, sizeof(line), "%.6f %.6f %.6f %d %d %d\n", c.x,
                          c.y, c.z, col[0], col[1], col[2]);
            body += line;
          }
      write_text(out + "/" + name, body);
    }
    outputs.push_back(name);
  }
  write_manifest(out + "/manifest.json", "export", cfg, started, outputs);
  log_info("exported " + std::to_string(outputs.size()) + " predictions");
  return 0;
}

int run_sweep(const std::string& config, const std::string& data,
              const std::string& out) {
  std::string started = timestamp();
  ModelConfig base = load_config(config);
  auto dataset = dataio::load_dataset(data);

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());

  std::string csv = "d_exp,steps,final_total,final_miou,final_sc_iou\n";
  for (int64_t d : {1, 2, 4, 8}) {
    ModelConfig cfg = base;
    cfg.d_exp = d;
    if (cfg.n_query < d) cfg.n_query = d;
    pipe::Model model(cfg);
    pipe::TrainResult r = pipe::train(model, dataset);
    double final_total =
        r.per_epoch.empty() ? 0.0 : r.per_epoch.back().total;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.9g,%.6f,%.6f\n",
                  static_cast<long long>(d), static_cast<long long>(r.steps),
                  final_total, r.final_miou, r.final_sc_iou);
    csv += buf;
    log_info("sweep d_exp=" + std::to_string(d) + " done");
  }
  write_text(out + "/sweep.csv", csv);
  write_manifest(out + "/manifest.json", "sweep", base, started, {"sweep.csv"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"camera-based semantic scene completion, desk scale"};
  app.require_subcommand(1);

  std::string config, data, out, checkpoint, report, format = "sscv";
  int64_t count = 0;
  int workers = 1;
  bool oracle = false, corrupt = false;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--config", config, "config file");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--count", count, "number of scenes")->required();

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config, "config file");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--config", config, "config file");
  eval->add_option("--checkpoint", checkpoint, "checkpoint path");
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--report", report, "metrics CSV path")->required();
  eval->add_option("--workers", workers, "evaluation worker threads");
  eval->add_flag("--oracle", oracle, "score the ground truth against itself");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit");
  gradcheck->add_option("--config", config, "config file");
  gradcheck->add_flag("--corrupt-analytic", corrupt,
                      "negative control: perturb one analytic gradient");

  CLI::App* exp = app.add_subcommand("export", "export predictions");
  exp->add_option("--config", config, "config file");
  exp->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  exp->add_option("--data", data, "dataset directory")->required();
  exp->add_option("--out", out, "output directory")->required();
  exp->add_option("--format", format, "sscv|ply");

  CLI::App* sweep = app.add_subcommand("sweep", "expansion-dimension sweep");
  sweep->add_option("--config", config, "config file");
  sweep->add_option("--data", data, "dataset directory")->required();
  sweep->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      if (count < 1) {
        std::cerr << "gen: --count must be >= 1\n";
        return 1;
      }
      return run_gen(config, out, count);
    }
    if (train->parsed()) return run_train(config, data, out);
    if (eval->parsed()) {
      if (!oracle && checkpoint.empty()) {
        std::cerr << "eval: --checkpoint is required unless --oracle is set\n";
        return 1;
      }
      if (workers < 1) {
        std::cerr << "eval: --workers must be >= 1\n";
        return 1;
      }
      return run_eval(config, checkpoint, data, report, workers, oracle);
    }
    if (gradcheck->parsed()) return run_gradcheck(config, corrupt);
    if (exp->parsed()) {
      if (format != "sscv" && format != "ply") {
        std::cerr << "export: unknown format '" << format << "'\n";
        return 1;
      }
      return run_export(config, checkpoint, data, out, format);
    }
    if (sweep->parsed()) return run_sweep(config, data, out);
  } catch (const NumericError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
