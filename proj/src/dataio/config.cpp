#include <fstream>
#include <sstream>

#include "hd2/dataio.hpp"

namespace hd2 {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (grid_h < 1 || grid_w < 1 || grid_z < 1)
    fail("grid.h/grid.w/grid.z must be >= 1");
  if (!(resolution > 0.0)) fail("grid.resolution must be > 0");
  if (c2d < 1) fail("model.c2d must be >= 1");
  if (c3d < 1) fail("model.c3d must be >= 1");
  if (d_exp < 1) fail("model.d_exp must be >= 1");
  if (n_query < d_exp)
    fail("model.n_query must be >= model.d_exp (one point per cluster)");
  if (k_critical < 1) fail("model.k_critical must be >= 1");
  if (k_critical > voxel_count())
    fail("model.k_critical exceeds the voxel count");
  if (lambda_orth < 0) fail("loss.lambda_orth must be >= 0");
  if (w_decouple < 0) fail("loss.w_decouple must be >= 0");
  if (w_critical < 0) fail("loss.w_critical must be >= 0");
  if (!(lr > 0)) fail("train.lr must be > 0");
  if (weight_decay < 0) fail("train.weight_decay must be >= 0");
  if (epochs < 0) fail("train.epochs must be >= 0");
  if (k_nn < 1 || k_nn >= n_query) fail("k_nn must satisfy 1 <= k_nn < n_query");
  if (num_classes < 2) fail("num_classes must be >= 2");
}

}  // namespace hd2

namespace hd2::dataio {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
  size_t used = 0;
  int64_t v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size())
    throw ConfigError("key '" + key + "' expects an integer, got '" + value + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& value) {
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size())
    throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "' expects a boolean, got '" + value + "'");
}

}  // namespace

ModelConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);

  ModelConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.empty())
      throw ConfigError("key '" + key + "' is missing a value");

    if (key == "grid.h") cfg.grid_h = parse_int(key, value);
    else if (key == "grid.w") cfg.grid_w = parse_int(key, value);
    else if (key == "grid.z") cfg.grid_z = parse_int(key, value);
    else if (key == "grid.resolution") cfg.resolution = parse_real(key, value);
    else if (key == "model.c2d") cfg.c2d = parse_int(key, value);
    else if (key == "model.c3d") cfg.c3d = parse_int(key, value);
    else if (key == "model.d_exp") cfg.d_exp = parse_int(key, value);
    else if (key == "model.n_query") cfg.n_query = parse_int(key, value);
    else if (key == "model.k_critical") cfg.k_critical = parse_int(key, value);
    else if (key == "loss.lambda_orth") cfg.lambda_orth = parse_real(key, value);
    else if (key == "loss.w_decouple") cfg.w_decouple = parse_real(key, value);
    else if (key == "loss.w_critical") cfg.w_critical = parse_real(key, value);
    else if (key == "train.lr") cfg.lr = parse_real(key, value);
    else if (key == "train.weight_decay") cfg.weight_decay = parse_real(key, value);
    else if (key == "train.epochs") cfg.epochs = parse_int(key, value);
    else if (key == "train.seed")
      cfg.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "hsd.slice_level_sim") cfg.slice_level_sim = parse_bool(key, value);
    else if (key == "hor.kl_topk_only") cfg.kl_topk_only = parse_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

}  // namespace hd2::dataio
