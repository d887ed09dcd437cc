#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "hd2/dataio.hpp"

namespace hd2::dataio {

namespace fs = std::filesystem;

void save_sample(const SceneSample& sample, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());

  write_sscv(sample.gt, dir + "/gt.sscv");

  VoxelGrid fg;
  fg.h = sample.gt.h;
  fg.w = sample.gt.w;
  fg.z = sample.gt.z;
  fg.labels.assign(sample.foreground_mask.begin(), sample.foreground_mask.end());
  fg.valid.assign(static_cast<size_t>(fg.numel()), 1);
  write_sscv(fg, dir + "/fg.sscv");

  write_camera(sample.camera, dir + "/camera.txt");
  for (size_t i = 0; i < sample.images.size(); ++i)
    write_tensor(sample.images[i], dir + "/image_" + std::to_string(i) + ".t64");
}

SceneSample load_sample(const std::string& dir) {
  SceneSample s;
  s.gt = read_sscv(dir + "/gt.sscv");
  VoxelGrid fg = read_sscv(dir + "/fg.sscv");
  if (fg.numel() != s.gt.numel())
    throw DataError("foreground mask grid does not match gt in " + dir);
  s.foreground_mask.assign(fg.labels.begin(), fg.labels.end());
  s.camera = read_camera(dir + "/camera.txt");
  for (size_t i = 0;; ++i) {
    std::string path = dir + "/image_" + std::to_string(i) + ".t64";
    if (!fs::exists(path)) break;
    s.images.push_back(read_tensor(path));
  }
  if (s.images.empty()) throw DataError("no image tensors in " + dir);
  return s;
}

void save_dataset(const std::vector<SceneSample>& samples,
                  const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample_%03zu", i);
    save_sample(samples[i], dir + "/" + name);
  }
}

std::vector<SceneSample> load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename().string().rfind("sample_", 0) == 0)
      dirs.push_back(e.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("no sample_* directories under " + dir);
  std::vector<SceneSample> out;
  out.reserve(dirs.size());
  for (const std::string& d : dirs) out.push_back(load_sample(d));
  return out;
}

}  // namespace hd2::dataio
