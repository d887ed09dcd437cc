#include <fstream>
#include <sstream>

#include "bytes.hpp"
#include "hd2/dataio.hpp"

namespace hd2::dataio {

namespace {
constexpr int64_t kH = 256, kW = 256, kZ = 32;
constexpr int64_t kVoxels = kH * kW * kZ;
}  // namespace

ClassMap load_class_map(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open class map " + path);
  ClassMap map;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream is(line);
    long raw, mapped;
    if (!(is >> raw)) continue;  // blank/comment line
    if (!(is >> mapped) || raw < 0 || raw > 0xffff || mapped < 0 || mapped > 0xffff)
      throw FormatError("class map " + path + " line " +
                        std::to_string(line_no) + ": expected 'raw mapped'");
    map.remap[static_cast<uint16_t>(raw)] = static_cast<uint16_t>(mapped);
  }
  return map;
}

ClassMap identity_class_map(int64_t num_classes) {
  ClassMap map;
  for (int64_t c = 0; c < num_classes; ++c)
    map.remap[static_cast<uint16_t>(c)] = static_cast<uint16_t>(c);
  map.remap[kInvalidLabel] = kInvalidLabel;
  return map;
}

VoxelGrid read_semantickitti_voxels(const std::string& dir,
                                    const std::string& frame_id,
                                    const ClassMap& map) {
  std::string label_path = dir + "/" + frame_id + ".label";
  std::string invalid_path = dir + "/" + frame_id + ".invalid";

  std::vector<uint8_t> labels = read_file_bytes(label_path);
  if (static_cast<int64_t>(labels.size()) != kVoxels * 2)
    throw LengthError(label_path + ": expected " + std::to_string(kVoxels * 2) +
                      " bytes, got " + std::to_string(labels.size()));
  std::vector<uint8_t> invalid = read_file_bytes(invalid_path);
  if (static_cast<int64_t>(invalid.size()) != (kVoxels + 7) / 8)
    throw LengthError(invalid_path + ": expected " +
                      std::to_string((kVoxels + 7) / 8) + " bytes, got " +
                      std::to_string(invalid.size()));

  VoxelGrid g;
  g.h = kH;
  g.w = kW;
  g.z = kZ;
  g.labels.resize(static_cast<size_t>(kVoxels));
  g.valid.resize(static_cast<size_t>(kVoxels));
  for (int64_t v = 0; v < kVoxels; ++v) {
    uint16_t raw =
        static_cast<uint16_t>(labels[v * 2] | (labels[v * 2 + 1] << 8));
    auto it = map.remap.find(raw);
    if (it == map.remap.end())
      throw DataError("unmapped raw label " + std::to_string(raw) +
                      " at voxel " + std::to_string(v));
    g.labels[v] = it->second;
    g.valid[v] = (invalid[v / 8] & (0x80 >> (v % 8))) ? 0 : 1;
  }
  return g;
}

}  // namespace hd2::dataio
