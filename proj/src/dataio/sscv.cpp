#include <cstdio>
#include <fstream>

#include "bytes.hpp"
#include "hd2/dataio.hpp"

namespace hd2::dataio {

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path,
                      const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

namespace {
constexpr uint16_t kSscvVersion = 1;
constexpr int64_t kMaxDim = 0xffffffffLL;
}  // namespace

void write_sscv(const VoxelGrid& grid, const std::string& path) {
  if (grid.h > kMaxDim || grid.w > kMaxDim || grid.z > kMaxDim)
    throw DataError("grid dimensions do not fit in 32 bits");
  int64_t n = grid.numel();
  if (static_cast<int64_t>(grid.labels.size()) != n ||
      static_cast<int64_t>(grid.valid.size()) != n)
    throw DataError("grid buffers do not match dimensions");

  std::vector<uint8_t> out;
  out.reserve(static_cast<size_t>(18 + n * 2 + (n + 7) / 8));
  out.insert(out.end(), {'S', 'S', 'C', 'V'});
  put_u16(out, kSscvVersion);
  put_u32(out, static_cast<uint32_t>(grid.h));
  put_u32(out, static_cast<uint32_t>(grid.w));
  put_u32(out, static_cast<uint32_t>(grid.z));
  for (uint16_t l : grid.labels) put_u16(out, l);
  for (int64_t v = 0; v < n; v += 8) {
    uint8_t byte = 0;
    for (int b = 0; b < 8 && v + b < n; ++b)
      if (grid.valid[v + b]) byte |= static_cast<uint8_t>(0x80 >> b);
    out.push_back(byte);
  }
  write_file_bytes(path, out);
}

VoxelGrid read_sscv(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  ByteReader r{bytes};
  r.need(4, "sscv magic");
  if (!(bytes[0] == 'S' && bytes[1] == 'S' && bytes[2] == 'C' && bytes[3] == 'V'))
    throw FormatError("bad magic in " + path);
  r.pos = 4;
  uint16_t version = r.u16("sscv version");
  if (version != kSscvVersion)
    throw FormatError("unknown sscv version " + std::to_string(version));

  VoxelGrid g;
  g.h = r.u32("sscv dims");
  g.w = r.u32("sscv dims");
  g.z = r.u32("sscv dims");
  // Dimension cap keeps the element count far from overflow before any
  // allocation happens.
  if (g.h > (1 << 20) || g.w > (1 << 20) || g.z > (1 << 20))
    throw FormatError("sscv dimensions out of range");
  int64_t n = g.numel();
  size_t expect = static_cast<size_t>(n) * 2 + static_cast<size_t>((n + 7) / 8);
  if (r.remaining() != expect)
    throw LengthError("sscv payload: expected " + std::to_string(expect) +
                      " bytes, got " + std::to_string(r.remaining()));
  g.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) g.labels[i] = r.u16("sscv labels");
  g.valid.assign(static_cast<size_t>(n), 0);
  for (int64_t v = 0; v < n; v += 8) {
    uint8_t byte = r.u8("sscv mask");
    for (int b = 0; b < 8 && v + b < n; ++b)
      g.valid[v + b] = (byte & (0x80 >> b)) ? 1 : 0;
  }
  return g;
}

void write_tensor(const diffcore::Tensor& t, const std::string& path) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'H', 'D', '2', 'T'});
  out.push_back(static_cast<uint8_t>(t.rank()));
  for (int64_t d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
  for (double v : t.data_vec()) put_f64(out, v);
  write_file_bytes(path, out);
}

diffcore::Tensor read_tensor(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  ByteReader r{bytes};
  r.need(4, "tensor magic");
  if (!(bytes[0] == 'H' && bytes[1] == 'D' && bytes[2] == '2' && bytes[3] == 'T'))
    throw FormatError("bad magic in " + path);
  r.pos = 4;
  int rank = r.u8("tensor rank");
  diffcore::Shape shape(rank);
  for (int i = 0; i < rank; ++i) shape[i] = r.u32("tensor dims");
  int64_t n = diffcore::shape_numel(shape);
  if (r.remaining() != static_cast<size_t>(n) * 8)
    throw LengthError("tensor payload: expected " + std::to_string(n * 8) +
                      " bytes, got " + std::to_string(r.remaining()));
  std::vector<double> data(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) data[i] = r.f64("tensor data");
  return diffcore::Tensor::from_data(std::move(shape), std::move(data));
}

void write_camera(const geom::CameraModel& cam, const std::string& path) {
  std::string out;
  char buf[64];
  auto row = [&](const char* tag, const double* v, int n) {
    out += tag;
    for (int i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof(buf), " %.17g", v[i]);
      out += buf;
    }
    out += "\n";
  };
  row("K", cam.intrinsics.m.data(), 9);
  row("R", cam.rotation.m.data(), 9);
  double t[3] = {cam.translation.x, cam.translation.y, cam.translation.z};
  row("t", t, 3);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << out;
}

geom::CameraModel read_camera(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  geom::CameraModel cam;
  std::string tag;
  auto read_nums = [&](double* v, int n) {
    for (int i = 0; i < n; ++i)
      if (!(f >> v[i])) throw FormatError("truncated camera file " + path);
  };
  bool have_k = false, have_r = false, have_t = false;
  while (f >> tag) {
    if (tag == "K") {
      read_nums(cam.intrinsics.m.data(), 9);
      have_k = true;
    } else if (tag == "R") {
      read_nums(cam.rotation.m.data(), 9);
      have_r = true;
    } else if (tag == "t") {
      double t[3];
      read_nums(t, 3);
      cam.translation = {t[0], t[1], t[2]};
      have_t = true;
    } else {
      throw FormatError("unexpected token '" + tag + "' in " + path);
    }
  }
  if (!have_k || !have_r || !have_t)
    throw FormatError("camera file " + path + " is missing K, R or t");
  cam.validate();
  return cam;
}

}  // namespace hd2::dataio
