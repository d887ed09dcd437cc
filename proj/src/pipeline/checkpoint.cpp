#include "../dataio/bytes.hpp"
#include "hd2/model.hpp"

namespace hd2::pipe {

namespace {
constexpr uint16_t kCheckpointVersion = 1;
}

void save_checkpoint(Model& model, const std::string& path) {
  std::vector<diffcore::Parameter*> params = model.parameters();
  std::vector<uint8_t> out;
  out.insert(out.end(), {'H', 'D', '2', 'C'});
  dataio::put_u16(out, kCheckpointVersion);
  dataio::put_u32(out, static_cast<uint32_t>(params.size()));
  for (diffcore::Parameter* p : params) {
    dataio::put_u16(out, static_cast<uint16_t>(p->name.size()));
    out.insert(out.end(), p->name.begin(), p->name.end());
    out.push_back(static_cast<uint8_t>(p->value.rank()));
    for (int64_t d : p->value.shape())
      dataio::put_u32(out, static_cast<uint32_t>(d));
    for (double v : p->value.data_vec()) dataio::put_f64(out, v);
  }
  dataio::write_file_bytes(path, out);
}

void load_checkpoint(Model& model, const std::string& path) {
  std::vector<uint8_t> bytes = dataio::read_file_bytes(path);
  dataio::ByteReader r{bytes};
  r.need(4, "checkpoint magic");
  if (!(bytes[0] == 'H' && bytes[1] == 'D' && bytes[2] == '2' && bytes[3] == 'C'))
    throw FormatError("bad checkpoint magic in " + path);
  r.pos = 4;
  uint16_t version = r.u16("checkpoint version");
  if (version != kCheckpointVersion)
    throw FormatError("unknown checkpoint version " + std::to_string(version));

  std::vector<diffcore::Parameter*> params = model.parameters();
  uint32_t count = r.u32("checkpoint count");
  if (count != params.size())
    throw DataError("checkpoint holds " + std::to_string(count) +
                    " parameters, model has " + std::to_string(params.size()));

  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = r.u16("parameter name length");
    r.need(name_len, "parameter name");
    std::string name(bytes.begin() + r.pos, bytes.begin() + r.pos + name_len);
    r.pos += name_len;
    uint8_t rank = r.u8("parameter rank");
    diffcore::Shape shape(rank);
    for (int d = 0; d < rank; ++d) shape[d] = r.u32("parameter dims");

    diffcore::Parameter* target = nullptr;
    for (diffcore::Parameter* p : params)
      if (p->name == name) target = p;
    if (!target) throw DataError("checkpoint parameter '" + name +
                                 "' does not exist in the model");
    if (target->value.shape() != shape)
      throw DataError("checkpoint parameter '" + name + "' has shape " +
                      diffcore::shape_str(shape) + ", model expects " +
                      diffcore::shape_str(target->value.shape()));
    for (int64_t j = 0; j < target->value.numel(); ++j)
      target->value.data()[j] = r.f64("parameter data");
  }
  if (r.remaining() != 0)
    throw LengthError("checkpoint has " + std::to_string(r.remaining()) +
                      " trailing bytes");
}

}  // namespace hd2::pipe
