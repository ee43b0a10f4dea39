#include "agft/checkpoint.hpp"

#include <map>

#include "agft/binary_io.hpp"
#include "agft/error.hpp"

namespace agft {

namespace {

void write_record(io::ByteWriter& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f64(v);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const DualEncoder& model) {
  io::ByteWriter w;
  w.bytes("AGFT", 4);
  w.u32(kCheckpointVersion);
  w.u64(model.seed);
  w.u32(static_cast<std::uint32_t>(model.layers.size() * 2 + 2));
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    write_record(w, "encoder." + std::to_string(i) + ".weight", model.layers[i].weight);
    write_record(w, "encoder." + std::to_string(i) + ".bias", model.layers[i].bias);
  }
  write_record(w, "text_prototypes", model.text_prototypes);
  write_record(w, "tau", Tensor::scalar(model.tau));
  return std::move(w.buffer());
}

DualEncoder deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  if (r.remaining() < 4 || r.string(4) != "AGFT") {
    throw FormatError("bad checkpoint magic, expected \"AGFT\"", 0);
  }
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported version " + std::to_string(version) + " (reader supports " +
                          std::to_string(kCheckpointVersion) + ")",
                      version_at);
  }
  DualEncoder model;
  model.seed = r.u64();
  const std::uint32_t count = r.u32();
  std::map<std::string, Tensor> records;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t at = r.offset();
    const std::uint32_t name_len = r.u32();
    std::string name = r.string(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), at);
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / 8) throw FormatError("truncated checkpoint data for '" + name + "'", r.offset());
    std::vector<double> data(n);
    for (double& v : data) v = r.f64();
    if (!records.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw FormatError("duplicate record '" + name + "'", at);
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint records", r.offset());

  auto take = [&](const std::string& name) {
    auto it = records.find(name);
    if (it == records.end()) throw FormatError("missing checkpoint record '" + name + "'", r.offset());
    Tensor t = std::move(it->second);
    records.erase(it);
    return t;
  };
  for (std::size_t i = 0; records.count("encoder." + std::to_string(i) + ".weight"); ++i) {
    Linear layer;
    layer.weight = take("encoder." + std::to_string(i) + ".weight");
    layer.bias = take("encoder." + std::to_string(i) + ".bias");
    model.layers.push_back(std::move(layer));
  }
  model.text_prototypes = take("text_prototypes");
  model.tau = take("tau").item();
  if (!records.empty()) {
    throw FormatError("unexpected checkpoint record '" + records.begin()->first + "'", r.offset());
  }
  try {
    validate(model);
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("invalid checkpoint contents: ") + e.what(), r.offset());
  }
  return model;
}

void save_checkpoint(const DualEncoder& model, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(model));
}

DualEncoder load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace agft
