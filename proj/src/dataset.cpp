#include "agft/dataset.hpp"

#include <algorithm>
#include <random>

#include <spdlog/spdlog.h>

#include "agft/binary_io.hpp"
#include "agft/error.hpp"

namespace agft {

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::test: return "test";
    case SplitTag::shifted: return "shifted";
  }
  return "unknown";
}

std::vector<std::size_t> Dataset::labels_as_index() const { return labels_as_index(0, size()); }

std::vector<std::size_t> Dataset::labels_as_index(std::size_t begin, std::size_t end) const {
  return std::vector<std::size_t>(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                                  labels.begin() + static_cast<std::ptrdiff_t>(end));
}

void Dataset::validate() const {
  if (labels.empty()) throw ContractViolation("empty dataset");
  if (inputs.rank() != 2 || inputs.rows() != labels.size()) {
    throw ContractViolation("dataset inputs do not match the label count");
  }
  for (double v : inputs.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractViolation("dataset input outside [0, 1]");
  }
  for (std::uint32_t y : labels) {
    if (y >= num_classes) throw ContractViolation("dataset label outside the class range");
  }
  if (spatial_side != 0 &&
      static_cast<std::size_t>(spatial_side) * spatial_side != inputs.cols()) {
    throw ContractViolation("spatial side squared does not equal the input width");
  }
}

DatasetSplits generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes == 0 || spec.n_per_class == 0 || spec.input_dim == 0) {
    throw ContractViolation("synthetic dataset sizes must be positive");
  }
  if (spec.noise_sigma < 0.0 || spec.shift_sigma < 0.0 || spec.class_spread < 0.0) {
    throw ContractViolation("synthetic dataset spreads must be non-negative");
  }
  if (spec.spatial_side != 0 && spec.spatial_side * spec.spatial_side != spec.input_dim) {
    throw ContractViolation("spatial_side^2 must equal input_dim");
  }
  const std::size_t k = spec.num_classes, d = spec.input_dim;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> means(k * d);
  for (double& m : means) m = 0.5 + spec.class_spread * (unit(rng) - 0.5);
  std::vector<double> shifted_means = means;
  std::normal_distribution<double> shift(0.0, 1.0);
  for (double& m : shifted_means) m += spec.shift_sigma * shift(rng);

  auto sample = [&](const std::vector<double>& centers, SplitTag tag, std::uint64_t split_seed) {
    std::mt19937_64 srng(split_seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset ds;
    ds.num_classes = static_cast<std::uint32_t>(k);
    ds.split = tag;
    ds.spatial_side = static_cast<std::uint32_t>(spec.spatial_side);
    ds.seed = spec.seed;
    ds.inputs = Tensor(Shape{k * spec.n_per_class, d});
    std::size_t clamped = 0;
    std::size_t row = 0;
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      for (std::size_t c = 0; c < k; ++c, ++row) {
        std::span<double> r = ds.inputs.row(row);
        for (std::size_t j = 0; j < d; ++j) {
          const double v = centers[c * d + j] + spec.noise_sigma * noise(srng);
          const double cv = std::clamp(v, 0.0, 1.0);
          if (cv != v) ++clamped;
          r[j] = cv;
        }
        ds.labels.push_back(static_cast<std::uint32_t>(c));
      }
    }
    const double frac = static_cast<double>(clamped) / static_cast<double>(ds.inputs.size());
    if (frac > 0.5) {
      spdlog::warn("synthetic {} split: {:.1f}% of coordinates saturated by clamping",
                   to_string(tag), 100.0 * frac);
    }
    return ds;
  };

  DatasetSplits out;
  out.train = sample(means, SplitTag::train, spec.seed ^ 0x9e3779b97f4a7c15ULL);
  out.test = sample(means, SplitTag::test, spec.seed ^ 0xc2b2ae3d27d4eb4fULL);
  out.shifted = sample(shifted_means, SplitTag::shifted, spec.seed ^ 0x165667b19e3779f9ULL);
  return out;
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.bytes("AGDS", 4);
  w.u32(kDatasetVersion);
  w.u64(ds.size());
  w.u64(ds.size() == 0 ? 0 : ds.input_dim());
  w.u32(ds.num_classes);
  w.u32(ds.spatial_side);
  for (double v : ds.inputs.data()) w.f64(v);
  for (std::uint32_t y : ds.labels) w.u32(y);
  return std::move(w.buffer());
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "dataset");
  if (r.remaining() < 4 || r.string(4) != "AGDS") {
    throw FormatError("bad dataset magic, expected \"AGDS\"", 0);
  }
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("unsupported version " + std::to_string(version), version_at);
  }
  const std::size_t n_at = r.offset();
  const std::uint64_t n = r.u64();
  const std::uint64_t dim = r.u64();
  Dataset ds;
  ds.num_classes = r.u32();
  ds.spatial_side = r.u32();
  if (n == 0) throw FormatError("empty dataset", n_at);
  if (dim == 0) throw FormatError("dataset input width is zero", n_at + 8);
  if (dim > r.remaining() / 8 / n) throw FormatError("truncated dataset inputs", r.offset());
  std::vector<double> values(n * dim);
  for (double& v : values) {
    const std::size_t at = r.offset();
    v = r.f64();
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("dataset input outside [0, 1]", at);
  }
  ds.inputs = Tensor(Shape{n, dim}, std::move(values));
  ds.labels.resize(n);
  for (auto& y : ds.labels) {
    const std::size_t at = r.offset();
    y = r.u32();
    if (y >= ds.num_classes) {
      throw FormatError("label " + std::to_string(y) + " >= class count " +
                            std::to_string(ds.num_classes),
                        at);
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after dataset labels", r.offset());
  if (ds.spatial_side != 0 && static_cast<std::uint64_t>(ds.spatial_side) * ds.spatial_side != dim) {
    throw FormatError("spatial side squared does not equal the input width", n_at);
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  ds.validate();
  io::write_file(path, serialize_dataset(ds));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(io::read_file(path));
}

}  // namespace agft
