#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "agft/tensor.hpp"

namespace agft {

enum class SplitTag { train, test, shifted };
std::string to_string(SplitTag tag);

struct Dataset {
  Tensor inputs;  // [N, D], values in [0, 1]
  std::vector<std::uint32_t> labels;
  std::uint32_t num_classes = 0;
  SplitTag split = SplitTag::train;
  std::uint32_t spatial_side = 0;  // 0 = no square layout
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return inputs.cols(); }
  std::vector<std::size_t> labels_as_index() const;
  std::vector<std::size_t> labels_as_index(std::size_t begin, std::size_t end) const;

  void validate() const;
};

struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t n_per_class = 100;
  std::size_t input_dim = 256;
  std::size_t spatial_side = 16;
  double noise_sigma = 0.05;
  double shift_sigma = 0.1;
  // Class means are 0.5 + class_spread * (U[0, 1] - 0.5); 1.0 gives U[0, 1].
  double class_spread = 1.0;
  std::uint64_t seed = 0;
};

struct DatasetSplits {
  Dataset train;
  Dataset test;
  Dataset shifted;
};

// Gaussian clusters around seeded class means, clamped into [0, 1]. The
// shifted split offsets every class mean by per-coordinate N(0, shift_sigma)
// before sampling.
DatasetSplits generate_synthetic(const SyntheticSpec& spec);

// Binary layout, little-endian:
//   "AGDS" | u32 version | u64 N | u64 input_dim | u32 K | u32 spatial_side |
//   f64 inputs[N * input_dim] | u32 labels[N]
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace agft
