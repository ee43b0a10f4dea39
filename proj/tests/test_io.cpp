#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"

#include "agft/checkpoint.hpp"
#include "agft/dataset.hpp"
#include "agft/error.hpp"
#include "test_support.hpp"

using namespace agft;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "agft_test_io";
  fs::create_directories(dir);
  return dir / name;
}

bool same_model(const DualEncoder& a, const DualEncoder& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (!bitwise_equal(a.layers[l].weight, b.layers[l].weight)) return false;
    if (!bitwise_equal(a.layers[l].bias, b.layers[l].bias)) return false;
  }
  return bitwise_equal(a.text_prototypes, b.text_prototypes) &&
         std::memcmp(&a.tau, &b.tau, sizeof(double)) == 0 && a.seed == b.seed;
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
}

Dataset small_dataset(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.n_per_class = 4;
  spec.input_dim = 9;
  spec.spatial_side = 3;
  spec.seed = seed;
  return generate_synthetic(spec).train;
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise lossless") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DualEncoder m = make_dual_encoder(ModelSpec{}, seed);
    m.tau = 1.0 / 180;
    const fs::path p = scratch("m.ckpt");
    save_checkpoint(m, p);
    CHECK(same_model(load_checkpoint(p), m));
    CHECK(same_model(deserialize_checkpoint(serialize_checkpoint(m)), m));
  }
}

TEST_CASE("checkpoint header layout") {
  const auto bytes = serialize_checkpoint(agft::testing::tiny_model(3));
  REQUIRE(bytes.size() > 16);
  CHECK(std::memcmp(bytes.data(), "AGFT", 4) == 0);
  CHECK(read_u32(bytes, 4) == kCheckpointVersion);
}

TEST_CASE("every truncation of a checkpoint is rejected") {
  const auto bytes = serialize_checkpoint(agft::testing::tiny_model(4));
  for (std::size_t cut = 0; cut < bytes.size(); cut += 7) {
    std::span<const std::uint8_t> part(bytes.data(), cut);
    CHECK_THROWS_AS(deserialize_checkpoint(part), FormatError);
  }
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(longer), FormatError);
}

TEST_CASE("checkpoint magic and version errors") {
  auto bytes = serialize_checkpoint(agft::testing::tiny_model(4));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad), doctest::Contains("magic"), FormatError);
  bad = bytes;
  put_u32(bad, 4, kCheckpointVersion + 1);
  try {
    deserialize_checkpoint(bad);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("unsupported version") != std::string::npos);
    CHECK(e.offset() == 4);
  }
  CHECK_THROWS(load_checkpoint(scratch("does_not_exist.ckpt")));
}

TEST_CASE("dataset round trip is bitwise lossless") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset d = small_dataset(seed);
    const fs::path p = scratch("d.agds");
    write_dataset(p, d);
    const Dataset r = read_dataset(p);
    CHECK(bitwise_equal(r.inputs, d.inputs));
    CHECK(r.labels == d.labels);
    CHECK(r.num_classes == d.num_classes);
    CHECK(r.spatial_side == d.spatial_side);
  }
}

TEST_CASE("dataset header layout") {
  const Dataset d = small_dataset(1);
  const auto b = serialize_dataset(d);
  CHECK(std::memcmp(b.data(), "AGDS", 4) == 0);
  CHECK(read_u32(b, 4) == kDatasetVersion);
  CHECK(read_u32(b, 8) == 12);   // N, low word
  CHECK(read_u32(b, 16) == 9);   // input_dim, low word
  CHECK(read_u32(b, 24) == 3);   // K
  CHECK(read_u32(b, 28) == 3);   // spatial side
  CHECK(b.size() == 32 + 12 * 9 * 8 + 12 * 4);
  CHECK(read_u32(b, 32 + 12 * 9 * 8) == d.labels[0]);
}

TEST_CASE("dataset read errors") {
  const Dataset d = small_dataset(2);
  const auto bytes = serialize_dataset(d);

  SUBCASE("label equal to K") {
    auto bad = bytes;
    put_u32(bad, bad.size() - 4, d.num_classes);
    CHECK_THROWS_WITH_AS(deserialize_dataset(bad), doctest::Contains("class count"), FormatError);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[3] = 'Z';
    CHECK_THROWS_AS(deserialize_dataset(bad), FormatError);
  }
  SUBCASE("truncation") {
    for (std::size_t cut = 0; cut < bytes.size(); cut += 5) {
      CHECK_THROWS_AS(deserialize_dataset(std::span<const std::uint8_t>(bytes.data(), cut)),
                      FormatError);
    }
  }
  SUBCASE("empty dataset") {
    auto bad = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 32);
    for (std::size_t i = 8; i < 16; ++i) bad[i] = 0;
    CHECK_THROWS_WITH_AS(deserialize_dataset(bad), doctest::Contains("empty dataset"), FormatError);
  }
  SUBCASE("version") {
    auto bad = bytes;
    put_u32(bad, 4, 99);
    CHECK_THROWS_WITH_AS(deserialize_dataset(bad), doctest::Contains("unsupported version"), FormatError);
  }
}

TEST_CASE("zero noise gives identical samples per class") {
  SyntheticSpec spec;
  spec.noise_sigma = 0.0;
  spec.n_per_class = 5;
  const DatasetSplits s = generate_synthetic(spec);
  std::vector<int> first(spec.num_classes, -1);
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    const auto y = s.train.labels[i];
    if (first[y] < 0) {
      first[y] = static_cast<int>(i);
      continue;
    }
    const auto a = s.train.inputs.row(static_cast<std::size_t>(first[y]));
    const auto b = s.train.inputs.row(i);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST_CASE("synthetic generation is deterministic and well formed") {
  SyntheticSpec spec;
  spec.seed = 11;
  const DatasetSplits a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(serialize_dataset(a.train) == serialize_dataset(b.train));
  CHECK(serialize_dataset(a.test) == serialize_dataset(b.test));
  CHECK(serialize_dataset(a.shifted) == serialize_dataset(b.shifted));
  CHECK(a.train.split == SplitTag::train);
  CHECK(a.shifted.split == SplitTag::shifted);
  CHECK(a.train.size() == 800);
  a.test.validate();
  spec.seed = 12;
  CHECK(serialize_dataset(generate_synthetic(spec).train) != serialize_dataset(a.train));

  spec.spatial_side = 15;
  CHECK_THROWS_AS(generate_synthetic(spec), ContractViolation);
}

TEST_CASE("nearest-centroid oracle separates the default synthetic data") {
  SyntheticSpec spec;
  spec.noise_sigma = 0.05;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    spec.seed = seed;
    const DatasetSplits s = generate_synthetic(spec);
    CHECK(agft::testing::nearest_centroid_accuracy(s.train, s.test) >= 0.99);
  }
}

TEST_CASE("shifted split moves class means") {
  SyntheticSpec spec;
  spec.noise_sigma = 0.0;
  spec.shift_sigma = 0.1;
  const DatasetSplits s = generate_synthetic(spec);
  CHECK(max_abs_diff(s.test.inputs, s.shifted.inputs) > 0.0);
  spec.shift_sigma = 0.0;
  const DatasetSplits z = generate_synthetic(spec);
  CHECK(bitwise_equal(z.test.inputs, z.shifted.inputs));
}
