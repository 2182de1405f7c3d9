#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fatsim/tensor.hpp"

namespace fatsim {

struct Example {
  Tensor image;  // [H x W x C], values in [0, 1]
  int label = 0;
};

struct Dataset {
  std::vector<Example> examples;
  int num_classes = 0;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
  std::set<int> label_set() const;
  // Throws InvalidArgument when a label or pixel is out of range, or
  // image shapes disagree.
  void validate() const;
};

// Stacked images [B x H x W x C] with their labels.
struct Batch {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  // Image i as [H x W x C].
  Tensor image(std::size_t i) const;
};

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& ds);

struct BlobConfig {
  int num_classes = 10;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  // Std of per-sample Gaussian noise around the class center.
  double spread = 0.5;
  // pixel = clamp(0.5 + contrast * value, 0, 1)
  double contrast = 0.1;
  std::uint64_t seed = 0;
};

// Class centers ~ N(0, I) drawn once from cfg.seed; samples are
// center + spread * N(0, I) from a sample stream keyed by `stream`, so train
// and test sets can share centers. Examples are ordered class-major.
Dataset generate_blobs(const BlobConfig& cfg, std::size_t n_per_class, std::uint64_t stream = 0);

// Unclamped class centers in pixel space, before contrast and clamping.
std::vector<std::vector<double>> blob_centers(const BlobConfig& cfg);

// MNIST-style IDX files: magic 0x00000803 for images (u8, N x rows x cols),
// 0x00000801 for labels, big-endian header integers. Pixels are scaled by /255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

struct PartitionSpec {
  enum class Kind { Iid, ClassRestricted };
  Kind kind = Kind::Iid;
  int classes_per_client = 0;  // used by ClassRestricted
  std::uint64_t seed = 0;

  static PartitionSpec iid(std::uint64_t seed) { return {Kind::Iid, 0, seed}; }
  static PartitionSpec class_restricted(int c, std::uint64_t seed) { return {Kind::ClassRestricted, c, seed}; }
};

std::string to_string(const PartitionSpec& spec);

// Classes held by each client under a ClassRestricted spec.
std::vector<std::vector<int>> assign_classes(int num_classes, std::size_t clients, int classes_per_client,
                                             std::uint64_t seed);

// Dataset indices held by each client; disjoint, union is every index.
std::vector<std::vector<std::size_t>> partition_indices(const Dataset& ds, std::size_t clients,
                                                        const PartitionSpec& spec);

std::vector<Dataset> partition(const Dataset& ds, std::size_t clients, const PartitionSpec& spec);

}  // namespace fatsim
