#include "fatsim/data.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <numeric>

#include "fatsim/errors.hpp"
#include "fatsim/rng.hpp"

namespace fatsim {

std::set<int> Dataset::label_set() const {
  std::set<int> out;
  for (const auto& e : examples) out.insert(e.label);
  return out;
}

void Dataset::validate() const {
  if (num_classes <= 0) throw InvalidArgument("dataset must have a positive class count");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    if (e.label < 0 || e.label >= num_classes) {
      throw InvalidArgument("example " + std::to_string(i) + " has label " + std::to_string(e.label) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
    if (e.image.shape() != examples.front().image.shape()) {
      throw InvalidArgument("example " + std::to_string(i) + " has image shape " + shape_str(e.image.shape()));
    }
    for (double v : e.image.data()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw InvalidArgument("example " + std::to_string(i) + " has a pixel outside [0, 1]");
      }
    }
  }
}

Tensor Batch::image(std::size_t i) const {
  const Shape& s = images.shape();
  Shape one(s.begin() + 1, s.end());
  const std::size_t stride = numel(one);
  auto src = images.data().subspan(i * stride, stride);
  return Tensor(one, std::vector<double>(src.begin(), src.end()));
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("make_batch: no examples selected");
  const Shape& img = ds.examples.at(indices.front()).image.shape();
  Shape shape{indices.size()};
  shape.insert(shape.end(), img.begin(), img.end());
  const std::size_t stride = numel(img);
  std::vector<double> data;
  data.reserve(indices.size() * stride);
  Batch batch;
  batch.labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    const Example& e = ds.examples.at(idx);
    if (e.image.shape() != img) throw DimensionError("make_batch: mixed image shapes");
    data.insert(data.end(), e.image.data().begin(), e.image.data().end());
    batch.labels.push_back(e.label);
  }
  batch.images = Tensor(std::move(shape), std::move(data));
  return batch;
}

Batch make_batch(const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_batch(ds, all);
}

std::vector<std::vector<double>> blob_centers(const BlobConfig& cfg) {
  if (cfg.num_classes <= 0 || cfg.height == 0 || cfg.width == 0 || cfg.channels == 0) {
    throw InvalidArgument("generate_blobs: class count and image dimensions must be positive");
  }
  const std::size_t pixels = cfg.height * cfg.width * cfg.channels;
  Rng rng = Rng::derive(cfg.seed, {0xb10b, 0});
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(cfg.num_classes), std::vector<double>(pixels));
  for (auto& c : centers)
    for (double& v : c) v = rng.normal();
  return centers;
}

Dataset generate_blobs(const BlobConfig& cfg, std::size_t n_per_class, std::uint64_t stream) {
  if (n_per_class == 0) throw InvalidArgument("generate_blobs: n_per_class must be positive");
  if (!(cfg.spread >= 0.0) || !(cfg.contrast > 0.0)) {
    throw InvalidArgument("generate_blobs: spread must be >= 0 and contrast > 0");
  }
  const auto centers = blob_centers(cfg);
  const Shape shape{cfg.height, cfg.width, cfg.channels};
  Rng rng = Rng::derive(cfg.seed, {0xb10b, 1, stream});
  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.examples.reserve(n_per_class * centers.size());
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      Tensor img(shape);
      for (std::size_t p = 0; p < img.size(); ++p) {
        const double v = centers[c][p] + cfg.spread * rng.normal();
        img[p] = std::clamp(0.5 + cfg.contrast * v, 0.0, 1.0);
      }
      ds.examples.push_back(Example{std::move(img), static_cast<int>(c)});
    }
  }
  return ds;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) {
    throw FormatError(FormatError::Kind::Truncated, "'" + path.string() + "' is truncated in its header");
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  const std::uint32_t img_magic = read_be32(images, 0, images_path);
  if (img_magic != kIdxImagesMagic) {
    throw FormatError(FormatError::Kind::BadMagic, "'" + images_path.string() + "': bad magic for IDX images");
  }
  const std::uint32_t lbl_magic = read_be32(labels, 0, labels_path);
  if (lbl_magic != kIdxLabelsMagic) {
    throw FormatError(FormatError::Kind::BadMagic, "'" + labels_path.string() + "': bad magic for IDX labels");
  }
  const std::size_t n_images = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  if (n_images != n_labels) {
    throw FormatError(FormatError::Kind::CountMismatch, "IDX count mismatch: " + std::to_string(n_images) +
                                                            " images vs " + std::to_string(n_labels) + " labels");
  }
  constexpr std::size_t kImageHeader = 16, kLabelHeader = 8;
  const std::size_t pixels = rows * cols;
  if (images.size() < kImageHeader + n_images * pixels) {
    throw FormatError(FormatError::Kind::Truncated, "'" + images_path.string() + "' is truncated");
  }
  if (labels.size() < kLabelHeader + n_labels) {
    throw FormatError(FormatError::Kind::Truncated, "'" + labels_path.string() + "' is truncated");
  }

  Dataset ds;
  ds.examples.reserve(n_images);
  int max_label = -1;
  for (std::size_t i = 0; i < n_images; ++i) {
    Tensor img(Shape{rows, cols, 1});
    const unsigned char* src = images.data() + kImageHeader + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) img[p] = static_cast<double>(src[p]) / 255.0;
    const int label = labels[kLabelHeader + i];
    max_label = std::max(max_label, label);
    ds.examples.push_back(Example{std::move(img), label});
  }
  ds.num_classes = std::max(1, max_label + 1);
  return ds;
}

std::string to_string(const PartitionSpec& spec) {
  if (spec.kind == PartitionSpec::Kind::Iid) return "iid";
  return "non-iid(" + std::to_string(spec.classes_per_client) + ")";
}

std::vector<std::vector<int>> assign_classes(int num_classes, std::size_t clients, int classes_per_client,
                                             std::uint64_t seed) {
  if (clients == 0) throw InvalidArgument("partition: client count must be positive");
  if (classes_per_client <= 0 || classes_per_client > num_classes) {
    throw FeasibilityError("partition: classes per client " + std::to_string(classes_per_client) +
                           " must lie in [1, " + std::to_string(num_classes) + "]");
  }
  if (static_cast<std::size_t>(classes_per_client) * clients < static_cast<std::size_t>(num_classes)) {
    throw FeasibilityError("partition: " + std::to_string(clients) + " clients x " +
                           std::to_string(classes_per_client) + " classes cannot cover " +
                           std::to_string(num_classes) + " classes");
  }
  std::vector<int> perm(static_cast<std::size_t>(num_classes));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = Rng::derive(seed, {0xc1a55});
  rng.shuffle(perm);

  // Client k takes a window of c consecutive permuted classes starting at
  // floor(k * num_classes / K). Windows are at most ceil(num_classes / K)
  // apart, which is <= c, so together they cover every class.
  const auto nc = static_cast<std::size_t>(num_classes);
  const auto c = static_cast<std::size_t>(classes_per_client);
  std::vector<std::vector<int>> out(clients);
  for (std::size_t k = 0; k < clients; ++k) {
    const std::size_t start = k * nc / clients;
    for (std::size_t j = 0; j < c; ++j) out[k].push_back(perm[(start + j) % nc]);
    std::sort(out[k].begin(), out[k].end());
  }
  return out;
}

namespace {

void split_evenly(const std::vector<std::size_t>& items, const std::vector<std::size_t>& owners,
                  std::vector<std::vector<std::size_t>>& shards) {
  const std::size_t parts = owners.size();
  const std::size_t base = items.size() / parts, extra = items.size() % parts;
  std::size_t pos = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t take = base + (p < extra ? 1 : 0);
    auto& dst = shards[owners[p]];
    dst.insert(dst.end(), items.begin() + static_cast<std::ptrdiff_t>(pos),
               items.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
  }
}

}  // namespace

std::vector<std::vector<std::size_t>> partition_indices(const Dataset& ds, std::size_t clients,
                                                        const PartitionSpec& spec) {
  if (clients == 0) throw InvalidArgument("partition: client count must be positive");
  std::vector<std::vector<std::size_t>> shards(clients);
  if (spec.kind == PartitionSpec::Kind::Iid) {
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng::derive(spec.seed, {0x11d});
    rng.shuffle(order);
    std::vector<std::size_t> owners(clients);
    std::iota(owners.begin(), owners.end(), std::size_t{0});
    split_evenly(order, owners, shards);
  } else {
    const auto held = assign_classes(ds.num_classes, clients, spec.classes_per_client, spec.seed);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const int y = ds.examples[i].label;
      if (y < 0 || y >= ds.num_classes) throw InvalidArgument("partition: label out of range");
      by_class[static_cast<std::size_t>(y)].push_back(i);
    }
    for (std::size_t y = 0; y < by_class.size(); ++y) {
      std::vector<std::size_t> owners;
      for (std::size_t k = 0; k < clients; ++k) {
        if (std::binary_search(held[k].begin(), held[k].end(), static_cast<int>(y))) owners.push_back(k);
      }
      if (owners.empty() || by_class[y].empty()) continue;
      Rng rng = Rng::derive(spec.seed, {0xc1a55, 1, y});
      rng.shuffle(by_class[y]);
      split_evenly(by_class[y], owners, shards);
    }
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

std::vector<Dataset> partition(const Dataset& ds, std::size_t clients, const PartitionSpec& spec) {
  const auto idx = partition_indices(ds, clients, spec);
  std::vector<Dataset> out(clients);
  for (std::size_t k = 0; k < clients; ++k) {
    out[k].num_classes = ds.num_classes;
    out[k].examples.reserve(idx[k].size());
    for (std::size_t i : idx[k]) out[k].examples.push_back(ds.examples[i]);
  }
  return out;
}

}  // namespace fatsim
