#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace disco {

// Non-owning view of a block of samples: row-major features plus labels.
struct BatchView {
  std::span<const double> features;
  std::span<const std::uint32_t> labels;
  std::size_t num_features = 0;

  std::size_t rows() const noexcept { return labels.size(); }
};

// A locally held dataset. Features are scaled to [0, 1] by the loaders.
struct Dataset {
  std::vector<double> features;  // rows x num_features, row-major
  std::vector<std::uint32_t> labels;
  std::size_t num_features = 0;
  std::size_t num_classes = 0;
  std::string source_tag;
  std::vector<std::string> label_names;  // CSV categorical labels, by code

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  BatchView view() const noexcept { return {features, labels, num_features}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return std::span<const double>(features).subspan(i * num_features, num_features);
  }

  // Throws when rows(X) != length(y) or a label is out of [0, num_classes).
  void validate() const;

  // Copies the given rows, in the given order.
  Dataset subset(std::span<const std::size_t> rows) const;
};

// Header row required. Non-label columns must be numeric and are min-max
// scaled per column (constant columns become 0). Labels that are all
// non-negative integers are used verbatim; anything else is encoded by first
// appearance in file order.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column);

// MNIST-style IDX pair (images 0x00000803, labels 0x00000801). Gzipped files
// are read transparently. Pixels are divided by 255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

enum class PartitionMode { kIid, kDirichlet };

struct PartitionPlan {
  std::size_t num_clients = 1;
  PartitionMode mode = PartitionMode::kIid;
  double alpha = 1.0;  // Dirichlet concentration
  std::uint64_t seed = 0;
};

// Splits a corpus into disjoint, covering client datasets. Each client keeps
// its rows in corpus order.
std::vector<Dataset> partition(const Dataset& dataset, const PartitionPlan& plan);

// Row indices behind partition(); exposed for coverage checks.
std::vector<std::vector<std::size_t>> partition_indices(const Dataset& dataset,
                                                        const PartitionPlan& plan);

// Gaussian blobs: one center per class drawn uniformly in [0, 1]^dim, then
// center + N(0, spread^2) per sample. Labels cycle 0, 1, ..., classes - 1.
struct SyntheticSpec {
  std::size_t samples = 1000;
  std::size_t dim = 2;
  std::size_t classes = 2;
  double spread = 0.1;
  std::uint64_t seed = 0;
};

Dataset synthetic_blobs(const SyntheticSpec& spec);

// Deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace disco
