#include "disco/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <unordered_map>

#include "disco/error.hpp"
#include "disco/rng.hpp"

namespace disco {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_label_int(std::string_view s, std::uint32_t& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

struct GzCloser {
  void operator()(gzFile f) const noexcept { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

// Reads a whole (optionally gzipped) file.
std::vector<std::uint8_t> read_maybe_gz(const std::filesystem::path& path) {
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(f.get(), buf, sizeof buf);
    if (n < 0) throw Error(ErrorCode::kIo, "read error in " + path.string());
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& what) {
  if (b.size() < off + 4) throw Error(ErrorCode::kTruncated, what + ": truncated header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace

void Dataset::validate() const {
  if (features.size() != labels.size() * num_features) {
    throw Error(ErrorCode::kDimensionMismatch, "dataset feature block does not match label count");
  }
  for (std::uint32_t y : labels) {
    if (y >= num_classes) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.num_features = num_features;
  out.num_classes = num_classes;
  out.source_tag = source_tag;
  out.label_names = label_names;
  out.features.reserve(rows.size() * num_features);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) {
    const auto src = row(r);
    out.features.insert(out.features.end(), src.begin(), src.end());
    out.labels.push_back(labels[r]);
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kEmptyInput, path.string() + ": empty file");
  const auto header = split_row(line);
  const auto it = std::find(header.begin(), header.end(), std::string_view(label_column));
  if (it == header.end()) {
    throw Error(ErrorCode::kInvalidArgument, "unknown label column '" + label_column + "'");
  }
  const std::size_t label_idx = static_cast<std::size_t>(it - header.begin());
  const std::size_t cols = header.size();

  Dataset ds;
  ds.num_features = cols - 1;
  ds.source_tag = "csv:" + path.filename().string();
  std::vector<std::string> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_row(line);
    if (cells.size() != cols) {
      throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) + ": ragged row (" +
                                         std::to_string(cells.size()) + " cells, expected " +
                                         std::to_string(cols) + ")");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (c == label_idx) {
        raw_labels.emplace_back(cells[c]);
        continue;
      }
      double v = 0.0;
      if (!parse_double(cells[c], v)) {
        throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) +
                                           ": non-numeric cell '" + std::string(cells[c]) + "'");
      }
      ds.features.push_back(v);
    }
  }
  if (raw_labels.empty()) throw Error(ErrorCode::kEmptyInput, path.string() + ": no data rows");

  // Per-column min-max scaling; constant columns map to 0.
  const std::size_t rows = raw_labels.size();
  for (std::size_t c = 0; c < ds.num_features; ++c) {
    double lo = ds.features[c];
    double hi = ds.features[c];
    for (std::size_t r = 1; r < rows; ++r) {
      lo = std::min(lo, ds.features[r * ds.num_features + c]);
      hi = std::max(hi, ds.features[r * ds.num_features + c]);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      double& v = ds.features[r * ds.num_features + c];
      v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    }
  }

  std::vector<std::uint32_t> numeric(rows);
  const bool all_int = std::all_of(raw_labels.begin(), raw_labels.end(), [&, i = 0u](const auto& s) mutable {
    return parse_label_int(s, numeric[i++]);
  });
  if (all_int) {
    ds.labels = std::move(numeric);
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + std::size_t{1};
  } else {
    std::unordered_map<std::string, std::uint32_t> codes;
    for (const auto& s : raw_labels) {
      auto [pos, inserted] = codes.try_emplace(s, static_cast<std::uint32_t>(codes.size()));
      if (inserted) ds.label_names.push_back(s);
      ds.labels.push_back(pos->second);
    }
    ds.num_classes = codes.size();
  }
  ds.num_classes = std::max<std::size_t>(ds.num_classes, 2);
  return ds;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto images = read_maybe_gz(images_path);
  const auto labels = read_maybe_gz(labels_path);
  if (be32(images, 0, "images") != 0x00000803) {
    throw Error(ErrorCode::kBadMagic, images_path.string() + ": bad IDX image magic");
  }
  if (be32(labels, 0, "labels") != 0x00000801) {
    throw Error(ErrorCode::kBadMagic, labels_path.string() + ": bad IDX label magic");
  }
  const std::size_t count = be32(images, 4, "images");
  const std::size_t height = be32(images, 8, "images");
  const std::size_t width = be32(images, 12, "images");
  const std::size_t label_count = be32(labels, 4, "labels");
  if (count != label_count) {
    throw Error(ErrorCode::kCountMismatch, "IDX count mismatch: " + std::to_string(count) +
                                               " images vs " + std::to_string(label_count) + " labels");
  }
  const std::size_t pixels = height * width;
  if (images.size() < 16 + count * pixels) {
    throw Error(ErrorCode::kTruncated, images_path.string() + ": truncated image data");
  }
  if (labels.size() < 8 + count) {
    throw Error(ErrorCode::kTruncated, labels_path.string() + ": truncated label data");
  }

  Dataset ds;
  ds.num_features = pixels;
  ds.source_tag = "idx:" + images_path.filename().string();
  ds.features.resize(count * pixels);
  for (std::size_t i = 0; i < count * pixels; ++i) ds.features[i] = images[16 + i] / 255.0;
  ds.labels.assign(labels.begin() + 8, labels.begin() + 8 + static_cast<std::ptrdiff_t>(count));
  std::uint32_t max_label = 0;
  for (std::uint32_t y : ds.labels) max_label = std::max(max_label, y);
  ds.num_classes = std::max<std::size_t>(std::size_t{max_label} + 1, 2);
  return ds;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  CounterRng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.next_below(i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

std::vector<std::vector<std::size_t>> partition_indices(const Dataset& dataset,
                                                        const PartitionPlan& plan) {
  const std::size_t n = dataset.size();
  const std::size_t k = plan.num_clients;
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "numClients must be positive");
  if (k > n) {
    throw Error(ErrorCode::kInvalidArgument, "numClients (" + std::to_string(k) + ") exceeds rows (" +
                                                 std::to_string(n) + ")");
  }
  std::vector<std::vector<std::size_t>> parts(k);

  if (plan.mode == PartitionMode::kIid) {
    const auto order = seeded_permutation(n, plan.seed);
    const std::size_t base = n / k;
    const std::size_t extra = n % k;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t len = base + (c < extra ? 1 : 0);
      parts[c].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                      order.begin() + static_cast<std::ptrdiff_t>(pos + len));
      pos += len;
    }
  } else {
    if (!(plan.alpha > 0.0) || !std::isfinite(plan.alpha)) {
      throw Error(ErrorCode::kInvalidArgument, "Dirichlet alpha must be positive and finite");
    }
    std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
    for (std::size_t i = 0; i < n; ++i) by_class.at(dataset.labels[i]).push_back(i);
    CounterRng rng(plan.seed);
    for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
      auto& members = by_class[cls];
      if (members.empty()) continue;
      const auto perm = seeded_permutation(members.size(), derive_key(plan.seed, {cls}));
      std::vector<double> props(k);
      double total = 0.0;
      for (double& p : props) total += (p = rng.next_gamma(plan.alpha));
      // Cut points at round(cumulative proportion * class size).
      double cumulative = 0.0;
      std::size_t prev = 0;
      for (std::size_t c = 0; c < k; ++c) {
        cumulative += props[c] / total;
        const std::size_t cut = c + 1 == k ? members.size()
                                           : std::min(members.size(), static_cast<std::size_t>(std::llround(
                                                                          cumulative * static_cast<double>(members.size()))));
        for (std::size_t i = prev; i < std::max(prev, cut); ++i) parts[c].push_back(members[perm[i]]);
        prev = std::max(prev, cut);
      }
    }
    // Repair: every client gets at least one sample, taken from the largest
    // client (lowest index on ties), moving its highest row index.
    for (std::size_t c = 0; c < k; ++c) {
      if (!parts[c].empty()) continue;
      std::size_t donor = 0;
      for (std::size_t d = 1; d < k; ++d) {
        if (parts[d].size() > parts[donor].size()) donor = d;
      }
      auto& src = parts[donor];
      const auto top = std::max_element(src.begin(), src.end());
      parts[c].push_back(*top);
      src.erase(top);
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

std::vector<Dataset> partition(const Dataset& dataset, const PartitionPlan& plan) {
  const auto indices = partition_indices(dataset, plan);
  std::vector<Dataset> out;
  out.reserve(indices.size());
  for (std::size_t c = 0; c < indices.size(); ++c) {
    out.push_back(dataset.subset(indices[c]));
    out.back().source_tag = dataset.source_tag + "#client" + std::to_string(c);
  }
  return out;
}

Dataset synthetic_blobs(const SyntheticSpec& spec) {
  if (spec.samples == 0 || spec.dim == 0 || spec.classes < 2) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic_blobs: need samples > 0, dim > 0, classes >= 2");
  }
  if (!(spec.spread >= 0.0) || !std::isfinite(spec.spread)) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic_blobs: spread must be finite and >= 0");
  }
  CounterRng center_rng(derive_key(spec.seed, {0}));
  std::vector<double> centers(spec.classes * spec.dim);
  for (double& c : centers) c = center_rng.next_unit();

  CounterRng noise_rng(derive_key(spec.seed, {1}));
  Dataset d;
  d.num_features = spec.dim;
  d.num_classes = spec.classes;
  d.source_tag = "synthetic";
  d.features.resize(spec.samples * spec.dim);
  d.labels.resize(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const std::size_t cls = i % spec.classes;
    d.labels[i] = static_cast<std::uint32_t>(cls);
    for (std::size_t f = 0; f < spec.dim; ++f) {
      d.features[i * spec.dim + f] = centers[cls * spec.dim + f] + spec.spread * noise_rng.next_normal();
    }
  }
  return d;
}

}  // namespace disco
