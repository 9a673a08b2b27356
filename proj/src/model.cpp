#include "disco/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "bytes.hpp"
#include "disco/rng.hpp"

namespace disco {
namespace {

constexpr char kCheckpointMagic[4] = {'D', 'S', 'C', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Views over the layers of a ParamVector in manifest order.
struct Layers {
  std::size_t in = 0, hidden = 0, out = 0;
  const double* w1 = nullptr;
  const double* b1 = nullptr;
  const double* w2 = nullptr;
  const double* b2 = nullptr;
};

Layers split_layers(const ParamVector& p) {
  const ModelSpec spec = infer_spec(p);
  Layers l;
  l.in = spec.input_dim;
  l.hidden = spec.hidden_dim;
  l.out = spec.output_dim;
  const double* cursor = p.values.data();
  if (l.hidden > 0) {
    l.w1 = cursor;
    cursor += l.in * l.hidden;
    l.b1 = cursor;
    cursor += l.hidden;
  }
  l.w2 = cursor;
  cursor += (l.hidden > 0 ? l.hidden : l.in) * l.out;
  l.b2 = cursor;
  return l;
}

void check_batch(const Layers& l, const BatchView& batch) {
  if (batch.num_features != l.in) {
    std::ostringstream os;
    os << "batch has " << batch.num_features << " features, model expects " << l.in;
    throw Error(ErrorCode::kDimensionMismatch, os.str());
  }
  if (batch.features.size() != batch.rows() * batch.num_features) {
    throw Error(ErrorCode::kDimensionMismatch, "feature block does not match label count");
  }
  if (batch.rows() == 0) throw Error(ErrorCode::kEmptyInput, "empty batch");
  for (std::uint32_t y : batch.labels) {
    if (y >= l.out) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "label " + std::to_string(y) + " outside [0, " + std::to_string(l.out) + ")");
    }
  }
  for (double x : batch.features) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kNonFinite, "non-finite input feature");
  }
}

// out[r, :] = bias + in[r, :] * W  with W row-major [in_cols, out_cols].
void affine(const double* in, std::size_t rows, std::size_t in_cols, const double* w,
            const double* bias, std::size_t out_cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out + r * out_cols;
    std::copy(bias, bias + out_cols, o);
    const double* x = in + r * in_cols;
    for (std::size_t k = 0; k < in_cols; ++k) {
      const double xk = x[k];
      if (xk == 0.0) continue;  // exact: weights are finite
      const double* wk = w + k * out_cols;
      for (std::size_t j = 0; j < out_cols; ++j) o[j] += xk * wk[j];
    }
  }
}

void softmax_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = &m.data[r * m.cols];
    const double mx = *std::max_element(row, row + m.cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < m.cols; ++j) row[j] /= sum;
  }
}

struct Activations {
  Matrix hidden;  // post-ReLU, empty for linear models
  Matrix probs;
};

Activations forward_pass(const Layers& l, const BatchView& batch) {
  const std::size_t rows = batch.rows();
  Activations a;
  const double* top_in = batch.features.data();
  std::size_t top_cols = l.in;
  if (l.hidden > 0) {
    a.hidden = Matrix(rows, l.hidden);
    affine(batch.features.data(), rows, l.in, l.w1, l.b1, l.hidden, a.hidden.data.data());
    for (double& v : a.hidden.data) v = v > 0.0 ? v : 0.0;
    top_in = a.hidden.data.data();
    top_cols = l.hidden;
  }
  a.probs = Matrix(rows, l.out);
  affine(top_in, rows, top_cols, l.w2, l.b2, l.out, a.probs.data.data());
  softmax_rows(a.probs);
  return a;
}

double mean_nll(const Matrix& probs, std::span<const std::uint32_t> labels) {
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows; ++r) {
    total -= std::log(std::max(probs(r, labels[r]), std::numeric_limits<double>::min()));
  }
  return total / static_cast<double>(probs.rows);
}

std::size_t count_correct(const Matrix& probs, std::span<const std::uint32_t> labels) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < probs.rows; ++r) {
    const double* row = &probs.data[r * probs.cols];
    const auto best = static_cast<std::size_t>(std::max_element(row, row + probs.cols) - row);
    if (best == labels[r]) ++correct;
  }
  return correct;
}

}  // namespace

std::size_t ModelSpec::parameter_count() const noexcept {
  if (hidden_dim == 0) return input_dim * output_dim + output_dim;
  return input_dim * hidden_dim + hidden_dim + hidden_dim * output_dim + output_dim;
}

void ModelSpec::validate(std::size_t param_cap) const {
  if (input_dim == 0) throw Error(ErrorCode::kInvalidSpec, "inputDim must be positive");
  if (output_dim < 2) throw Error(ErrorCode::kInvalidSpec, "outputDim must be at least 2");
  // Overflow-safe cap check: compare each factor before multiplying.
  const auto over = [param_cap](std::size_t a, std::size_t b) {
    return b != 0 && a > param_cap / b;
  };
  const std::size_t top_in = hidden_dim > 0 ? hidden_dim : input_dim;
  if (over(input_dim, hidden_dim) || over(top_in, output_dim) ||
      parameter_count() > param_cap) {
    throw Error(ErrorCode::kOverflow, "parameter count exceeds cap of " + std::to_string(param_cap));
  }
}

std::size_t LayerShape::size() const noexcept {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

void ParamVector::check_finite(std::string_view where) const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << where << ": non-finite value at coordinate " << i;
      throw Error(ErrorCode::kNonFinite, os.str());
    }
  }
}

void ParamVector::check_consistent() const {
  std::size_t total = 0;
  for (const auto& layer : manifest) total += layer.size();
  if (total != values.size()) {
    throw Error(ErrorCode::kManifestMismatch,
                "manifest describes " + std::to_string(total) + " values, vector has " +
                    std::to_string(values.size()));
  }
}

ParamVector zero_params(const ModelSpec& spec) {
  ParamVector p;
  if (spec.hidden_dim > 0) {
    p.manifest.push_back({"hidden.weight", {spec.input_dim, spec.hidden_dim}});
    p.manifest.push_back({"hidden.bias", {spec.hidden_dim}});
    p.manifest.push_back({"out.weight", {spec.hidden_dim, spec.output_dim}});
  } else {
    p.manifest.push_back({"out.weight", {spec.input_dim, spec.output_dim}});
  }
  p.manifest.push_back({"out.bias", {spec.output_dim}});
  p.values.assign(spec.parameter_count(), 0.0);
  return p;
}

ParamVector init_params(const ModelSpec& spec, std::size_t param_cap) {
  spec.validate(param_cap);
  ParamVector p = zero_params(spec);
  std::size_t offset = 0;
  for (std::size_t layer = 0; layer < p.manifest.size(); ++layer) {
    const LayerShape& shape = p.manifest[layer];
    if (shape.dims.size() == 2) {
      const double fan_in = static_cast<double>(shape.dims[0]);
      const double fan_out = static_cast<double>(shape.dims[1]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      CounterRng rng(derive_key(spec.seed, {layer}));
      for (std::size_t i = 0; i < shape.size(); ++i) {
        p.values[offset + i] = rng.next_uniform(-limit, limit);
      }
    }
    offset += shape.size();
  }
  return p;
}

ModelSpec infer_spec(const ParamVector& params) {
  params.check_consistent();
  const auto& m = params.manifest;
  const auto bad = [] {
    return Error(ErrorCode::kManifestMismatch, "manifest is not a supported model layout");
  };
  ModelSpec spec;
  if (m.size() == 2) {
    if (m[0].name != "out.weight" || m[0].dims.size() != 2 || m[1].name != "out.bias" ||
        m[1].dims.size() != 1 || m[1].dims[0] != m[0].dims[1]) {
      throw bad();
    }
    spec.input_dim = m[0].dims[0];
    spec.output_dim = m[0].dims[1];
  } else if (m.size() == 4) {
    if (m[0].name != "hidden.weight" || m[0].dims.size() != 2 || m[1].name != "hidden.bias" ||
        m[1].dims != std::vector<std::size_t>{m[0].dims[1]} || m[2].name != "out.weight" ||
        m[2].dims.size() != 2 || m[2].dims[0] != m[0].dims[1] || m[3].name != "out.bias" ||
        m[3].dims != std::vector<std::size_t>{m[2].dims[1]}) {
      throw bad();
    }
    spec.input_dim = m[0].dims[0];
    spec.hidden_dim = m[0].dims[1];
    spec.output_dim = m[2].dims[1];
  } else {
    throw bad();
  }
  if (spec.input_dim == 0 || spec.output_dim < 2) throw bad();
  return spec;
}

ParamVector subtract(const ParamVector& a, const ParamVector& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::kManifestMismatch, "subtract: shape mismatch");
  ParamVector out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= b.values[i];
  return out;
}

ParamVector add(const ParamVector& a, const ParamVector& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::kManifestMismatch, "add: shape mismatch");
  ParamVector out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
  return out;
}

double l2_norm(std::span<const double> v) noexcept {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

ForwardResult forward_loss(const ParamVector& params, const BatchView& batch) {
  const Layers l = split_layers(params);
  check_batch(l, batch);
  Activations a = forward_pass(l, batch);
  ForwardResult r;
  r.loss = mean_nll(a.probs, batch.labels);
  r.probs = std::move(a.probs);
  return r;
}

LossAndGradient loss_and_gradient(const ParamVector& params, const BatchView& batch) {
  const Layers l = split_layers(params);
  check_batch(l, batch);
  const std::size_t rows = batch.rows();
  Activations a = forward_pass(l, batch);

  LossAndGradient out;
  out.loss = mean_nll(a.probs, batch.labels);
  out.correct = count_correct(a.probs, batch.labels);
  out.gradient.manifest = params.manifest;
  out.gradient.values.assign(params.values.size(), 0.0);

  // d(mean CE)/d(logits) = (p - onehot(y)) / rows
  Matrix dlogits = std::move(a.probs);
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    dlogits(r, batch.labels[r]) -= 1.0;
    for (std::size_t j = 0; j < l.out; ++j) dlogits(r, j) *= inv_rows;
  }

  double* g = out.gradient.values.data();
  double* gw1 = nullptr;
  double* gb1 = nullptr;
  if (l.hidden > 0) {
    gw1 = g;
    gb1 = g + l.in * l.hidden;
    g = gb1 + l.hidden;
  }
  const std::size_t top_cols = l.hidden > 0 ? l.hidden : l.in;
  double* gw2 = g;
  double* gb2 = g + top_cols * l.out;
  const double* top_in = l.hidden > 0 ? a.hidden.data.data() : batch.features.data();

  for (std::size_t r = 0; r < rows; ++r) {
    const double* d = &dlogits.data[r * l.out];
    const double* x = top_in + r * top_cols;
    for (std::size_t k = 0; k < top_cols; ++k) {
      const double xk = x[k];
      if (xk == 0.0) continue;
      double* gk = gw2 + k * l.out;
      for (std::size_t j = 0; j < l.out; ++j) gk[j] += xk * d[j];
    }
    for (std::size_t j = 0; j < l.out; ++j) gb2[j] += d[j];
  }

  if (l.hidden > 0) {
    std::vector<double> dh(l.hidden);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* d = &dlogits.data[r * l.out];
      const double* h = &a.hidden.data[r * l.hidden];
      for (std::size_t k = 0; k < l.hidden; ++k) {
        if (h[k] <= 0.0) {
          dh[k] = 0.0;
          continue;
        }
        const double* w2k = l.w2 + k * l.out;
        double s = 0.0;
        for (std::size_t j = 0; j < l.out; ++j) s += w2k[j] * d[j];
        dh[k] = s;
      }
      const double* x = batch.features.data() + r * l.in;
      for (std::size_t i = 0; i < l.in; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        double* gi = gw1 + i * l.hidden;
        for (std::size_t k = 0; k < l.hidden; ++k) gi[k] += xi * dh[k];
      }
      for (std::size_t k = 0; k < l.hidden; ++k) gb1[k] += dh[k];
    }
  }
  return out;
}

ParamVector backward(const ParamVector& params, const BatchView& batch) {
  return loss_and_gradient(params, batch).gradient;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error(ErrorCode::kInvalidSpec, "batchSize must be positive");
  if (epochs_per_round == 0) throw Error(ErrorCode::kInvalidSpec, "epochsPerRound must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::kInvalidSpec, "learningRate must be finite and non-negative");
  }
}

TrainResult train_local(const ParamVector& params, const Dataset& dataset,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorCode::kEmptyInput, "train_local: empty dataset");
  params.check_finite("train_local input");

  TrainResult result;
  result.params = params;
  const std::size_t n = dataset.size();
  const std::size_t d = dataset.num_features;
  std::vector<double> xbuf;
  std::vector<std::uint32_t> ybuf;

  for (std::size_t epoch = 0; epoch < cfg.epochs_per_round; ++epoch) {
    const auto order = seeded_permutation(n, derive_key(cfg.shuffle_seed, {epoch}));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t rows = std::min(cfg.batch_size, n - start);
      xbuf.resize(rows * d);
      ybuf.resize(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto src = dataset.row(order[start + r]);
        std::copy(src.begin(), src.end(), xbuf.begin() + static_cast<std::ptrdiff_t>(r * d));
        ybuf[r] = dataset.labels[order[start + r]];
      }
      const BatchView batch{xbuf, ybuf, d};
      LossAndGradient lg = loss_and_gradient(result.params, batch);
      if (!std::isfinite(lg.loss)) {
        std::ostringstream os;
        os << "train_local: non-finite loss in epoch " << epoch << " at batch offset " << start
           << " (learning rate " << cfg.learning_rate << ")";
        throw Error(ErrorCode::kNonFinite, os.str());
      }
      loss_sum += lg.loss * static_cast<double>(rows);
      correct += lg.correct;
      auto& w = result.params.values;
      const auto& g = lg.gradient.values;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * g[i];
    }
    result.metrics.push_back({epoch, loss_sum / static_cast<double>(n),
                              static_cast<double>(correct) / static_cast<double>(n)});
  }
  result.params.check_finite("train_local output");
  return result;
}

EvalResult evaluate(const ParamVector& params, const Dataset& dataset) {
  if (dataset.empty()) throw Error(ErrorCode::kEmptyInput, "evaluate: empty dataset");
  const Layers l = split_layers(params);
  constexpr std::size_t kChunk = 1024;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  const std::size_t n = dataset.size();
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t rows = std::min(kChunk, n - start);
    const BatchView batch{
        std::span<const double>(dataset.features).subspan(start * dataset.num_features,
                                                          rows * dataset.num_features),
        std::span<const std::uint32_t>(dataset.labels).subspan(start, rows),
        dataset.num_features};
    check_batch(l, batch);
    const Activations a = forward_pass(l, batch);
    loss_sum += mean_nll(a.probs, batch.labels) * static_cast<double>(rows);
    correct += count_correct(a.probs, batch.labels);
  }
  return {loss_sum / static_cast<double>(n),
          static_cast<double>(correct) / static_cast<double>(n)};
}

std::vector<std::uint8_t> encode_checkpoint(const ParamVector& params) {
  params.check_consistent();
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.manifest.size()));
  for (const auto& layer : params.manifest) {
    w.u32(static_cast<std::uint32_t>(layer.name.size()));
    w.bytes(layer.name);
    w.u32(static_cast<std::uint32_t>(layer.dims.size()));
    for (std::size_t dim : layer.dims) w.u64(dim);
  }
  w.u64(params.values.size());
  w.f64_array(params.values);
  return w.take();
}

ParamVector decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, ErrorCode::kTruncated);
  if (r.str(4) != std::string_view(kCheckpointMagic, 4)) {
    throw Error(ErrorCode::kBadMagic, "not a DSC1 checkpoint");
  }
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch, "unsupported checkpoint version " + std::to_string(v));
  }
  ParamVector p;
  const std::uint32_t layers = r.u32();
  if (layers > 64) throw Error(ErrorCode::kParse, "implausible layer count");
  for (std::uint32_t i = 0; i < layers; ++i) {
    LayerShape shape;
    shape.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw Error(ErrorCode::kParse, "implausible layer rank");
    for (std::uint32_t k = 0; k < rank; ++k) shape.dims.push_back(r.u64());
    p.manifest.push_back(std::move(shape));
  }
  const std::uint64_t count = r.u64();
  if (count > r.remaining() / sizeof(double)) throw Error(ErrorCode::kTruncated, "checkpoint values truncated");
  p.values.resize(count);
  r.f64_array(p.values);
  if (r.remaining() != 0) throw Error(ErrorCode::kParse, "trailing bytes after checkpoint");
  p.check_consistent();
  return p;
}

void save_checkpoint(const ParamVector& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace disco
