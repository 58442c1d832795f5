#pragma once

// Attention-MLP regressor over pixel feature sequences:
//
//   embed (12 -> d) -> layer norm -> multi-head self-attention (+ residual)
//   -> per-pixel FC+ReLU x P -> mean pool -> FC+ReLU x Q -> linear head (28)
//
// with P + Q + 2 = n_fc_layers (3 + 6 + 2 = 11 at the default), plus the
// exact reverse-mode gradient of the masked MSE loss.
//
// All parameters live in one flat vector; Layout maps tensor names to slices
// in a fixed order, which is also the checkpoint payload order.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "streetreview/core.hpp"
#include "streetreview/ratings.hpp"
#include "streetreview/segmentation.hpp"

namespace streetreview::model {

inline constexpr std::size_t kInputDim = segmentation::kFeatureDim;
inline constexpr std::size_t kOutputDim = ratings::kNumOutputs;
inline constexpr double kLayerNormEps = 1e-5;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Output = std::array<double, kOutputDim>;
using Mask = std::array<unsigned char, kOutputDim>;

enum class Activation { relu };

struct ModelConfig {
  std::size_t d_model = 96;
  std::size_t n_heads = 6;
  std::size_t n_fc_layers = 11;
  std::size_t seq_len_hint = 1024;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  // FC layers other than embed and head: a third run per pixel, the rest after pooling.
  std::size_t pixel_layers() const { return (n_fc_layers - 2) / 3; }
  std::size_t pooled_layers() const { return n_fc_layers - 2 - pixel_layers(); }

  void validate() const {
    if (d_model == 0 || n_heads == 0) throw invalid_argument("d_model and n_heads must be > 0");
    if (d_model % n_heads != 0)
      throw invalid_argument("d_model " + std::to_string(d_model) +
                             " not divisible by n_heads " + std::to_string(n_heads));
    if (n_fc_layers < 3) throw invalid_argument("n_fc_layers must be >= 3");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"n_heads", c.n_heads},
          {"n_fc_layers", c.n_fc_layers}, {"seq_len_hint", c.seq_len_hint},
          {"activation", "relu"},        {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_fc_layers = j.at("n_fc_layers").get<std::size_t>();
  c.seq_len_hint = j.value("seq_len_hint", std::size_t{1024});
  if (j.value("activation", std::string("relu")) != "relu")
    throw invalid_argument("unsupported activation " + j.at("activation").dump());
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

// ---------------------------------------------------------------------------

struct Tensor {
  std::string name;
  std::size_t rows = 0, cols = 0, offset = 0;
  std::size_t size() const { return rows * cols; }
  bool is_bias() const { return rows == 1; }
};

struct DenseSlot {
  std::size_t weight = 0, bias = 0;  // tensor indices
};

class Layout {
 public:
  explicit Layout(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    embed = dense("embed", kInputDim, d);
    norm_gain = add("norm.gain", 1, d);
    norm_bias = add("norm.bias", 1, d);
    query = dense("attn.query", d, d);
    key = dense("attn.key", d, d);
    value = dense("attn.value", d, d);
    out = dense("attn.out", d, d);
    for (std::size_t i = 0; i < cfg.pixel_layers(); ++i)
      pixel.push_back(dense("pixel_fc." + std::to_string(i), d, d));
    for (std::size_t i = 0; i < cfg.pooled_layers(); ++i)
      pooled.push_back(dense("pooled_fc." + std::to_string(i), d, d));
    head = dense("head", d, kOutputDim);
  }

  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  std::size_t total() const noexcept { return total_; }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].name == name) return i;
    throw invalid_argument("no tensor named " + std::string(name));
  }

  DenseSlot embed, query, key, value, out, head;
  std::size_t norm_gain = 0, norm_bias = 0;
  std::vector<DenseSlot> pixel, pooled;

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    tensors_.push_back({std::move(name), rows, cols, total_});
    total_ += rows * cols;
    return tensors_.size() - 1;
  }
  DenseSlot dense(const std::string& name, std::size_t in, std::size_t outd) {
    DenseSlot s;
    s.weight = add(name + ".weight", in, outd);
    s.bias = add(name + ".bias", 1, outd);
    return s;
  }

  std::vector<Tensor> tensors_;
  std::size_t total_ = 0;
};

// Weights or gradients: a flat vector viewed through the layout.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(const ModelConfig& cfg) : config_(cfg), layout_(cfg), values_(layout_.total(), 0.0) {}

  const ModelConfig& config() const noexcept { return config_; }
  const Layout& layout() const noexcept { return layout_; }
  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  Eigen::Map<Mat> tensor(std::size_t i) {
    const auto& t = layout_.tensors()[i];
    return {values_.data() + t.offset, static_cast<Eigen::Index>(t.rows),
            static_cast<Eigen::Index>(t.cols)};
  }
  Eigen::Map<const Mat> tensor(std::size_t i) const {
    const auto& t = layout_.tensors()[i];
    return {values_.data() + t.offset, static_cast<Eigen::Index>(t.rows),
            static_cast<Eigen::Index>(t.cols)};
  }
  Eigen::Map<Mat> tensor(std::string_view name) { return tensor(layout_.index_of(name)); }
  Eigen::Map<const Mat> tensor(std::string_view name) const {
    return tensor(layout_.index_of(name));
  }

  void set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

  bool operator==(const ParamVector& o) const {
    return config_ == o.config_ && values_ == o.values_;
  }

 private:
  ModelConfig config_;
  Layout layout_{ModelConfig{}};
  std::vector<double> values_;
};

using ModelParams = ParamVector;
using ParamGradients = ParamVector;

// Parameter count for a config, from layer shapes.
inline std::size_t parameter_count(const ModelConfig& cfg) { return Layout(cfg).total(); }

inline constexpr std::size_t kParameterBudget = 1'000'000;

// Glorot-uniform weights, zero biases, unit layer-norm gain; deterministic per
// config.seed. Configs at or above the parameter budget are rejected unless
// `enforce_budget` is false.
inline ModelParams init_model(const ModelConfig& cfg, bool enforce_budget = true) {
  ModelParams p(cfg);
  if (enforce_budget && p.size() >= kParameterBudget)
    throw invalid_argument("model has " + std::to_string(p.size()) +
                           " parameters, budget is " + std::to_string(kParameterBudget));
  Rng rng(cfg.seed);
  const auto& layout = p.layout();
  for (std::size_t i = 0; i < layout.tensors().size(); ++i) {
    const auto& t = layout.tensors()[i];
    auto m = p.tensor(i);
    if (i == layout.norm_gain) {
      m.setOnes();
    } else if (!t.is_bias()) {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward

// Intermediate activations kept for the backward pass (and for structural tests).
struct ForwardCache {
  Mat input;                   // S x 12
  Mat embedded;                // S x d
  Mat normalized_hat;          // S x d, (x - mean) / std
  Eigen::VectorXd inv_std;     // S
  Mat normalized;              // S x d, gain * hat + bias
  Mat query, key, value;       // S x d
  std::vector<Mat> attention;  // per head, S x S softmax weights
  Mat heads;                   // S x d, concatenated head outputs
  Mat residual;                // S x d, embedded + attention projection
  std::vector<Mat> pixel_pre, pixel_act;  // per per-pixel layer
  RowVec pooled;                          // 1 x d
  std::vector<RowVec> pooled_pre, pooled_act;
  RowVec output;  // 1 x 28
};

namespace detail {

inline Mat affine(const Mat& x, Eigen::Map<const Mat> w, Eigen::Map<const Mat> b) {
  Mat y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

inline Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

inline void softmax_rows(Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

}  // namespace detail

inline Eigen::Map<const Mat> input_matrix(const segmentation::FeatureSequence& seq) {
  if (seq.rows.empty() || seq.rows.size() % kInputDim != 0)
    throw invalid_argument("feature sequence " + seq.frame_id + ": expected S x 12 values, got " +
                           std::to_string(seq.rows.size()));
  return {seq.rows.data(), static_cast<Eigen::Index>(seq.size()),
          static_cast<Eigen::Index>(kInputDim)};
}

inline void forward(const ModelParams& p, const segmentation::FeatureSequence& seq,
                    ForwardCache& c) {
  using detail::affine;
  const auto& L = p.layout();
  const auto& cfg = p.config();
  const auto S = static_cast<Eigen::Index>(seq.size());
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());

  c.input = input_matrix(seq);
  c.embedded = affine(c.input, p.tensor(L.embed.weight), p.tensor(L.embed.bias));

  const Eigen::VectorXd mu = c.embedded.rowwise().mean();
  Mat centered = c.embedded.colwise() - mu;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  c.inv_std = (var.array() + kLayerNormEps).rsqrt();
  c.normalized_hat = centered.array().colwise() * c.inv_std.array();
  c.normalized = (c.normalized_hat.array().rowwise() * p.tensor(L.norm_gain).row(0).array())
                     .rowwise() +
                 p.tensor(L.norm_bias).row(0).array();

  c.query = affine(c.normalized, p.tensor(L.query.weight), p.tensor(L.query.bias));
  c.key = affine(c.normalized, p.tensor(L.key.weight), p.tensor(L.key.bias));
  c.value = affine(c.normalized, p.tensor(L.value.weight), p.tensor(L.value.bias));

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.attention.resize(cfg.n_heads);
  c.heads.resize(S, d);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
    Mat& a = c.attention[h];
    a.noalias() = c.query.middleCols(off, dh) * c.key.middleCols(off, dh).transpose();
    a *= scale;
    detail::softmax_rows(a);
    c.heads.middleCols(off, dh).noalias() = a * c.value.middleCols(off, dh);
  }
  c.residual = c.embedded + affine(c.heads, p.tensor(L.out.weight), p.tensor(L.out.bias));

  c.pixel_pre.resize(L.pixel.size());
  c.pixel_act.resize(L.pixel.size());
  const Mat* z = &c.residual;
  for (std::size_t i = 0; i < L.pixel.size(); ++i) {
    c.pixel_pre[i] = affine(*z, p.tensor(L.pixel[i].weight), p.tensor(L.pixel[i].bias));
    c.pixel_act[i] = detail::relu(c.pixel_pre[i]);
    z = &c.pixel_act[i];
  }
  c.pooled = z->colwise().mean();

  c.pooled_pre.resize(L.pooled.size());
  c.pooled_act.resize(L.pooled.size());
  const RowVec* u = &c.pooled;
  for (std::size_t i = 0; i < L.pooled.size(); ++i) {
    c.pooled_pre[i] = *u * p.tensor(L.pooled[i].weight) + p.tensor(L.pooled[i].bias);
    c.pooled_act[i] = c.pooled_pre[i].cwiseMax(0.0);
    u = &c.pooled_act[i];
  }
  c.output = *u * p.tensor(L.head.weight) + p.tensor(L.head.bias);
}

inline Output forward(const ModelParams& p, const segmentation::FeatureSequence& seq) {
  ForwardCache c;
  forward(p, seq, c);
  Output out;
  for (std::size_t i = 0; i < kOutputDim; ++i) out[i] = c.output(static_cast<Eigen::Index>(i));
  return out;
}

// ---------------------------------------------------------------------------
// Loss

inline std::size_t unmasked(const Mask& mask) {
  std::size_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

inline Mask full_mask() {
  Mask m;
  m.fill(1);
  return m;
}

// Mean squared error over unmasked entries.
inline double loss_mse(std::span<const double> pred, std::span<const double> target,
                       std::span<const unsigned char> mask) {
  if (pred.size() != target.size() || pred.size() != mask.size())
    throw invalid_argument("loss_mse: shape mismatch");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i]) {
      const double e = pred[i] - target[i];
      s += e * e;
      ++n;
    }
  if (n == 0) throw invalid_argument("loss_mse: all entries masked");
  return s / static_cast<double>(n);
}

struct Example {
  segmentation::FeatureSequence seq;
  Output target{};
  Mask mask = full_mask();
};

// ---------------------------------------------------------------------------
// Backward

// Adds `weight` * d(loss)/d(params) for one example into grad and returns the
// example loss. The cache must hold this example's forward pass.
inline double backward(const ModelParams& p, const ForwardCache& c, const Output& target,
                       const Mask& mask, double weight, ParamGradients& g) {
  const auto& L = p.layout();
  const auto& cfg = p.config();
  const auto S = c.input.rows();
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());

  const std::size_t n = unmasked(mask);
  if (n == 0) throw invalid_argument("loss_mse: all entries masked");
  RowVec dy = RowVec::Zero(static_cast<Eigen::Index>(kOutputDim));
  double loss = 0.0;
  for (std::size_t i = 0; i < kOutputDim; ++i) {
    if (!mask[i]) continue;
    const double e = c.output(static_cast<Eigen::Index>(i)) - target[i];
    loss += e * e;
    dy(static_cast<Eigen::Index>(i)) = 2.0 * e * weight / static_cast<double>(n);
  }
  loss /= static_cast<double>(n);

  auto accumulate_dense = [&](const DenseSlot& slot, const auto& x, const auto& dz) {
    g.tensor(slot.weight).noalias() += x.transpose() * dz;
    g.tensor(slot.bias).row(0) += dz.colwise().sum();
  };

  // Head and pooled stack.
  const RowVec& last_pooled = L.pooled.empty() ? c.pooled : c.pooled_act.back();
  accumulate_dense(L.head, last_pooled, dy);
  RowVec du = dy * p.tensor(L.head.weight).transpose();
  for (std::size_t i = L.pooled.size(); i-- > 0;) {
    const RowVec da = du.array() * (c.pooled_pre[i].array() > 0.0).cast<double>();
    const RowVec& prev = i == 0 ? c.pooled : c.pooled_act[i - 1];
    accumulate_dense(L.pooled[i], prev, da);
    du = da * p.tensor(L.pooled[i].weight).transpose();
  }

  // Mean pool spreads the gradient evenly over rows.
  Mat dz = (Eigen::VectorXd::Ones(S) * du) / static_cast<double>(S);
  for (std::size_t i = L.pixel.size(); i-- > 0;) {
    const Mat dpre = dz.array() * (c.pixel_pre[i].array() > 0.0).cast<double>();
    const Mat& prev = i == 0 ? c.residual : c.pixel_act[i - 1];
    accumulate_dense(L.pixel[i], prev, dpre);
    dz = dpre * p.tensor(L.pixel[i].weight).transpose();
  }

  // Residual: dz flows to both the embedding and the attention output.
  Mat dembed = dz;
  accumulate_dense(L.out, c.heads, dz);
  const Mat dheads = dz * p.tensor(L.out.weight).transpose();

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dq(S, dheads.cols()), dk(S, dheads.cols()), dv(S, dheads.cols());
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
    const Mat& a = c.attention[h];
    const auto dhh = dheads.middleCols(off, dh);
    const Mat da = dhh * c.value.middleCols(off, dh).transpose();
    dv.middleCols(off, dh).noalias() = a.transpose() * dhh;
    const Eigen::VectorXd rowdot = (a.array() * da.array()).rowwise().sum();
    const Mat dscore = (a.array() * (da.colwise() - rowdot).array()) * scale;
    dq.middleCols(off, dh).noalias() = dscore * c.key.middleCols(off, dh);
    dk.middleCols(off, dh).noalias() = dscore.transpose() * c.query.middleCols(off, dh);
  }
  accumulate_dense(L.query, c.normalized, dq);
  accumulate_dense(L.key, c.normalized, dk);
  accumulate_dense(L.value, c.normalized, dv);
  Mat dnorm = dq * p.tensor(L.query.weight).transpose();
  dnorm.noalias() += dk * p.tensor(L.key.weight).transpose();
  dnorm.noalias() += dv * p.tensor(L.value.weight).transpose();

  // Layer norm.
  g.tensor(L.norm_gain).row(0) += (dnorm.array() * c.normalized_hat.array()).colwise().sum().matrix();
  g.tensor(L.norm_bias).row(0) += dnorm.colwise().sum();
  const Mat dhat = dnorm.array().rowwise() * p.tensor(L.norm_gain).row(0).array();
  const Eigen::VectorXd mean_dhat = dhat.rowwise().mean();
  const Eigen::VectorXd mean_dhat_hat = (dhat.array() * c.normalized_hat.array()).rowwise().mean();
  Mat dx = dhat.colwise() - mean_dhat;
  dx.array() -= c.normalized_hat.array().colwise() * mean_dhat_hat.array();
  dx.array().colwise() *= c.inv_std.array();
  dembed += dx;

  accumulate_dense(L.embed, c.input, dembed);
  return loss;
}

// Gradient of the mean batch loss. Each example is differentiated into its own
// buffer and the buffers are summed in batch order, so the result does not
// depend on `jobs`.
inline ParamGradients gradients(const ModelParams& p, std::span<const Example* const> batch,
                                std::size_t jobs = 1, double* mean_loss = nullptr) {
  if (batch.empty()) throw invalid_argument("gradients: empty batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  std::vector<ParamGradients> parts(batch.size(), ParamGradients(p.config()));
  std::vector<double> losses(batch.size());
  auto work = [&](std::size_t i) {
    ForwardCache c;
    forward(p, batch[i]->seq, c);
    losses[i] = backward(p, c, batch[i]->target, batch[i]->mask, w, parts[i]);
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, batch.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < batch.size(); i += jobs) work(i);
      });
  }
  ParamGradients total(p.config());
  auto& tv = total.values();
  for (const auto& part : parts)
    for (std::size_t k = 0; k < tv.size(); ++k) tv[k] += part.values()[k];
  if (mean_loss) {
    double s = 0;
    for (double l : losses) s += l;
    *mean_loss = s * w;
  }
  return total;
}

inline ParamGradients gradients(const ModelParams& p, std::span<const Example> batch,
                                std::size_t jobs = 1, double* mean_loss = nullptr) {
  std::vector<const Example*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  return gradients(p, std::span<const Example* const>(ptrs), jobs, mean_loss);
}

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
  Output raw{};
  Output reported{};  // clamped to [1, 4]
  std::array<bool, kOutputDim> clamped{};
};

inline Prediction report(const Output& raw) {
  Prediction p;
  p.raw = raw;
  for (std::size_t i = 0; i < kOutputDim; ++i) {
    p.reported[i] = std::clamp(raw[i], 1.0, 4.0);
    p.clamped[i] = p.reported[i] != raw[i];
  }
  return p;
}

inline std::vector<Prediction> predict_batch(const ModelParams& p,
                                             std::span<const segmentation::FeatureSequence> seqs,
                                             std::size_t jobs = 1) {
  std::vector<Prediction> out(seqs.size());
  jobs = std::max<std::size_t>(1, std::min(jobs, seqs.size()));
  auto work = [&](std::size_t t) {
    for (std::size_t i = t; i < seqs.size(); i += jobs) out[i] = report(forward(p, seqs[i]));
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(work, t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: one JSON header line, then the weights as float32 little-endian
// in layout order.

inline constexpr int kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ModelParams& p, const json& extra = json::object()) {
  json names = json::array();
  for (const auto& t : p.layout().tensors())
    names.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  json header = {{"format", "streetreview-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"config", to_json(p.config())},
                 {"parameter_count", p.size()},
                 {"tensors", names},
                 {"extra", extra}};
  ByteWriter w;
  w.bytes(header.dump());
  w.bytes("\n");
  for (double v : p.values()) w.put<float>(static_cast<float>(v));
  return w.str();
}

struct Checkpoint {
  ModelParams params;
  json extra;
};

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint",
                                    const ModelConfig* expected = nullptr) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw format_error(what + ": missing header");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw format_error(what + ": bad header: " + e.what());
  }
  if (header.value("format", "") != "streetreview-checkpoint")
    throw format_error(what + ": not a checkpoint");
  if (header.value("version", 0) != kCheckpointVersion)
    throw format_error(what + ": unsupported version");
  const ModelConfig cfg = model_config_from_json(header.at("config"));
  if (expected && !(cfg == *expected))
    throw format_error(what + ": config mismatch with requested model");
  ModelParams p(cfg);
  if (header.at("parameter_count").get<std::size_t>() != p.size())
    throw format_error(what + ": parameter count does not match config");
  const auto& tensors = header.at("tensors");
  if (tensors.size() != p.layout().tensors().size())
    throw format_error(what + ": tensor list does not match config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = p.layout().tensors()[i];
    if (tensors[i].at("name") != t.name ||
        tensors[i].at("shape") != json::array({t.rows, t.cols}))
      throw format_error(what + ": tensor " + t.name + " shape mismatch");
  }
  ByteReader r(bytes.substr(nl + 1), what);
  if (r.remaining() != p.size() * sizeof(float))
    throw format_error(what + ": payload size does not match parameter count");
  for (double& v : p.values()) v = r.get<float>();
  return {std::move(p), header.value("extra", json::object())};
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path,
                            const json& extra = json::object()) {
  write_file_atomic(path, encode_checkpoint(p, extra));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const ModelConfig* expected = nullptr) {
  return decode_checkpoint(read_file(path), path.string(), expected);
}

}  // namespace streetreview::model
