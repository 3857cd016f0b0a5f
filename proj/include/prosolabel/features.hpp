#pragma once

// Feature tensors, the PFE1 interchange format, layer fusion and
// frame-to-phoneme pooling.
//
// PFE1 layout (all little-endian):
//   "PFE1" | u32 version=1 | u32 L | u32 T | u32 D | u32 axis_kind (0 frame, 1 phoneme)
//   | L*T*D float32, layer-major then step-major then dim.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prosolabel/corpus.hpp"
#include "prosolabel/error.hpp"
#include "prosolabel/matrix.hpp"

namespace prosolabel {

enum class AxisKind : std::uint32_t { Frame = 0, Phoneme = 1 };

class FeatureTensor {
 public:
  FeatureTensor() = default;

  FeatureTensor(std::size_t layers, std::size_t steps, std::size_t dim, AxisKind axis)
      : layers_(layers), steps_(steps), dim_(dim), axis_(axis), data_(layers * steps * dim, 0.0) {
    check_shape();
  }

  FeatureTensor(std::size_t layers, std::size_t steps, std::size_t dim, AxisKind axis,
                std::vector<double> data)
      : layers_(layers), steps_(steps), dim_(dim), axis_(axis), data_(std::move(data)) {
    check_shape();
    if (data_.size() != layers_ * steps_ * dim_) {
      fail(Errc::HeaderShapeMismatch, "payload of " + std::to_string(data_.size()) +
                                          " values for shape " + shape_string());
    }
  }

  std::size_t layers() const { return layers_; }
  std::size_t steps() const { return steps_; }
  std::size_t dim() const { return dim_; }
  AxisKind axis() const { return axis_; }

  double& at(std::size_t l, std::size_t t, std::size_t d) {
    return data_[(l * steps_ + t) * dim_ + d];
  }
  double at(std::size_t l, std::size_t t, std::size_t d) const {
    return data_[(l * steps_ + t) * dim_ + d];
  }

  // views dangle on temporaries, so those are rejected
  std::span<const double> data() const& { return data_; }
  std::span<double> data() & { return data_; }
  std::span<const double> data() && = delete;

  // steps x dim view of one layer.
  Eigen::Map<const Matrix> layer(std::size_t l) const& {
    return {data_.data() + l * steps_ * dim_, static_cast<Eigen::Index>(steps_),
            static_cast<Eigen::Index>(dim_)};
  }
  Eigen::Map<Matrix> layer(std::size_t l) & {
    return {data_.data() + l * steps_ * dim_, static_cast<Eigen::Index>(steps_),
            static_cast<Eigen::Index>(dim_)};
  }
  Eigen::Map<Matrix> layer(std::size_t l) && = delete;

  std::string shape_string() const {
    return std::to_string(layers_) + "x" + std::to_string(steps_) + "x" + std::to_string(dim_);
  }

  friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;

 private:
  void check_shape() const {
    if (layers_ == 0 || steps_ == 0 || dim_ == 0) {
      fail(Errc::HeaderShapeMismatch, "empty tensor shape " + shape_string());
    }
  }

  std::size_t layers_ = 0;
  std::size_t steps_ = 0;
  std::size_t dim_ = 0;
  AxisKind axis_ = AxisKind::Frame;
  std::vector<double> data_;
};

namespace detail {

inline constexpr char kFeatureMagic[4] = {'P', 'F', 'E', '1'};
inline constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

template <typename T>
void put(std::ostream& out, T value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& value) {
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) return false;
  value = to_little(value);
  return true;
}

}  // namespace detail

inline void write_features(const FeatureTensor& tensor, std::ostream& out) {
  std::vector<float> payload;
  payload.reserve(tensor.data().size());
  for (double v : tensor.data()) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) fail(Errc::NonFiniteValue, "tensor value not representable as float32");
    payload.push_back(f);
  }
  out.write(detail::kFeatureMagic, 4);
  detail::put<std::uint32_t>(out, detail::kFeatureVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.layers()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.steps()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.dim()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.axis()));
  for (float f : payload) detail::put<float>(out, f);
}

inline void write_features(const FeatureTensor& tensor, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::Io, "cannot write " + path.string());
  write_features(tensor, out);
}

inline FeatureTensor read_features(std::istream& in) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, detail::kFeatureMagic, 4) != 0) {
    fail(Errc::BadMagic, "not a PFE1 feature file");
  }
  std::uint32_t version = 0, layers = 0, steps = 0, dim = 0, axis = 0;
  if (!detail::get(in, version) || !detail::get(in, layers) || !detail::get(in, steps) ||
      !detail::get(in, dim) || !detail::get(in, axis)) {
    fail(Errc::HeaderShapeMismatch, "truncated header");
  }
  if (version != detail::kFeatureVersion) {
    fail(Errc::BadMagic, "unsupported PFE1 version " + std::to_string(version));
  }
  if (axis > 1) fail(Errc::HeaderShapeMismatch, "axis_kind " + std::to_string(axis));
  const std::size_t count = std::size_t{layers} * steps * dim;
  std::vector<double> data;
  data.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    float f = 0;
    if (!detail::get(in, f)) {
      fail(Errc::HeaderShapeMismatch, "payload holds " + std::to_string(i) + " of " +
                                          std::to_string(count) + " values");
    }
    if (!std::isfinite(f)) fail(Errc::NonFiniteValue, "payload value " + std::to_string(i));
    data.push_back(f);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    fail(Errc::HeaderShapeMismatch, "trailing bytes after " + std::to_string(count) + " values");
  }
  return FeatureTensor(layers, steps, dim, static_cast<AxisKind>(axis), std::move(data));
}

inline FeatureTensor read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot open " + path.string());
  return read_features(in);
}

// ---------------------------------------------------------------------------
// Layer fusion

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

// Learnable layer logits for the two input streams. An empty vector means the
// stream is absent.
struct FusionWeights {
  std::vector<double> acoustic;
  std::vector<double> linguistic;

  static FusionWeights uniform(std::size_t acoustic_layers, std::size_t linguistic_layers) {
    return {std::vector<double>(acoustic_layers, 0.0),
            std::vector<double>(linguistic_layers, 0.0)};
  }

  friend bool operator==(const FusionWeights&, const FusionWeights&) = default;
};

// sum_l softmax(logits)[l] * layer_l, as a steps x dim matrix.
inline Matrix fuse_layers_matrix(const FeatureTensor& tensor, std::span<const double> logits) {
  if (logits.size() != tensor.layers()) {
    fail(Errc::LayerCountMismatch, std::to_string(logits.size()) + " logits for " +
                                       std::to_string(tensor.layers()) + " layers");
  }
  const auto weights = softmax(logits);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(tensor.steps()),
                            static_cast<Eigen::Index>(tensor.dim()));
  for (std::size_t l = 0; l < tensor.layers(); ++l) out += weights[l] * tensor.layer(l);
  return out;
}

inline FeatureTensor fuse_layers(const FeatureTensor& tensor, std::span<const double> logits) {
  Matrix fused = fuse_layers_matrix(tensor, logits);
  std::vector<double> data(fused.data(), fused.data() + fused.size());
  return FeatureTensor(1, tensor.steps(), tensor.dim(), tensor.axis(), std::move(data));
}

// Vector-Jacobian product of fuse_layers with respect to the logits:
// dL/dz_l = w_l * <G, X_l - fused>.
inline std::vector<double> fuse_layers_logit_grad(const FeatureTensor& tensor,
                                                  std::span<const double> logits,
                                                  const Matrix& grad_out) {
  const auto weights = softmax(logits);
  const Matrix fused = fuse_layers_matrix(tensor, logits);
  const double baseline = (grad_out.array() * fused.array()).sum();
  std::vector<double> grad(tensor.layers());
  for (std::size_t l = 0; l < tensor.layers(); ++l) {
    grad[l] = weights[l] * ((grad_out.array() * tensor.layer(l).array()).sum() - baseline);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Frame -> phoneme pooling

// Largest |sum(durations) - frames| absorbed by adjusting the final span.
inline constexpr int kDurationTolerance = 2;

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Contiguous frame spans per phoneme after reconciliation: the final span is
// stretched or cut to end at `frames`, and every span is clamped to the grid.
inline std::vector<Span> phoneme_spans(std::span<const int> durations, std::size_t frames,
                                       int tolerance = kDurationTolerance) {
  long long total = 0;
  for (int d : durations) {
    if (d < 0) fail(Errc::DurationSumMismatch, "negative duration");
    total += d;
  }
  const long long diff = total - static_cast<long long>(frames);
  if (std::llabs(diff) > tolerance) {
    fail(Errc::DurationSumMismatch, "durations sum to " + std::to_string(total) + " for " +
                                        std::to_string(frames) + " frames");
  }
  std::vector<Span> spans(durations.size());
  std::size_t cursor = 0;
  for (std::size_t p = 0; p < durations.size(); ++p) {
    const std::size_t begin = std::min(cursor, frames);
    std::size_t end = std::min(cursor + static_cast<std::size_t>(durations[p]), frames);
    if (p + 1 == durations.size()) end = std::max(begin, frames);
    spans[p] = {begin, end};
    cursor += static_cast<std::size_t>(durations[p]);
  }
  return spans;
}

// Mean of each phoneme's frames, per layer. A phoneme with an empty span takes
// the frame just before its span start (frame 0 when it starts the utterance).
inline FeatureTensor pool_to_phonemes(const FeatureTensor& frames, std::span<const int> durations,
                                      int tolerance = kDurationTolerance) {
  if (frames.axis() != AxisKind::Frame) {
    fail(Errc::DurationSumMismatch, "pooling expects a frame-axis tensor");
  }
  if (durations.empty()) fail(Errc::DurationSumMismatch, "no phonemes to pool into");
  const auto spans = phoneme_spans(durations, frames.steps(), tolerance);
  FeatureTensor out(frames.layers(), spans.size(), frames.dim(), AxisKind::Phoneme);
  for (std::size_t l = 0; l < frames.layers(); ++l) {
    const auto src = frames.layer(l);
    auto dst = out.layer(l);
    for (std::size_t p = 0; p < spans.size(); ++p) {
      const auto [begin, end] = spans[p];
      const auto row = static_cast<Eigen::Index>(p);
      if (end > begin) {
        dst.row(row) = src.middleRows(static_cast<Eigen::Index>(begin),
                                      static_cast<Eigen::Index>(end - begin))
                           .colwise()
                           .mean();
      } else {
        const std::size_t fallback = begin == 0 ? 0 : std::min(begin, frames.steps()) - 1;
        dst.row(row) = src.row(static_cast<Eigen::Index>(fallback));
      }
    }
  }
  return out;
}

inline FeatureTensor one_hot_stream(std::span<const PhonemeToken> phonemes,
                                    const PhonemeInventory& inventory) {
  if (phonemes.empty()) fail(Errc::PhonemeCountMismatch, "empty phoneme sequence");
  FeatureTensor out(1, phonemes.size(), inventory.size(), AxisKind::Phoneme);
  for (std::size_t p = 0; p < phonemes.size(); ++p) {
    out.at(0, p, inventory.index_of(phonemes[p].symbol)) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stream assembly

inline constexpr std::string_view kStreamNone = "none";
inline constexpr std::string_view kStreamOneHot = "one-hot";
inline constexpr std::string_view kStreamMelspec = "melspec";
inline constexpr std::string_view kStreamF0 = "f0";

// Each side names either "none", a native stream, or a key in the manifest's
// "features" map. "one-hot" is linguistic-only and computed on the fly.
struct StreamConfig {
  std::string acoustic = std::string(kStreamNone);
  std::string linguistic = std::string(kStreamNone);

  bool has_acoustic() const { return acoustic != kStreamNone; }
  bool has_linguistic() const { return linguistic != kStreamNone; }

  void validate() const {
    if (!has_acoustic() && !has_linguistic()) {
      fail(Errc::InvalidConfig, "acoustic and linguistic streams cannot both be none");
    }
    if (acoustic == kStreamOneHot) {
      fail(Errc::InvalidConfig, "one-hot is a linguistic stream");
    }
    if (acoustic.empty() || linguistic.empty()) fail(Errc::InvalidConfig, "empty stream name");
  }

  friend bool operator==(const StreamConfig&, const StreamConfig&) = default;
};

// Raw per-utterance tensors as read from disk (or built natively).
struct StreamTensors {
  std::optional<FeatureTensor> acoustic;
  std::optional<FeatureTensor> linguistic;
};

inline FeatureTensor load_stream(const Utterance& utt, const std::string& stream,
                                 const std::filesystem::path& manifest_dir) {
  auto it = utt.features.find(stream);
  if (it == utt.features.end()) {
    fail(Errc::MissingStream, "utterance '" + utt.id + "' has no '" + stream + "' features");
  }
  std::filesystem::path path(it->second);
  if (!path.is_absolute() && !manifest_dir.empty()) path = manifest_dir / path;
  try {
    return read_features(path);
  } catch (const Error& e) {
    fail(e.code(), "utterance '" + utt.id + "' stream '" + stream + "': " + e.what());
  }
}

inline StreamTensors load_streams(const Utterance& utt, const StreamConfig& cfg,
                                  const std::filesystem::path& manifest_dir) {
  StreamTensors out;
  if (cfg.has_acoustic()) out.acoustic = load_stream(utt, cfg.acoustic, manifest_dir);
  if (cfg.has_linguistic() && cfg.linguistic != kStreamOneHot) {
    out.linguistic = load_stream(utt, cfg.linguistic, manifest_dir);
  }
  return out;
}

// Phoneme-axis tensors for both streams, all layers kept. Acoustic frames are
// pooled layer by layer here so that fusion can run on the short phoneme axis.
struct PhonemeStreams {
  std::optional<FeatureTensor> acoustic;
  std::optional<FeatureTensor> linguistic;

  std::size_t acoustic_layers() const { return acoustic ? acoustic->layers() : 0; }
  std::size_t linguistic_layers() const { return linguistic ? linguistic->layers() : 0; }
  std::size_t acoustic_dim() const { return acoustic ? acoustic->dim() : 0; }
  std::size_t linguistic_dim() const { return linguistic ? linguistic->dim() : 0; }
};

namespace detail {

inline FeatureTensor to_phoneme_axis(const Utterance& utt, const FeatureTensor& acoustic) {
  if (acoustic.axis() == AxisKind::Phoneme) {
    if (acoustic.steps() != utt.phonemes.size()) {
      fail(Errc::PhonemeCountMismatch, "utterance '" + utt.id + "': acoustic tensor has " +
                                           std::to_string(acoustic.steps()) + " rows for " +
                                           std::to_string(utt.phonemes.size()) + " phonemes");
    }
    return acoustic;
  }
  const auto durations = utt.durations();
  try {
    return pool_to_phonemes(acoustic, durations);
  } catch (const Error& e) {
    fail(e.code(), "utterance '" + utt.id + "': " + e.what());
  }
}

inline const FeatureTensor& check_linguistic(const Utterance& utt, const FeatureTensor& ling) {
  if (ling.axis() != AxisKind::Phoneme || ling.steps() != utt.phonemes.size()) {
    fail(Errc::PhonemeCountMismatch, "utterance '" + utt.id + "': linguistic tensor has " +
                                         std::to_string(ling.steps()) + " rows for " +
                                         std::to_string(utt.phonemes.size()) + " phonemes");
  }
  return ling;
}

}  // namespace detail

inline PhonemeStreams prepare_streams(const Utterance& utt, const StreamConfig& cfg,
                                      const StreamTensors& tensors,
                                      const PhonemeInventory& inventory = default_inventory()) {
  cfg.validate();
  PhonemeStreams out;
  if (cfg.has_acoustic()) {
    if (!tensors.acoustic) fail(Errc::MissingStream, "utterance '" + utt.id + "': acoustic");
    out.acoustic = detail::to_phoneme_axis(utt, *tensors.acoustic);
  }
  if (cfg.linguistic == kStreamOneHot) {
    out.linguistic = one_hot_stream(utt.phonemes, inventory);
  } else if (cfg.has_linguistic()) {
    if (!tensors.linguistic) fail(Errc::MissingStream, "utterance '" + utt.id + "': linguistic");
    out.linguistic = detail::check_linguistic(utt, *tensors.linguistic);
  }
  return out;
}

// Fuses already-pooled streams and concatenates [acoustic | linguistic].
inline Matrix assemble_prepared(const PhonemeStreams& streams, const FusionWeights& weights,
                                std::size_t phonemes) {
  const auto rows = static_cast<Eigen::Index>(phonemes);
  const auto aco_dim = static_cast<Eigen::Index>(streams.acoustic_dim());
  const auto ling_dim = static_cast<Eigen::Index>(streams.linguistic_dim());
  Matrix out(rows, aco_dim + ling_dim);
  if (streams.acoustic) out.leftCols(aco_dim) = fuse_layers_matrix(*streams.acoustic, weights.acoustic);
  if (streams.linguistic) {
    out.rightCols(ling_dim) = fuse_layers_matrix(*streams.linguistic, weights.linguistic);
  }
  return out;
}

// Phoneme-level model input, P x (D_aco + D_ling). The acoustic stream is
// fused on the frame axis and then pooled; an absent stream adds no columns.
inline Matrix assemble_input(const Utterance& utt, const StreamConfig& cfg,
                             const StreamTensors& tensors, const FusionWeights& weights,
                             const PhonemeInventory& inventory = default_inventory()) {
  cfg.validate();
  const auto rows = static_cast<Eigen::Index>(utt.phonemes.size());
  Matrix aco(rows, 0);
  Matrix ling(rows, 0);
  if (cfg.has_acoustic()) {
    if (!tensors.acoustic) fail(Errc::MissingStream, "utterance '" + utt.id + "': acoustic");
    const FeatureTensor fused = fuse_layers(*tensors.acoustic, weights.acoustic);
    const FeatureTensor pooled = detail::to_phoneme_axis(utt, fused);
    aco = pooled.layer(0);
  }
  if (cfg.linguistic == kStreamOneHot) {
    ling = fuse_layers_matrix(one_hot_stream(utt.phonemes, inventory),
                              weights.linguistic.empty() ? std::vector<double>{0.0}
                                                         : weights.linguistic);
  } else if (cfg.has_linguistic()) {
    if (!tensors.linguistic) fail(Errc::MissingStream, "utterance '" + utt.id + "': linguistic");
    ling = fuse_layers_matrix(detail::check_linguistic(utt, *tensors.linguistic),
                              weights.linguistic);
  }
  Matrix out(rows, aco.cols() + ling.cols());
  out.leftCols(aco.cols()) = aco;
  out.rightCols(ling.cols()) = ling;
  return out;
}

}  // namespace prosolabel
