#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kaer/constrained.hpp"
#include "kaer/tokenizer.hpp"

namespace kaer {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using IndexMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Additive pre-softmax penalty for invisible pairs.
inline constexpr double kMaskPenalty = -1e9;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kProbFloor = 1e-12;

struct EncoderConfig {
  std::int64_t vocab_size = 0;
  std::int64_t d_model = 64;
  std::int64_t n_heads = 4;
  std::int64_t n_layers = 2;
  std::int64_t d_ff = 128;
  std::int64_t max_position = 128;
  double dropout_rate = 0.1;
  bool segment_embeddings = true;
  std::uint64_t seed = 0;

  std::int64_t d_head() const { return d_model / n_heads; }
  /// Throws DomainError on inconsistent shapes.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Weights of one post-LN encoder block. Biases and gains are 1 x n.
template <typename Scalar>
struct LayerParams {
  Matrix<Scalar> wq, wk, wv, wo;
  Matrix<Scalar> bq, bk, bv, bo;
  Matrix<Scalar> ln1_gain, ln1_bias;
  Matrix<Scalar> w1, b1, w2, b2;
  Matrix<Scalar> ln2_gain, ln2_bias;
};

template <typename Scalar>
struct EncoderParams {
  EncoderConfig config;
  Matrix<Scalar> token_emb;    // vocab x d
  Matrix<Scalar> position_emb; // max_position x d
  Matrix<Scalar> segment_emb;  // 2 x d
  Matrix<Scalar> emb_ln_gain, emb_ln_bias;
  std::vector<LayerParams<Scalar>> layers;
  Matrix<Scalar> head_w;  // d x 2
  Matrix<Scalar> head_b;  // 1 x 2

  /// Same shapes, all zeros.
  static EncoderParams zeros_like(const EncoderConfig& config);
  /// Seeded initialization: N(0, 0.02) embeddings, Glorot-uniform projections,
  /// unit gains and zero biases.
  static EncoderParams initialize(const EncoderConfig& config);

  /// Every tensor in declaration order with a stable name.
  std::vector<std::pair<std::string, Matrix<Scalar>*>> tensors();
  std::vector<std::pair<std::string, const Matrix<Scalar>*>> tensors() const;

  bool all_finite() const;
  std::size_t parameter_count() const;

  template <typename To>
  EncoderParams<To> cast() const;
};

/// A padded batch: [PAD] positions have zero rows and columns in `visible`.
struct Batch {
  IndexMatrix tokens;          // B x L
  IndexMatrix soft_positions;  // B x L
  IndexMatrix segments;        // B x L
  std::vector<VisibleMatrix> visible;
  std::vector<int> labels;
  std::vector<std::int64_t> lengths;

  std::int64_t size() const { return tokens.rows(); }
  std::int64_t width() const { return tokens.cols(); }
};

Batch make_batch(std::span<const InjectedSequence> sequences);

struct ForwardOptions {
  bool train = false;
  std::uint64_t dropout_seed = 0;
  int threads = 1;
};

/// Attention weights captured for inspection: one L x L matrix per head.
template <typename Scalar>
struct AttentionTrace {
  std::vector<Matrix<Scalar>> weights;
};

/// token + soft-position + segment embeddings, then layer norm (one example).
template <typename Scalar>
Matrix<Scalar> embed_example(const Batch& batch, std::int64_t row, const EncoderParams<Scalar>& params);

template <typename Scalar>
std::vector<Matrix<Scalar>> embed(const Batch& batch, const EncoderParams<Scalar>& params);

/// Multi-head self-attention restricted by `visible`, output projection,
/// residual and layer norm. `hidden` is L x d.
template <typename Scalar>
Matrix<Scalar> masked_attention(const Matrix<Scalar>& hidden, const VisibleMatrix& visible,
                                const LayerParams<Scalar>& layer, std::int64_t n_heads,
                                AttentionTrace<Scalar>* trace = nullptr);

/// Row-wise match probabilities [p(non-match), p(match)] read at [CLS].
template <typename Scalar>
Matrix<Scalar> forward(const Batch& batch, const EncoderParams<Scalar>& params,
                       const ForwardOptions& options = {});

template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  bool clamped = false;
};

/// Mean negative log-likelihood of the labels (natural log).
template <typename Scalar>
LossValue<Scalar> loss(const Matrix<Scalar>& probs, std::span<const int> labels);

template <typename Scalar>
struct Gradients {
  Scalar loss = 0;
  bool clamped = false;
  Matrix<Scalar> probs;
  EncoderParams<Scalar> grads;
};

/// Loss and its exact gradient with respect to every parameter.
template <typename Scalar>
Gradients<Scalar> gradients(const Batch& batch, const EncoderParams<Scalar>& params,
                            const ForwardOptions& options = {});

template <typename Scalar>
struct AdamState {
  EncoderParams<Scalar> m;
  EncoderParams<Scalar> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState initialize(const EncoderConfig& config);
};

/// One Adam update in place. Throws NumericalError, leaving params and state
/// untouched, when any gradient is not finite. Returns the pre-update loss.
template <typename Scalar>
Scalar train_step(const Batch& batch, EncoderParams<Scalar>& params, AdamState<Scalar>& state,
                  double lr, const ForwardOptions& options = {});

}  // namespace kaer
