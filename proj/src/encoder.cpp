#include "kaer/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "kaer/errors.hpp"
#include "kaer/rng.hpp"

namespace kaer {

void EncoderConfig::validate() const {
  if (vocab_size <= special::kCount) throw DomainError("vocab_size must exceed the special tokens");
  if (d_model <= 0 || n_heads <= 0 || n_layers < 0 || d_ff <= 0 || max_position <= 0) {
    throw DomainError("encoder dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw DomainError("d_model must be divisible by n_heads");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DomainError("dropout_rate must lie in [0, 1)");
}

namespace {

template <typename Scalar>
using Column = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Matrix<Scalar> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      // Box-Muller on the portable uniform draw.
      const double u1 = 1.0 - uniform_unit(rng);
      const double u2 = uniform_unit(rng);
      m(i, j) = static_cast<Scalar>(stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2));
    }
  }
  return m;
}

template <typename Scalar>
Matrix<Scalar> glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      m(i, j) = static_cast<Scalar>((2.0 * uniform_unit(rng) - 1.0) * limit);
    }
  }
  return m;
}

}  // namespace

template <typename Scalar>
EncoderParams<Scalar> EncoderParams<Scalar>::zeros_like(const EncoderConfig& config) {
  config.validate();
  const auto d = config.d_model;
  const auto ff = config.d_ff;
  EncoderParams p;
  p.config = config;
  p.token_emb = Matrix<Scalar>::Zero(config.vocab_size, d);
  p.position_emb = Matrix<Scalar>::Zero(config.max_position, d);
  p.segment_emb = Matrix<Scalar>::Zero(2, d);
  p.emb_ln_gain = Matrix<Scalar>::Zero(1, d);
  p.emb_ln_bias = Matrix<Scalar>::Zero(1, d);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& l : p.layers) {
    for (auto* w : {&l.wq, &l.wk, &l.wv, &l.wo}) *w = Matrix<Scalar>::Zero(d, d);
    for (auto* b : {&l.bq, &l.bk, &l.bv, &l.bo, &l.ln1_gain, &l.ln1_bias, &l.b2, &l.ln2_gain,
                    &l.ln2_bias}) {
      *b = Matrix<Scalar>::Zero(1, d);
    }
    l.w1 = Matrix<Scalar>::Zero(d, ff);
    l.b1 = Matrix<Scalar>::Zero(1, ff);
    l.w2 = Matrix<Scalar>::Zero(ff, d);
  }
  p.head_w = Matrix<Scalar>::Zero(d, 2);
  p.head_b = Matrix<Scalar>::Zero(1, 2);
  return p;
}

template <typename Scalar>
EncoderParams<Scalar> EncoderParams<Scalar>::initialize(const EncoderConfig& config) {
  EncoderParams p = zeros_like(config);
  Rng rng(config.seed ^ 0x6b6165725f696e69ULL);
  const auto d = config.d_model;
  const auto ff = config.d_ff;
  p.token_emb = normal_matrix<Scalar>(config.vocab_size, d, 0.02, rng);
  p.position_emb = normal_matrix<Scalar>(config.max_position, d, 0.02, rng);
  p.segment_emb = normal_matrix<Scalar>(2, d, 0.02, rng);
  p.emb_ln_gain.setOnes();
  for (auto& l : p.layers) {
    l.wq = glorot<Scalar>(d, d, rng);
    l.wk = glorot<Scalar>(d, d, rng);
    l.wv = glorot<Scalar>(d, d, rng);
    l.wo = glorot<Scalar>(d, d, rng);
    l.w1 = glorot<Scalar>(d, ff, rng);
    l.w2 = glorot<Scalar>(ff, d, rng);
    l.ln1_gain.setOnes();
    l.ln2_gain.setOnes();
  }
  p.head_w = glorot<Scalar>(d, 2, rng);
  return p;
}

template <typename Scalar>
std::vector<std::pair<std::string, Matrix<Scalar>*>> EncoderParams<Scalar>::tensors() {
  std::vector<std::pair<std::string, Matrix<Scalar>*>> out = {
      {"token_emb", &token_emb},     {"position_emb", &position_emb}, {"segment_emb", &segment_emb},
      {"emb_ln_gain", &emb_ln_gain}, {"emb_ln_bias", &emb_ln_bias}};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    for (auto [name, m] : std::initializer_list<std::pair<const char*, Matrix<Scalar>*>>{
             {"wq", &l.wq},        {"bq", &l.bq},        {"wk", &l.wk},
             {"bk", &l.bk},        {"wv", &l.wv},        {"bv", &l.bv},
             {"wo", &l.wo},        {"bo", &l.bo},        {"ln1_gain", &l.ln1_gain},
             {"ln1_bias", &l.ln1_bias}, {"w1", &l.w1},   {"b1", &l.b1},
             {"w2", &l.w2},        {"b2", &l.b2},        {"ln2_gain", &l.ln2_gain},
             {"ln2_bias", &l.ln2_bias}}) {
      out.emplace_back(p + name, m);
    }
  }
  out.emplace_back("head_w", &head_w);
  out.emplace_back("head_b", &head_b);
  return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, const Matrix<Scalar>*>> EncoderParams<Scalar>::tensors() const {
  auto mut = const_cast<EncoderParams*>(this)->tensors();
  std::vector<std::pair<std::string, const Matrix<Scalar>*>> out;
  out.reserve(mut.size());
  for (auto& [name, m] : mut) out.emplace_back(std::move(name), m);
  return out;
}

template <typename Scalar>
bool EncoderParams<Scalar>::all_finite() const {
  for (const auto& [name, m] : tensors()) {
    if (!m->allFinite()) return false;
  }
  return true;
}

template <typename Scalar>
std::size_t EncoderParams<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

template <typename Scalar>
template <typename To>
EncoderParams<To> EncoderParams<Scalar>::cast() const {
  EncoderParams<To> out = EncoderParams<To>::zeros_like(config);
  auto src = tensors();
  auto dst = out.tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<To>();
  return out;
}

// ---- batching -----------------------------------------------------------------

Batch make_batch(std::span<const InjectedSequence> sequences) {
  Batch batch;
  const auto b = static_cast<Eigen::Index>(sequences.size());
  std::size_t width = 0;
  for (const auto& s : sequences) width = std::max(width, s.tokens.size());
  const auto l = static_cast<Eigen::Index>(width);
  batch.tokens = IndexMatrix::Constant(b, l, special::kPad);
  batch.soft_positions = IndexMatrix::Zero(b, l);
  batch.segments = IndexMatrix::Zero(b, l);
  batch.visible.reserve(sequences.size());
  for (Eigen::Index r = 0; r < b; ++r) {
    const auto& s = sequences[static_cast<std::size_t>(r)];
    const auto n = static_cast<Eigen::Index>(s.tokens.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      batch.tokens(r, i) = s.tokens[ui];
      batch.soft_positions(r, i) = s.soft_positions[ui];
      batch.segments(r, i) = s.segments[ui];
    }
    VisibleMatrix v = VisibleMatrix::Zero(l, l);
    v.topLeftCorner(n, n) = s.visible;
    batch.visible.push_back(std::move(v));
    batch.labels.push_back(s.label.value_or(0));
    batch.lengths.push_back(n);
  }
  return batch;
}

// ---- forward pieces -----------------------------------------------------------

namespace {

template <typename Scalar>
struct NormCache {
  Matrix<Scalar> xhat;
  Column<Scalar> inv_std;
};

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, const Matrix<Scalar>& bias,
                          NormCache<Scalar>* cache) {
  const Eigen::Index rows = x.rows();
  Matrix<Scalar> xhat(rows, x.cols());
  Column<Scalar> inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Scalar mean = x.row(r).mean();
    auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    xhat.row(r) = (centered * inv_std(r)).matrix();
  }
  Matrix<Scalar> y = ((xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array()).matrix();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dy, const NormCache<Scalar>& cache,
                                   const Matrix<Scalar>& gain, Matrix<Scalar>& dgain, Matrix<Scalar>& dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Matrix<Scalar> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  Matrix<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar m1 = dxhat.row(r).mean();
    const Scalar m2 = (dxhat.row(r).array() * cache.xhat.row(r).array()).mean();
    dx.row(r) = (cache.inv_std(r) * (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2)).matrix();
  }
  return dx;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * Scalar(0.3989422804014327);
  return cdf + x * pdf;
}

template <typename Scalar>
Matrix<Scalar> mask_matrix(const VisibleMatrix& visible) {
  return visible.unaryExpr([](std::uint8_t v) { return v ? Scalar(0) : static_cast<Scalar>(kMaskPenalty); });
}

template <typename Scalar>
void softmax_rows(Matrix<Scalar>& scores) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const Scalar top = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - top).exp().matrix();
    scores.row(r) /= scores.row(r).sum();
  }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

template <typename Scalar>
Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix<Scalar> mask(rows, cols);
  const auto keep = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = uniform_unit(rng) < rate ? Scalar(0) : keep;
  }
  return mask;
}

template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> input, q, k, v, context, h1, z, g;
  std::vector<Matrix<Scalar>> attn, attn_dropped, attn_mask;
  NormCache<Scalar> ln1, ln2;
};

template <typename Scalar>
struct ExampleCache {
  Matrix<Scalar> emb_drop;
  NormCache<Scalar> emb_ln;
  std::vector<LayerCache<Scalar>> layers;
  Matrix<Scalar> final_hidden;
  Matrix<Scalar> probs;  // 1 x 2
};

template <typename Scalar>
void check_indices(const Batch& batch, std::int64_t row, const EncoderConfig& config) {
  for (Eigen::Index i = 0; i < batch.width(); ++i) {
    const auto tok = batch.tokens(row, i);
    const auto pos = batch.soft_positions(row, i);
    const auto seg = batch.segments(row, i);
    if (tok < 0 || tok >= config.vocab_size) {
      throw DomainError("token id " + std::to_string(tok) + " outside the vocabulary");
    }
    if (pos < 0 || pos >= config.max_position) {
      throw DomainError("soft position " + std::to_string(pos) + " exceeds max_position " +
                        std::to_string(config.max_position));
    }
    if (seg < 0 || seg > 1) throw DomainError("segment id must be 0 or 1");
  }
}

template <typename Scalar>
Matrix<Scalar> embed_raw(const Batch& batch, std::int64_t row, const EncoderParams<Scalar>& params) {
  check_indices<Scalar>(batch, row, params.config);
  const Eigen::Index len = batch.width();
  Matrix<Scalar> x(len, params.config.d_model);
  for (Eigen::Index i = 0; i < len; ++i) {
    x.row(i) = params.token_emb.row(batch.tokens(row, i)) + params.position_emb.row(batch.soft_positions(row, i));
    if (params.config.segment_embeddings) x.row(i) += params.segment_emb.row(batch.segments(row, i));
  }
  return x;
}

template <typename Scalar>
Matrix<Scalar> attention_block(const Matrix<Scalar>& hidden, const Matrix<Scalar>& mask,
                               const LayerParams<Scalar>& l, std::int64_t n_heads, double dropout,
                               Rng* rng, LayerCache<Scalar>* cache) {
  const Eigen::Index d = hidden.cols();
  const Eigen::Index dh = d / n_heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  Matrix<Scalar> q = (hidden * l.wq).rowwise() + l.bq.row(0);
  Matrix<Scalar> k = (hidden * l.wk).rowwise() + l.bk.row(0);
  Matrix<Scalar> v = (hidden * l.wv).rowwise() + l.bv.row(0);
  Matrix<Scalar> context(hidden.rows(), d);
  for (Eigen::Index h = 0; h < n_heads; ++h) {
    Matrix<Scalar> scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale + mask;
    softmax_rows(scores);
    Matrix<Scalar> used = scores;
    if (rng) {
      Matrix<Scalar> drop = dropout_mask<Scalar>(scores.rows(), scores.cols(), dropout, *rng);
      used = scores.cwiseProduct(drop);
      if (cache) cache->attn_mask.push_back(std::move(drop));
    }
    context.middleCols(h * dh, dh) = used * v.middleCols(h * dh, dh);
    if (cache) {
      cache->attn.push_back(std::move(scores));
      cache->attn_dropped.push_back(std::move(used));
    }
  }
  Matrix<Scalar> residual = hidden + ((context * l.wo).rowwise() + l.bo.row(0));
  Matrix<Scalar> out = layer_norm(residual, l.ln1_gain, l.ln1_bias, cache ? &cache->ln1 : nullptr);
  if (cache) {
    cache->input = hidden;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> feed_forward_block(const Matrix<Scalar>& h1, const LayerParams<Scalar>& l,
                                  LayerCache<Scalar>* cache) {
  Matrix<Scalar> z = (h1 * l.w1).rowwise() + l.b1.row(0);
  Matrix<Scalar> g = z.unaryExpr([](Scalar x) { return gelu(x); });
  Matrix<Scalar> residual = h1 + ((g * l.w2).rowwise() + l.b2.row(0));
  Matrix<Scalar> out = layer_norm(residual, l.ln2_gain, l.ln2_bias, cache ? &cache->ln2 : nullptr);
  if (cache) {
    cache->h1 = h1;
    cache->z = std::move(z);
    cache->g = std::move(g);
  }
  return out;
}

template <typename Scalar>
ExampleCache<Scalar> forward_example(const Batch& batch, std::int64_t row, const EncoderParams<Scalar>& params,
                                     const ForwardOptions& options, bool keep) {
  ExampleCache<Scalar> cache;
  const auto& cfg = params.config;
  const bool drop = options.train && cfg.dropout_rate > 0.0;
  Rng rng(mix_seed(options.dropout_seed, static_cast<std::uint64_t>(row)));

  Matrix<Scalar> hidden = layer_norm(embed_raw(batch, row, params), params.emb_ln_gain, params.emb_ln_bias,
                                     keep ? &cache.emb_ln : nullptr);
  if (drop) {
    Matrix<Scalar> mask = dropout_mask<Scalar>(hidden.rows(), hidden.cols(), cfg.dropout_rate, rng);
    hidden = hidden.cwiseProduct(mask);
    if (keep) cache.emb_drop = std::move(mask);
  }
  const Matrix<Scalar> mask = mask_matrix<Scalar>(batch.visible[static_cast<std::size_t>(row)]);
  if (keep) cache.layers.resize(params.layers.size());
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    LayerCache<Scalar>* lc = keep ? &cache.layers[li] : nullptr;
    Matrix<Scalar> h1 = attention_block(hidden, mask, params.layers[li], cfg.n_heads, cfg.dropout_rate,
                                        drop ? &rng : nullptr, lc);
    hidden = feed_forward_block(h1, params.layers[li], lc);
  }
  Matrix<Scalar> logits = hidden.row(0) * params.head_w + params.head_b;
  if (!logits.allFinite()) {
    throw NumericalError("non-finite activations for batch row " + std::to_string(row));
  }
  Matrix<Scalar> probs = logits;
  softmax_rows(probs);
  cache.probs = std::move(probs);
  if (keep) cache.final_hidden = std::move(hidden);
  return cache;
}

template <typename Scalar>
void backward_example(const Batch& batch, std::int64_t row, const EncoderParams<Scalar>& params,
                      const ExampleCache<Scalar>& cache, const Matrix<Scalar>& dlogits, EncoderParams<Scalar>& g) {
  const auto& cfg = params.config;
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index dh = cfg.d_head();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  g.head_w += cache.final_hidden.row(0).transpose() * dlogits;
  g.head_b += dlogits;
  Matrix<Scalar> dhidden = Matrix<Scalar>::Zero(cache.final_hidden.rows(), d);
  dhidden.row(0) = dlogits * params.head_w.transpose();

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& l = params.layers[li];
    const auto& c = cache.layers[li];
    auto& gl = g.layers[li];

    // feed-forward block
    Matrix<Scalar> dres2 = layer_norm_backward(dhidden, c.ln2, l.ln2_gain, gl.ln2_gain, gl.ln2_bias);
    gl.w2 += c.g.transpose() * dres2;
    gl.b2 += dres2.colwise().sum();
    Matrix<Scalar> dz = (dres2 * l.w2.transpose()).cwiseProduct(c.z.unaryExpr([](Scalar x) { return gelu_grad(x); }));
    gl.w1 += c.h1.transpose() * dz;
    gl.b1 += dz.colwise().sum();
    Matrix<Scalar> dh1 = dres2 + dz * l.w1.transpose();

    // attention block
    Matrix<Scalar> dres1 = layer_norm_backward(dh1, c.ln1, l.ln1_gain, gl.ln1_gain, gl.ln1_bias);
    gl.wo += c.context.transpose() * dres1;
    gl.bo += dres1.colwise().sum();
    const Matrix<Scalar> dcontext = dres1 * l.wo.transpose();
    Matrix<Scalar> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
    for (Eigen::Index h = 0; h < cfg.n_heads; ++h) {
      const std::size_t uh = static_cast<std::size_t>(h);
      const auto dch = dcontext.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = c.attn_dropped[uh].transpose() * dch;
      Matrix<Scalar> dattn = dch * c.v.middleCols(h * dh, dh).transpose();
      if (!c.attn_mask.empty()) dattn = dattn.cwiseProduct(c.attn_mask[uh]);
      const auto& a = c.attn[uh];
      const Column<Scalar> inner = (dattn.cwiseProduct(a)).rowwise().sum();
      Matrix<Scalar> dscores = (a.array() * (dattn.colwise() - inner).array()).matrix() * scale;
      dq.middleCols(h * dh, dh) = dscores * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = dscores.transpose() * c.q.middleCols(h * dh, dh);
    }
    gl.wq += c.input.transpose() * dq;
    gl.bq += dq.colwise().sum();
    gl.wk += c.input.transpose() * dk;
    gl.bk += dk.colwise().sum();
    gl.wv += c.input.transpose() * dv;
    gl.bv += dv.colwise().sum();
    dhidden = dres1 + dq * l.wq.transpose() + dk * l.wk.transpose() + dv * l.wv.transpose();
  }

  if (cache.emb_drop.size() > 0) dhidden = dhidden.cwiseProduct(cache.emb_drop);
  const Matrix<Scalar> dx = layer_norm_backward(dhidden, cache.emb_ln, params.emb_ln_gain, g.emb_ln_gain, g.emb_ln_bias);
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    g.token_emb.row(batch.tokens(row, i)) += dx.row(i);
    g.position_emb.row(batch.soft_positions(row, i)) += dx.row(i);
    if (cfg.segment_embeddings) g.segment_emb.row(batch.segments(row, i)) += dx.row(i);
  }
}

template <typename Scalar>
void add_into(EncoderParams<Scalar>& dst, const EncoderParams<Scalar>& src) {
  auto d = dst.tensors();
  auto s = src.tensors();
  for (std::size_t i = 0; i < d.size(); ++i) *d[i].second += *s[i].second;
}

// Splits [0, n) into `threads` contiguous chunks and runs fn(begin, end, worker).
template <typename Fn>
void parallel_chunks(std::int64_t n, int threads, Fn&& fn) {
  const int workers = static_cast<int>(std::max<std::int64_t>(1, std::min<std::int64_t>(threads, n)));
  if (workers == 1) {
    fn(std::int64_t{0}, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const std::int64_t begin = n * w / workers;
    const std::int64_t end = n * (w + 1) / workers;
    pool.emplace_back([&, begin, end, w] {
      try {
        fn(begin, end, w);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

// ---- public API -----------------------------------------------------------------

template <typename Scalar>
Matrix<Scalar> embed_example(const Batch& batch, std::int64_t row, const EncoderParams<Scalar>& params) {
  return layer_norm(embed_raw(batch, row, params), params.emb_ln_gain, params.emb_ln_bias,
                    static_cast<NormCache<Scalar>*>(nullptr));
}

template <typename Scalar>
std::vector<Matrix<Scalar>> embed(const Batch& batch, const EncoderParams<Scalar>& params) {
  std::vector<Matrix<Scalar>> out;
  out.reserve(static_cast<std::size_t>(batch.size()));
  for (std::int64_t r = 0; r < batch.size(); ++r) out.push_back(embed_example(batch, r, params));
  return out;
}

template <typename Scalar>
Matrix<Scalar> masked_attention(const Matrix<Scalar>& hidden, const VisibleMatrix& visible,
                                const LayerParams<Scalar>& layer, std::int64_t n_heads,
                                AttentionTrace<Scalar>* trace) {
  LayerCache<Scalar> cache;
  Matrix<Scalar> out = attention_block(hidden, mask_matrix<Scalar>(visible), layer, n_heads, 0.0,
                                       static_cast<Rng*>(nullptr), trace ? &cache : nullptr);
  if (trace) trace->weights = std::move(cache.attn);
  return out;
}

template <typename Scalar>
Matrix<Scalar> forward(const Batch& batch, const EncoderParams<Scalar>& params, const ForwardOptions& options) {
  Matrix<Scalar> probs(batch.size(), 2);
  parallel_chunks(batch.size(), options.threads, [&](std::int64_t begin, std::int64_t end, int) {
    for (std::int64_t r = begin; r < end; ++r) {
      probs.row(r) = forward_example(batch, r, params, options, false).probs;
    }
  });
  return probs;
}

template <typename Scalar>
LossValue<Scalar> loss(const Matrix<Scalar>& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size() || probs.cols() != 2) {
    throw DomainError("loss: probabilities and labels disagree in shape");
  }
  LossValue<Scalar> out;
  if (labels.empty()) return out;
  Scalar total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Scalar p = probs(static_cast<Eigen::Index>(i), labels[i] == 1 ? 1 : 0);
    if (p < static_cast<Scalar>(kProbFloor)) {
      p = static_cast<Scalar>(kProbFloor);
      out.clamped = true;
    }
    total -= std::log(p);
  }
  out.value = total / static_cast<Scalar>(labels.size());
  return out;
}

template <typename Scalar>
Gradients<Scalar> gradients(const Batch& batch, const EncoderParams<Scalar>& params, const ForwardOptions& options) {
  const std::int64_t n = batch.size();
  if (n == 0) throw DomainError("gradients: empty batch");
  const int workers = static_cast<int>(std::max<std::int64_t>(1, std::min<std::int64_t>(options.threads, n)));
  std::vector<EncoderParams<Scalar>> partial(static_cast<std::size_t>(workers),
                                             EncoderParams<Scalar>::zeros_like(params.config));
  Gradients<Scalar> out;
  out.probs.resize(n, 2);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);

  parallel_chunks(n, workers, [&](std::int64_t begin, std::int64_t end, int w) {
    for (std::int64_t r = begin; r < end; ++r) {
      const ExampleCache<Scalar> cache = forward_example(batch, r, params, options, true);
      out.probs.row(r) = cache.probs;
      const int y = batch.labels[static_cast<std::size_t>(r)] == 1 ? 1 : 0;
      Matrix<Scalar> dlogits = cache.probs;
      if (cache.probs(0, y) < static_cast<Scalar>(kProbFloor)) {
        dlogits.setZero();  // clamped region: the loss is flat
      } else {
        dlogits(0, y) -= Scalar(1);
        dlogits *= inv_n;
      }
      backward_example(batch, r, params, cache, dlogits, partial[static_cast<std::size_t>(w)]);
    }
  });

  out.grads = std::move(partial.front());
  for (std::size_t w = 1; w < partial.size(); ++w) add_into(out.grads, partial[w]);
  const auto lv = loss<Scalar>(out.probs, batch.labels);
  out.loss = lv.value;
  out.clamped = lv.clamped;
  return out;
}

template <typename Scalar>
AdamState<Scalar> AdamState<Scalar>::initialize(const EncoderConfig& config) {
  AdamState s;
  s.m = EncoderParams<Scalar>::zeros_like(config);
  s.v = EncoderParams<Scalar>::zeros_like(config);
  return s;
}

template <typename Scalar>
Scalar train_step(const Batch& batch, EncoderParams<Scalar>& params, AdamState<Scalar>& state, double lr,
                  const ForwardOptions& options) {
  if (!params.all_finite()) throw NumericalError("train_step: parameters are not finite");
  Gradients<Scalar> g = gradients(batch, params, options);
  if (!g.grads.all_finite() || !std::isfinite(static_cast<double>(g.loss))) {
    throw NumericalError("train_step: non-finite gradient; step aborted");
  }
  const std::int64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  const auto eps = static_cast<Scalar>(state.eps);
  const auto step_size = static_cast<Scalar>(lr / c1);
  const auto v_scale = static_cast<Scalar>(1.0 / c2);

  auto p = params.tensors();
  auto gr = g.grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    *m[i].second = b1 * *m[i].second + (Scalar(1) - b1) * *gr[i].second;
    *v[i].second = b2 * *v[i].second + (Scalar(1) - b2) * gr[i].second->cwiseAbs2();
    const auto denom = ((*v[i].second * v_scale).cwiseSqrt().array() + eps).eval();
    *p[i].second -= (step_size * (m[i].second->array() / denom)).matrix();
  }
  state.step = t;
  return g.loss;
}

#define KAER_INSTANTIATE(S)                                                                          \
  template struct EncoderParams<S>;                                                                  \
  template struct AdamState<S>;                                                                      \
  template Matrix<S> embed_example<S>(const Batch&, std::int64_t, const EncoderParams<S>&);          \
  template std::vector<Matrix<S>> embed<S>(const Batch&, const EncoderParams<S>&);                   \
  template Matrix<S> masked_attention<S>(const Matrix<S>&, const VisibleMatrix&, const LayerParams<S>&, \
                                         std::int64_t, AttentionTrace<S>*);                          \
  template Matrix<S> forward<S>(const Batch&, const EncoderParams<S>&, const ForwardOptions&);       \
  template LossValue<S> loss<S>(const Matrix<S>&, std::span<const int>);                             \
  template Gradients<S> gradients<S>(const Batch&, const EncoderParams<S>&, const ForwardOptions&);  \
  template S train_step<S>(const Batch&, EncoderParams<S>&, AdamState<S>&, double, const ForwardOptions&);

KAER_INSTANTIATE(double)
KAER_INSTANTIATE(float)

template EncoderParams<float> EncoderParams<double>::cast<float>() const;
template EncoderParams<double> EncoderParams<float>::cast<double>() const;
template EncoderParams<double> EncoderParams<double>::cast<double>() const;

#undef KAER_INSTANTIATE

}  // namespace kaer
