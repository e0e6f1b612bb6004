#include "berto/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <unordered_map>

namespace berto {

namespace {

constexpr double kLayerNormEps = 1e-12;

struct LayerTrace {
  Mat x_in;
  Mat q, k, v;
  std::vector<Mat> probs;
  Mat ctx;
  Mat xhat1;
  Vec rstd1;
  Mat x1;
  Mat ffn_pre;
  Mat ffn_act;
  Mat xhat2;
  Vec rstd2;
};

struct Trace {
  std::vector<int> rows;  // original positions of the processed rows
  std::vector<LayerTrace> layers;
  Mat out;                // rows.size() x hidden
  Mat pooled;             // 1 x pooled_size
  std::vector<Mat> pre;   // head pre-activations
  std::vector<Mat> act;   // head activations (act[0] = pooled)
  double head_out = 0.0;
};

void add_row(Mat& m, const Mat& bias) { m.rowwise() += bias.row(0); }

void normalize_rows(const Mat& x, Mat& xhat, Vec& rstd) {
  const auto n = x.rows();
  const auto d = static_cast<double>(x.cols());
  xhat.resize(n, x.cols());
  rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.row(r).sum() / d;
    const auto centered = x.row(r).array() - mu;
    const double var = centered.square().sum() / d;
    const double s = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd(r) = s;
    xhat.row(r) = centered * s;
  }
}

Mat affine_rows(const Mat& xhat, const Mat& gain, const Mat& bias) {
  Mat y = xhat.array().rowwise() * gain.row(0).array();
  add_row(y, bias);
  return y;
}

// Backward through y = gain * xhat + bias, xhat = normalize(x).
Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, const Mat& gain, Mat& dgain, Mat& dbias) {
  dgain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_dxhat = dxhat.row(r).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat);
  }
  return dx;
}

Mat gelu_mat(const Mat& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

void layer_forward(const EncoderLayer& l, const Mat& x, std::span<const std::uint8_t> key_mask, int heads,
                   LayerTrace& t) {
  t.x_in = x;
  t.q.noalias() = x * l.wq;
  add_row(t.q, l.bq);
  t.k.noalias() = x * l.wk;
  add_row(t.k, l.bk);
  t.v.noalias() = x * l.wv;
  add_row(t.v, l.bv);
  t.ctx = attention(t.q, t.k, t.v, key_mask, heads, &t.probs);
  Mat res1 = x;
  res1.noalias() += t.ctx * l.wo;
  add_row(res1, l.bo);
  normalize_rows(res1, t.xhat1, t.rstd1);
  t.x1 = affine_rows(t.xhat1, l.ln1_gain, l.ln1_bias);
  t.ffn_pre.noalias() = t.x1 * l.ffn_in;
  add_row(t.ffn_pre, l.ffn_in_bias);
  t.ffn_act = gelu_mat(t.ffn_pre);
  Mat res2 = t.x1;
  res2.noalias() += t.ffn_act * l.ffn_out;
  add_row(res2, l.ffn_out_bias);
  normalize_rows(res2, t.xhat2, t.rstd2);
}

Mat layer_output(const EncoderLayer& l, const LayerTrace& t) { return affine_rows(t.xhat2, l.ln2_gain, l.ln2_bias); }

// Returns d(loss)/d(x_in). Assumes all keys were unmasked in the forward pass.
Mat layer_backward(const EncoderLayer& l, const LayerTrace& t, const Mat& dout, int heads, EncoderLayer& g) {
  const Mat dres2 = layer_norm_backward(dout, t.xhat2, t.rstd2, l.ln2_gain, g.ln2_gain, g.ln2_bias);
  g.ffn_out.noalias() += t.ffn_act.transpose() * dres2;
  g.ffn_out_bias.row(0) += dres2.colwise().sum();
  Mat dpre = dres2 * l.ffn_out.transpose();
  dpre.array() *= t.ffn_pre.unaryExpr([](double v) { return gelu_derivative(v); }).array();
  g.ffn_in.noalias() += t.x1.transpose() * dpre;
  g.ffn_in_bias.row(0) += dpre.colwise().sum();
  Mat dx1 = dres2;
  dx1.noalias() += dpre * l.ffn_in.transpose();

  const Mat dres1 = layer_norm_backward(dx1, t.xhat1, t.rstd1, l.ln1_gain, g.ln1_gain, g.ln1_bias);
  g.wo.noalias() += t.ctx.transpose() * dres1;
  g.bo.row(0) += dres1.colwise().sum();
  const Mat dctx = dres1 * l.wo.transpose();

  const int dk = static_cast<int>(t.q.cols()) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Mat dq(t.q.rows(), t.q.cols()), dkm(t.k.rows(), t.k.cols()), dv(t.v.rows(), t.v.cols());
  for (int h = 0; h < heads; ++h) {
    const auto qh = t.q.middleCols(h * dk, dk);
    const auto kh = t.k.middleCols(h * dk, dk);
    const auto vh = t.v.middleCols(h * dk, dk);
    const auto doh = dctx.middleCols(h * dk, dk);
    const Mat& p = t.probs[static_cast<std::size_t>(h)];
    const Mat dp = doh * vh.transpose();
    dv.middleCols(h * dk, dk).noalias() = p.transpose() * doh;
    Mat ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
    ds *= scale;
    dq.middleCols(h * dk, dk).noalias() = ds * kh;
    dkm.middleCols(h * dk, dk).noalias() = ds.transpose() * qh;
  }
  g.wq.noalias() += t.x_in.transpose() * dq;
  g.bq.row(0) += dq.colwise().sum();
  g.wk.noalias() += t.x_in.transpose() * dkm;
  g.bk.row(0) += dkm.colwise().sum();
  g.wv.noalias() += t.x_in.transpose() * dv;
  g.bv.row(0) += dv.colwise().sum();
  Mat dx = dres1;
  dx.noalias() += dq * l.wq.transpose();
  dx.noalias() += dkm * l.wk.transpose();
  dx.noalias() += dv * l.wv.transpose();
  return dx;
}

void check_tokens(const ModelWeights& w, const TokenSequence& tokens) {
  const auto& cfg = w.config;
  if (static_cast<int>(tokens.ids.size()) != cfg.max_len || tokens.attention_mask.size() != tokens.ids.size())
    throw ModelInputError("token sequence length " + std::to_string(tokens.ids.size()) + " != model length " +
                          std::to_string(cfg.max_len));
  for (int id : tokens.ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw ModelInputError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(cfg.vocab_size));
  if (tokens.real_length() == 0) throw ModelInputError("token sequence has no real tokens");
}

Mat embed_rows(const ModelWeights& w, const TokenSequence& tokens, const std::vector<int>& rows) {
  Mat x(static_cast<Eigen::Index>(rows.size()), w.config.hidden);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int pos = rows[i];
    x.row(static_cast<Eigen::Index>(i)) =
        w.token_embedding.row(tokens.ids[static_cast<std::size_t>(pos)]) + w.position_embedding.row(pos);
  }
  return x;
}

// Head on a pooled row vector; fills trace pre/act when given.
double head_forward(const ModelWeights& w, const Mat& pooled, Trace* t) {
  Mat a = pooled;
  if (t) {
    t->pre.clear();
    t->act.assign(1, pooled);
  }
  const std::size_t n = w.head_weight.size();
  for (std::size_t i = 0; i < n; ++i) {
    Mat z = a * w.head_weight[i];
    add_row(z, w.head_bias[i]);
    if (t) t->pre.push_back(z);
    if (i + 1 < n) {
      a = gelu_mat(z);
      if (t) t->act.push_back(a);
    } else {
      a = z;
    }
  }
  return a(0, 0);
}

Mat scatter_rows(const Mat& compact, const std::vector<int>& rows, int total_rows) {
  Mat full = Mat::Zero(total_rows, compact.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) full.row(rows[i]) = compact.row(static_cast<Eigen::Index>(i));
  return full;
}

Trace forward_trace(const ModelWeights& w, const TokenSequence& tokens) {
  check_tokens(w, tokens);
  const auto& cfg = w.config;
  Trace t;
  for (int i = 0; i < cfg.max_len; ++i)
    if (tokens.attention_mask[static_cast<std::size_t>(i)]) t.rows.push_back(i);
  Mat x = embed_rows(w, tokens, t.rows);
  t.layers.resize(w.layers.size());
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    layer_forward(w.layers[i], x, {}, cfg.heads, t.layers[i]);
    x = layer_output(w.layers[i], t.layers[i]);
  }
  t.out = std::move(x);
  const Mat full = scatter_rows(t.out, t.rows, cfg.max_len);
  const Mat pooled = average_pool(full, cfg.pool_kernel, cfg.pool_stride);
  t.pooled = Eigen::Map<const Mat>(pooled.data(), 1, pooled.size());
  t.head_out = head_forward(w, t.pooled, &t);
  return t;
}

void backward(const ModelWeights& w, const TokenSequence& tokens, const Trace& t, double dhead_out,
              ModelWeights& g) {
  const auto& cfg = w.config;
  const std::size_t n = w.head_weight.size();
  Mat dz(1, 1);
  dz(0, 0) = dhead_out;
  Mat da;
  for (std::size_t i = n; i-- > 0;) {
    g.head_weight[i].noalias() += t.act[i].transpose() * dz;
    g.head_bias[i] += dz;
    da = dz * w.head_weight[i].transpose();
    if (i > 0) {
      dz = da.array() * t.pre[i - 1].unaryExpr([](double v) { return gelu_derivative(v); }).array();
    }
  }
  // da is now d(loss)/d(pooled), flattened row-major over the pooled grid.
  const int pr = cfg.pooled_rows();
  const int pc = cfg.pooled_cols();
  const int k = cfg.pool_kernel;
  const int s = cfg.pool_stride;
  const double inv = 1.0 / (k * k);
  Mat dfull = Mat::Zero(cfg.max_len, cfg.hidden);
  for (int i = 0; i < pr; ++i)
    for (int j = 0; j < pc; ++j)
      dfull.block(i * s, j * s, k, k).array() += da(0, i * pc + j) * inv;

  Mat dx(static_cast<Eigen::Index>(t.rows.size()), cfg.hidden);
  for (std::size_t i = 0; i < t.rows.size(); ++i) dx.row(static_cast<Eigen::Index>(i)) = dfull.row(t.rows[i]);
  for (std::size_t li = w.layers.size(); li-- > 0;)
    dx = layer_backward(w.layers[li], t.layers[li], dx, cfg.heads, g.layers[li]);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const int pos = t.rows[i];
    g.token_embedding.row(tokens.ids[static_cast<std::size_t>(pos)]) += dx.row(static_cast<Eigen::Index>(i));
    g.position_embedding.row(pos) += dx.row(static_cast<Eigen::Index>(i));
  }
}

}  // namespace

ModelConfig ModelConfig::bert_mini(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (layers < 0) fail("layers must be >= 0");
  if (hidden < 1 || heads < 1 || hidden % heads != 0) fail("hidden must be a positive multiple of heads");
  if (ffn_dim < 1) fail("ffn_dim must be positive");
  if (vocab_size < 4) fail("vocab_size too small");
  if (max_len < 3) fail("max_len too small");
  if (pool_kernel < 1 || pool_stride < 1 || pool_kernel > max_len || pool_kernel > hidden) fail("bad pooling");
  if (head_dims.empty() || head_dims.back() != 1) fail("head_dims must end in 1");
  for (int d : head_dims)
    if (d < 1) fail("head_dims must be positive");
  if (!(output_scale > 0)) fail("output_scale must be positive");
}

ModelWeights ModelWeights::zeros(const ModelConfig& cfg) {
  cfg.validate();
  ModelWeights w;
  w.config = cfg;
  const int h = cfg.hidden;
  w.token_embedding = Mat::Zero(cfg.vocab_size, h);
  w.position_embedding = Mat::Zero(cfg.max_len, h);
  w.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& l : w.layers) {
    for (Mat* m : {&l.wq, &l.wk, &l.wv, &l.wo}) *m = Mat::Zero(h, h);
    for (Mat* m : {&l.bq, &l.bk, &l.bv, &l.bo, &l.ln1_gain, &l.ln1_bias, &l.ffn_out_bias, &l.ln2_gain, &l.ln2_bias})
      *m = Mat::Zero(1, h);
    l.ffn_in = Mat::Zero(h, cfg.ffn_dim);
    l.ffn_in_bias = Mat::Zero(1, cfg.ffn_dim);
    l.ffn_out = Mat::Zero(cfg.ffn_dim, h);
  }
  int in = cfg.pooled_size();
  for (int d : cfg.head_dims) {
    w.head_weight.push_back(Mat::Zero(in, d));
    w.head_bias.push_back(Mat::Zero(1, d));
    in = d;
  }
  return w;
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool ModelWeights::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
  return ok;
}

bool ModelWeights::operator==(const ModelWeights& other) const {
  if (!(config == other.config)) return false;
  std::vector<const Mat*> mine, theirs;
  for_each([&](const std::string&, const Mat& m) { mine.push_back(&m); });
  other.for_each([&](const std::string&, const Mat& m) { theirs.push_back(&m); });
  if (mine.size() != theirs.size()) return false;
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i]->rows() != theirs[i]->rows() || mine[i]->cols() != theirs[i]->cols()) return false;
    if (*mine[i] != *theirs[i]) return false;
  }
  return true;
}

ModelWeights init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelWeights w = ModelWeights::zeros(cfg);
  std::mt19937_64 rng(seed);
  const double bound = 0.02 * std::sqrt(3.0);
  auto fill = [&](Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      m.data()[i] = (2.0 * u - 1.0) * bound;
    }
  };
  w.for_each([&](const std::string& name, Mat& m) {
    if (name.ends_with(".gain"))
      m.setOnes();
    else if (name.ends_with(".bias"))
      m.setZero();
    else
      fill(m);
  });
  return w;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Mat attention(const Mat& q, const Mat& k, const Mat& v, std::span<const std::uint8_t> key_mask, int heads,
              std::vector<Mat>* probabilities) {
  if (k.rows() != v.rows() || q.cols() != k.cols() || k.cols() != v.cols())
    throw ModelInputError("attention: shape mismatch");
  if (heads < 1 || q.cols() % heads != 0) throw ModelInputError("attention: width not divisible by heads");
  if (!key_mask.empty() && static_cast<Eigen::Index>(key_mask.size()) != k.rows())
    throw ModelInputError("attention: mask length mismatch");
  const int dk = static_cast<int>(q.cols()) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Mat out(q.rows(), q.cols());
  if (probabilities) probabilities->resize(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Mat s = q.middleCols(h * dk, dk) * k.middleCols(h * dk, dk).transpose();
    s *= scale;
    if (!key_mask.empty()) {
      for (Eigen::Index c = 0; c < s.cols(); ++c)
        if (!key_mask[static_cast<std::size_t>(c)]) s.col(c).setConstant(-std::numeric_limits<double>::infinity());
    }
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double mx = s.row(r).maxCoeff();
      if (!std::isfinite(mx)) throw ModelInputError("attention: every key is masked");
      s.row(r) = (s.row(r).array() - mx).exp();
    }
    // Vectorized exp(-inf) can return a denormal rather than 0.
    if (!key_mask.empty()) {
      for (Eigen::Index c = 0; c < s.cols(); ++c)
        if (!key_mask[static_cast<std::size_t>(c)]) s.col(c).setZero();
    }
    s.array().colwise() /= s.rowwise().sum().array();
    out.middleCols(h * dk, dk).noalias() = s * v.middleCols(h * dk, dk);
    if (probabilities) (*probabilities)[static_cast<std::size_t>(h)] = std::move(s);
  }
  return out;
}

Mat layer_norm_rows(const Mat& x) {
  Mat xhat;
  Vec rstd;
  normalize_rows(x, xhat, rstd);
  return xhat;
}

Mat encode(const ModelWeights& w, const TokenSequence& tokens) {
  check_tokens(w, tokens);
  const auto& cfg = w.config;
  std::vector<int> rows(static_cast<std::size_t>(cfg.max_len));
  for (int i = 0; i < cfg.max_len; ++i) rows[static_cast<std::size_t>(i)] = i;
  Mat x = embed_rows(w, tokens, rows);
  LayerTrace t;
  for (const auto& l : w.layers) {
    layer_forward(l, x, tokens.attention_mask, cfg.heads, t);
    x = layer_output(l, t);
  }
  return x;
}

Mat average_pool(const Mat& hidden, int kernel, int stride) {
  if (kernel < 1 || stride < 1 || hidden.rows() < kernel || hidden.cols() < kernel)
    throw std::invalid_argument("average_pool: kernel larger than input");
  const auto rows = (hidden.rows() - kernel) / stride + 1;
  const auto cols = (hidden.cols() - kernel) / stride + 1;
  Mat out(rows, cols);
  const double inv = 1.0 / (kernel * kernel);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = hidden.block(i * stride, j * stride, kernel, kernel).sum() * inv;
  return out;
}

double tsp_head(const ModelWeights& w, const Mat& hidden, std::span<const std::uint8_t> attention_mask) {
  const auto& cfg = w.config;
  if (hidden.rows() != cfg.max_len || hidden.cols() != cfg.hidden) throw ModelInputError("tsp_head: bad hidden shape");
  Mat masked = hidden;
  if (!attention_mask.empty()) {
    for (Eigen::Index r = 0; r < masked.rows(); ++r)
      if (!attention_mask[static_cast<std::size_t>(r)]) masked.row(r).setZero();
  }
  const Mat pooled = average_pool(masked, cfg.pool_kernel, cfg.pool_stride);
  const Mat flat = Eigen::Map<const Mat>(pooled.data(), 1, pooled.size());
  return head_forward(w, flat, nullptr);
}

double predict(const ModelWeights& w, const TokenSequence& tokens) {
  const Trace t = forward_trace(w, tokens);
  return w.config.output_offset + w.config.output_scale * t.head_out;
}

GradientResult gradients(const ModelWeights& w, std::span<const Example> batch) {
  GradientResult r{ModelWeights::zeros(w.config), 0.0, {}};
  if (batch.empty()) return r;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  r.predictions.reserve(batch.size());
  for (const auto& ex : batch) {
    const Trace t = forward_trace(w, ex.tokens);
    const double pred = w.config.output_offset + w.config.output_scale * t.head_out;
    const double loss = ex.loss.value(ex.target, pred);
    if (!std::isfinite(loss) || !std::isfinite(pred))
      throw GradientError("non-finite loss (prediction " + std::to_string(pred) + ", target " +
                          std::to_string(ex.target) + ")");
    r.mean_loss += loss * inv_n;
    r.predictions.push_back(pred);
    const double dpred = ex.loss.derivative(ex.target, pred) * inv_n;
    backward(w, ex.tokens, t, dpred * w.config.output_scale, r.grads);
  }
  return r;
}

GradientResult gradients(const ModelWeights& w, std::span<const Example> batch, const LossSpec& loss) {
  std::vector<Example> copy(batch.begin(), batch.end());
  for (auto& ex : copy) ex.loss = loss;
  return gradients(w, copy);
}

void import_tensors(ModelWeights& w, const std::vector<NamedTensor>& tensors) {
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  w.for_each([&](const std::string& name, Mat& m) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ModelInputError("import: missing tensor '" + name + "'");
    const auto& t = *it->second;
    if (t.shape.size() != 2 || t.shape[0] != m.rows() || t.shape[1] != m.cols() ||
        t.data.size() != static_cast<std::size_t>(m.size()))
      throw ModelInputError("import: shape mismatch for '" + name + "'");
    m = Eigen::Map<const Mat>(t.data.data(), m.rows(), m.cols());
  });
}

std::vector<NamedTensor> export_tensors(const ModelWeights& w) {
  std::vector<NamedTensor> out;
  w.for_each([&](const std::string& name, const Mat& m) {
    out.push_back({name, {m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size())});
  });
  return out;
}

}  // namespace berto
