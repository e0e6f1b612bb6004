#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "berto/losses.hpp"
#include "berto/prompting.hpp"

namespace berto {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct ModelConfig {
  int layers = 4;
  int hidden = 256;
  int heads = 4;
  int ffn_dim = 1024;
  int vocab_size = 0;
  int max_len = kDefaultSeqLen;
  int pool_kernel = 3;
  int pool_stride = 3;
  std::vector<int> head_dims{512, 64, 1};
  // prediction = output_offset + output_scale * head_output. Fixed, not learned;
  // keeps the regression target near unit scale at initialization.
  double output_offset = 0.0;
  double output_scale = 1.0;

  /// 4 layers, hidden 256, 4 heads, FFN 1024.
  static ModelConfig bert_mini(int vocab_size);

  int head_dim() const { return hidden / heads; }
  int pooled_rows() const { return (max_len - pool_kernel) / pool_stride + 1; }
  int pooled_cols() const { return (hidden - pool_kernel) / pool_stride + 1; }
  int pooled_size() const { return pooled_rows() * pooled_cols(); }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct EncoderLayer {
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln1_gain, ln1_bias;
  Mat ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
  Mat ln2_gain, ln2_bias;
};

/// All learnable tensors. Biases and gains are 1 x n matrices. The same type
/// doubles as the gradient container.
struct ModelWeights {
  ModelConfig config;
  Mat token_embedding;     // vocab_size x hidden
  Mat position_embedding;  // max_len x hidden
  std::vector<EncoderLayer> layers;
  std::vector<Mat> head_weight;  // in x out
  std::vector<Mat> head_bias;

  /// Visits every tensor as (name, matrix) in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    f(std::string("embeddings.token"), token_embedding);
    f(std::string("embeddings.position"), position_embedding);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layer." + std::to_string(i) + ".";
      auto& l = layers[i];
      f(p + "attn.query.weight", l.wq);
      f(p + "attn.query.bias", l.bq);
      f(p + "attn.key.weight", l.wk);
      f(p + "attn.key.bias", l.bk);
      f(p + "attn.value.weight", l.wv);
      f(p + "attn.value.bias", l.bv);
      f(p + "attn.output.weight", l.wo);
      f(p + "attn.output.bias", l.bo);
      f(p + "attn.norm.gain", l.ln1_gain);
      f(p + "attn.norm.bias", l.ln1_bias);
      f(p + "ffn.in.weight", l.ffn_in);
      f(p + "ffn.in.bias", l.ffn_in_bias);
      f(p + "ffn.out.weight", l.ffn_out);
      f(p + "ffn.out.bias", l.ffn_out_bias);
      f(p + "ffn.norm.gain", l.ln2_gain);
      f(p + "ffn.norm.bias", l.ln2_bias);
    }
    for (std::size_t i = 0; i < head_weight.size(); ++i) {
      f("head." + std::to_string(i) + ".weight", head_weight[i]);
      f("head." + std::to_string(i) + ".bias", head_bias[i]);
    }
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelWeights*>(this)->for_each(
        [&](const std::string& name, Mat& m) { f(name, static_cast<const Mat&>(m)); });
  }

  /// Same shapes, all zeros.
  static ModelWeights zeros(const ModelConfig& cfg);
  std::size_t parameter_count() const;
  bool all_finite() const;
  bool operator==(const ModelWeights& other) const;
};

class ModelInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear weights and embeddings uniform with std 0.02, biases 0, norm gains 1.
ModelWeights init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Multi-head scaled dot-product attention over already-projected Q, K, V.
/// key_mask (length = rows of K) excludes masked keys; empty means all keys.
/// Heads are concatenated column-wise; no output projection is applied here.
Mat attention(const Mat& q, const Mat& k, const Mat& v, std::span<const std::uint8_t> key_mask, int heads,
              std::vector<Mat>* probabilities = nullptr);

/// Row-wise (x - mean) / sqrt(var + eps), before gain and bias.
Mat layer_norm_rows(const Mat& x);

double gelu(double x);
double gelu_derivative(double x);

/// Final encoder states, max_len x hidden. Pad rows are computed too; they
/// never influence real rows because attention ignores masked keys.
Mat encode(const ModelWeights& w, const TokenSequence& tokens);

/// Non-overlapping kernel x kernel mean pooling with floor semantics.
Mat average_pool(const Mat& hidden, int kernel, int stride);

/// Pools hidden states (pad rows zeroed when a mask is given) and runs the
/// linear stack. Returns the un-scaled head output.
double tsp_head(const ModelWeights& w, const Mat& hidden, std::span<const std::uint8_t> attention_mask = {});

/// output_offset + output_scale * tsp_head(encode(tokens)).
double predict(const ModelWeights& w, const TokenSequence& tokens);

struct Example {
  TokenSequence tokens;
  double target = 0.0;
  LossSpec loss;  // used by the per-example overload
};

struct GradientResult {
  ModelWeights grads;
  double mean_loss = 0.0;
  std::vector<double> predictions;
};

/// Exact gradient of the mean batch loss using each example's own LossSpec.
GradientResult gradients(const ModelWeights& w, std::span<const Example> batch);

/// Exact gradient of the mean batch loss under a single loss.
GradientResult gradients(const ModelWeights& w, std::span<const Example> batch, const LossSpec& loss);

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;  // row-major
};

/// Copies externally produced tensors into matching weights. Every weight
/// must be provided with the exact shape.
void import_tensors(ModelWeights& w, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> export_tensors(const ModelWeights& w);

}  // namespace berto
