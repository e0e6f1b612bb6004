#include <cmath>
#include <random>

#include "berto/model.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace berto;

namespace {

// Direct triple-loop attention for a single head, no masking.
Mat dense_attention(const Mat& q, const Mat& k, const Mat& v, double scale) {
  const auto n = q.rows();
  Mat out = Mat::Zero(n, v.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> logits(static_cast<std::size_t>(k.rows()));
    double mx = -1e300;
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      double dot = 0;
      for (Eigen::Index c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
      logits[static_cast<std::size_t>(j)] = dot * scale;
      mx = std::max(mx, dot * scale);
    }
    double z = 0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    for (Eigen::Index j = 0; j < k.rows(); ++j)
      for (Eigen::Index c = 0; c < v.cols(); ++c) out(i, c) += logits[static_cast<std::size_t>(j)] / z * v(j, c);
  }
  return out;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("init_model is deterministic with the specified initial values") {
  const auto cfg = ModelConfig::bert_mini(Vocabulary::standard().size());
  const auto a = init_model(cfg, 11);
  const auto b = init_model(cfg, 11);
  CHECK(a == b);
  CHECK_FALSE(a == init_model(cfg, 12));
  CHECK(a.token_embedding.rows() == cfg.vocab_size);
  CHECK(a.token_embedding.cols() == 256);
  CHECK(a.layers[0].ln1_gain.isOnes());
  CHECK(a.layers[3].ln2_gain.isOnes());
  CHECK(a.layers[1].bq.isZero());
  const double n = static_cast<double>(a.layers[0].ffn_in.size());
  const double mean = a.layers[0].ffn_in.mean();
  const double sd = std::sqrt((a.layers[0].ffn_in.array() - mean).square().sum() / n);
  CHECK(sd == doctest::Approx(0.02).epsilon(0.02));
  CHECK(cfg.pooled_rows() == 32);
  CHECK(cfg.pooled_cols() == 85);
  CHECK(cfg.pooled_size() == 2720);
  CHECK(a.head_weight[0].rows() == 2720);
  CHECK(a.head_weight[0].cols() == 512);
}

TEST_CASE("attention edge cases") {
  std::mt19937_64 rng(3);
  SUBCASE("single token returns V") {
    const Mat q = test::random_mat(1, 4, rng), k = test::random_mat(1, 4, rng), v = test::random_mat(1, 4, rng);
    const Mat out = attention(q, k, v, {}, 2);
    CHECK((out - v).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("rows are stochastic over unmasked keys") {
    const Mat q = test::random_mat(5, 6, rng), k = test::random_mat(5, 6, rng), v = test::random_mat(5, 6, rng);
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0};
    std::vector<Mat> probs;
    attention(q, k, v, mask, 3, &probs);
    for (const auto& p : probs) {
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-6);
        CHECK(p(r, 2) == 0.0);
        CHECK(p(r, 4) == 0.0);
      }
    }
  }
  SUBCASE("3-token example matches a dense recomputation with 1/sqrt(d_k) scaling") {
    const Mat q = test::random_mat(3, 4, rng), k = test::random_mat(3, 4, rng), v = test::random_mat(3, 4, rng);
    const Mat out = attention(q, k, v, {}, 1);
    CHECK((out - dense_attention(q, k, v, 0.5)).cwiseAbs().maxCoeff() < 1e-12);
    // Pre-scaling Q by 1/2 is the same as doubling sqrt(d_k).
    const Mat halved = attention(q * 0.5, k, v, {}, 1);
    CHECK((halved - dense_attention(q, k, v, 0.25)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((halved - out).cwiseAbs().maxCoeff() > 1e-6);
  }
}

TEST_CASE("encode shapes, normalization and pad invariance") {
  const auto vocab = Vocabulary::standard();
  const auto cfg = ModelConfig::bert_mini(vocab.size());
  auto w = init_model(cfg, 5);
  const auto tokens = tokenize(test::sample_prompt(), vocab);
  const Mat h = encode(w, tokens);
  CHECK(h.rows() == 96);
  CHECK(h.cols() == 256);
  CHECK(h.allFinite());

  auto altered = tokens;
  for (std::size_t i = 0; i < altered.ids.size(); ++i)
    if (!altered.attention_mask[i]) altered.ids[i] = 7 + static_cast<int>(i % 20);
  const Mat h2 = encode(w, altered);
  const int n = tokens.real_length();
  CHECK((h.topRows(n) - h2.topRows(n)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(predict(w, tokens) == predict(w, altered));

  std::mt19937_64 rng(9);
  const Mat xhat = layer_norm_rows(test::random_mat(7, 256, rng) * 3.0);
  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
    CHECK(std::abs(xhat.row(r).mean()) < 1e-5);
    CHECK(std::abs(xhat.row(r).squaredNorm() / 256.0 - 1.0) < 1e-5);
  }

  auto bad = tokens;
  bad.ids[3] = vocab.size();
  CHECK_THROWS_AS(encode(w, bad), ModelInputError);
}

TEST_CASE("tsp_head pooling and dense oracle") {
  SUBCASE("constant hidden pools to the constant") {
    const Mat pooled = average_pool(Mat::Constant(96, 256, 0.75), 3, 3);
    CHECK(pooled.rows() == 32);
    CHECK(pooled.cols() == 85);
    CHECK((pooled.array() - 0.75).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("6x6 toy grid with head dims 4,2,1") {
    ModelConfig cfg;
    cfg.layers = 0;
    cfg.hidden = 6;
    cfg.heads = 2;
    cfg.ffn_dim = 4;
    cfg.vocab_size = 8;
    cfg.max_len = 6;
    cfg.head_dims = {4, 2, 1};
    auto w = init_model(cfg, 2);
    std::mt19937_64 rng(4);
    w.for_each([&](const std::string&, Mat& m) { m = test::random_mat(m.rows(), m.cols(), rng); });
    const Mat hidden = test::random_mat(6, 6, rng);

    // Straightforward re-implementation: explicit loops, no Eigen products.
    std::vector<double> flat;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double s = 0;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) s += hidden(i * 3 + a, j * 3 + b);
        flat.push_back(s / 9.0);
      }
    auto linear = [](const std::vector<double>& x, const Mat& W, const Mat& b, bool act) {
      std::vector<double> y(static_cast<std::size_t>(W.cols()));
      for (Eigen::Index o = 0; o < W.cols(); ++o) {
        double s = b(0, o);
        for (Eigen::Index i = 0; i < W.rows(); ++i) s += x[static_cast<std::size_t>(i)] * W(i, o);
        y[static_cast<std::size_t>(o)] = act ? gelu_ref(s) : s;
      }
      return y;
    };
    auto y = linear(flat, w.head_weight[0], w.head_bias[0], true);
    y = linear(y, w.head_weight[1], w.head_bias[1], true);
    y = linear(y, w.head_weight[2], w.head_bias[2], false);
    CHECK(tsp_head(w, hidden) == doctest::Approx(y[0]).epsilon(1e-12));
  }
}

TEST_CASE("predict is deterministic and finite") {
  const auto vocab = Vocabulary::standard();
  const auto w = init_model(ModelConfig::bert_mini(vocab.size()), 21);
  const auto tokens = tokenize(test::sample_prompt(), vocab);
  const double a = predict(w, tokens);
  CHECK(std::isfinite(a));
  CHECK(a == predict(w, tokens));
}

TEST_CASE("gradients match central finite differences on a tiny config") {
  const auto cfg = test::tiny_config();
  const auto w = test::perturbed_model(cfg, 17);
  const auto batch = test::random_batch(cfg, 3, 23);
  for (const LossSpec loss : {LossSpec::mse(), LossSpec::blf(0.5), LossSpec::blf(1.0), LossSpec::blf(5.0)}) {
    CAPTURE(loss.to_string());
    const auto g = gradients(w, batch, loss);
    const auto fd = test::finite_difference(w, batch, loss, 1e-4);
    CHECK(test::max_relative_error(g.grads, fd) <= 1e-4);
  }
}

TEST_CASE("gradient of a batch is the mean of per-sample gradients") {
  const auto cfg = test::tiny_config();
  const auto w = test::perturbed_model(cfg, 5);
  const auto batch = test::random_batch(cfg, 2, 6);
  const auto both = gradients(w, batch, LossSpec::mse());
  const auto g0 = gradients(w, std::span(batch).first(1), LossSpec::mse());
  const auto g1 = gradients(w, std::span(batch).last(1), LossSpec::mse());
  double worst = 0;
  std::vector<const Mat*> a, b, c;
  both.grads.for_each([&](const std::string&, const Mat& m) { a.push_back(&m); });
  g0.grads.for_each([&](const std::string&, const Mat& m) { b.push_back(&m); });
  g1.grads.for_each([&](const std::string&, const Mat& m) { c.push_back(&m); });
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, (*a[i] - 0.5 * (*b[i] + *c[i])).cwiseAbs().maxCoeff());
  CHECK(worst <= 1e-10);
}

TEST_CASE("zero loss gives zero gradient") {
  const auto cfg = test::tiny_config();
  const auto w = test::perturbed_model(cfg, 8);
  auto batch = test::random_batch(cfg, 2, 9);
  for (auto& ex : batch) ex.target = predict(w, ex.tokens);
  const auto g = gradients(w, batch, LossSpec::mse());
  CHECK(g.mean_loss == 0.0);
  CHECK(g.grads.head_weight.back().isZero());
  CHECK(g.grads.head_bias.back().isZero());
}

TEST_CASE("non-finite loss is reported") {
  const auto cfg = test::tiny_config();
  auto w = test::perturbed_model(cfg, 8);
  auto batch = test::random_batch(cfg, 1, 9);
  batch[0].target = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(gradients(w, batch, LossSpec::mse()), GradientError);
}

TEST_CASE("tensor import round-trips and rejects bad shapes") {
  const auto cfg = test::tiny_config();
  const auto w = test::perturbed_model(cfg, 1);
  auto target = ModelWeights::zeros(cfg);
  import_tensors(target, export_tensors(w));
  CHECK(target == w);
  auto tensors = export_tensors(w);
  tensors[0].shape[1] += 1;
  CHECK_THROWS_AS(import_tensors(target, tensors), ModelInputError);
}
