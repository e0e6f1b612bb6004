#include "berto/baselines.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace berto {

namespace {

Mat features(const FnnWeights& w, const PredictionSample& s) {
  if (static_cast<int>(s.history.size()) + 2 != w.input_dim())
    throw std::invalid_argument("fnn: history length does not match the network");
  Mat x(1, w.input_dim());
  for (std::size_t i = 0; i < s.history.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = s.history[i] / w.value_scale;
  x(0, w.input_dim() - 2) = s.mean / w.value_scale;
  x(0, w.input_dim() - 1) = s.deviation / w.value_scale;
  return x;
}

}  // namespace

double previous_value_predict(const PredictionSample& sample) {
  if (sample.history.empty()) throw std::invalid_argument("previous value: empty history");
  return sample.history.back();
}

std::size_t FnnWeights::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

bool FnnWeights::operator==(const FnnWeights& o) const {
  return value_scale == o.value_scale && w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
}

FnnWeights fnn_init(int history_len, int hidden, std::uint64_t seed) {
  if (history_len < 1 || hidden < 1) throw std::invalid_argument("fnn: sizes must be positive");
  FnnWeights w;
  const int in = history_len + 2;
  w.w1 = Mat(in, hidden);
  w.b1 = Mat::Zero(1, hidden);
  w.w2 = Mat(hidden, 1);
  w.b2 = Mat::Zero(1, 1);
  std::mt19937_64 rng(seed);
  auto fill = [&](Mat& m, double bound) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = (2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0) * bound;
  };
  fill(w.w1, 1.0 / std::sqrt(static_cast<double>(in)));
  fill(w.w2, 1.0 / std::sqrt(static_cast<double>(hidden)));
  return w;
}

double fnn_predict(const FnnWeights& w, const PredictionSample& sample) {
  const Mat x = features(w, sample);
  Mat z = x * w.w1 + w.b1;
  const Mat a = z.array().tanh();
  const Mat out = a * w.w2 + w.b2;
  return out(0, 0) * w.value_scale;
}

FnnGradient fnn_gradients(const FnnWeights& w, std::span<const PredictionSample> batch, const LossSpec& loss) {
  FnnGradient g;
  g.grads.value_scale = w.value_scale;
  g.grads.w1 = Mat::Zero(w.w1.rows(), w.w1.cols());
  g.grads.b1 = Mat::Zero(1, w.b1.cols());
  g.grads.w2 = Mat::Zero(w.w2.rows(), 1);
  g.grads.b2 = Mat::Zero(1, 1);
  if (batch.empty()) return g;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    const Mat x = features(w, s);
    const Mat z = x * w.w1 + w.b1;
    const Mat a = z.array().tanh();
    const double pred = (a * w.w2 + w.b2)(0, 0) * w.value_scale;
    const double l = loss.value(s.target, pred);
    if (!std::isfinite(l)) throw GradientError("fnn: non-finite loss");
    g.mean_loss += l * inv_n;
    const double dout = loss.derivative(s.target, pred) * inv_n * w.value_scale;
    g.grads.w2 += a.transpose() * dout;
    g.grads.b2(0, 0) += dout;
    const Mat dz = (w.w2.transpose() * dout).array() * (1.0 - a.array().square());
    g.grads.w1 += x.transpose() * dz;
    g.grads.b1 += dz;
  }
  return g;
}

namespace {

double fnn_mse(const FnnWeights& w, std::span<const PredictionSample> samples) {
  double s = 0;
  for (const auto& x : samples) {
    const double d = fnn_predict(w, x) - x.target;
    s += d * d;
  }
  return s / static_cast<double>(samples.size());
}

}  // namespace

FnnTrainResult fnn_train(std::span<const PredictionSample> samples, const TrainConfig& cfg, int hidden,
                         std::span<const PredictionSample> eval_samples) {
  cfg.validate();
  if (samples.empty()) throw TrainingError("fnn: empty sample set");
  FnnTrainResult r;
  r.weights = fnn_init(static_cast<int>(samples[0].history.size()), hidden, cfg.seed);
  const std::size_t n = samples.size();
  const std::size_t per_epoch = cfg.samples_per_epoch > 0 ? std::min(cfg.samples_per_epoch, n) : n;
  const long steps_per_epoch = static_cast<long>((per_epoch + cfg.batch_size - 1) / cfg.batch_size);
  const long total = std::max(1L, steps_per_epoch * cfg.epochs);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  AdamState state;
  const AdamHyper hyper{cfg.beta1, cfg.beta2, cfg.adam_eps};
  auto params = parameter_list(r.weights);
  const bool has_eval = !eval_samples.empty();
  FnnWeights best = r.weights;
  double best_mse = has_eval ? fnn_mse(r.weights, eval_samples) : 0.0;
  int stale = 0;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    double loss_sum = 0;
    double lr = 0;
    std::vector<PredictionSample> batch;
    for (std::size_t start = 0; start < per_epoch; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(per_epoch, start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(samples[order[i]]);
      auto g = fnn_gradients(r.weights, batch, cfg.loss);
      auto grads = parameter_list(g.grads);
      clip_global_norm(grads, cfg.clip_norm);
      lr = cosine_lr(step++, total, cfg.base_lr);
      const std::vector<const Mat*> cgrads(grads.begin(), grads.end());
      optimizer_step(params, cgrads, state, lr, cfg.weight_decay, hyper);
      loss_sum += g.mean_loss * static_cast<double>(end - start);
    }
    const double train_loss = loss_sum / static_cast<double>(per_epoch);
    if (!std::isfinite(train_loss)) throw TrainingError("fnn: epoch " + std::to_string(epoch) + ": loss diverged");
    const double eval_mse = has_eval ? fnn_mse(r.weights, eval_samples) : train_loss;
    r.history.push_back({epoch, lr, train_loss, eval_mse});
    if (!has_eval) continue;
    if (eval_mse < best_mse) {
      best_mse = eval_mse;
      best = r.weights;
      stale = 0;
    } else if (cfg.early_stop_patience > 0 && ++stale >= cfg.early_stop_patience) {
      break;
    }
  }
  if (has_eval) r.weights = std::move(best);
  return r;
}

}  // namespace berto
