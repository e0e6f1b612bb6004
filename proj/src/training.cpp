#include "berto/training.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

namespace berto {

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw std::invalid_argument("train config: base_lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
  if (weight_decay < 0) throw std::invalid_argument("train config: weight_decay must be >= 0");
}

void TrainConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "base_lr") base_lr = std::stod(v);
    else if (k == "batch_size") batch_size = std::stoi(v);
    else if (k == "epochs") epochs = std::stoi(v);
    else if (k == "weight_decay") weight_decay = std::stod(v);
    else if (k == "seed") seed = std::stoull(v);
    else if (k == "loss") loss = LossSpec::parse(v);
    else if (k == "clip_norm") clip_norm = std::stod(v);
    else if (k == "early_stop_patience") early_stop_patience = std::stoi(v);
    else if (k == "samples_per_epoch") samples_per_epoch = std::stoull(v);
    else if (k == "beta1") beta1 = std::stod(v);
    else if (k == "beta2") beta2 = std::stod(v);
    else if (k == "adam_eps") adam_eps = std::stod(v);
    else throw std::invalid_argument("train config: unknown key '" + k + "'");
  }
  validate();
}

double cosine_lr(long step, long total_steps, double base_lr) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("cosine_lr: step out of range");
  if (step == total_steps) return 0.0;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

void optimizer_step(std::span<Mat* const> params, std::span<const Mat* const> grads, AdamState& state, double lr,
                    double decay, const AdamHyper& hyper) {
  if (params.size() != grads.size()) throw TrainingError("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i]->rows() != params[i]->rows() || grads[i]->cols() != params[i]->cols())
      throw TrainingError("optimizer: gradient shape mismatch");
    if (!grads[i]->allFinite()) throw TrainingError("optimizer: non-finite gradient in tensor " + std::to_string(i));
  }
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(Mat::Zero(p->rows(), p->cols()));
      state.v.push_back(Mat::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw TrainingError("optimizer: state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const Mat& g = *grads[i];
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * g.cwiseProduct(g);
    auto& w = *params[i];
    w.array() -= lr * ((m.array() / c1) / ((v.array() / c2).sqrt() + hyper.eps) + decay * w.array());
  }
}

double clip_global_norm(std::span<Mat* const> grads, double max_norm) {
  double sq = 0.0;
  for (auto* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* g : grads) *g *= s;
  }
  return norm;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  // Multiply-shift on the top 32 bits; bias is negligible for our n.
  const std::uint64_t r = rng() >> 32;
  return static_cast<std::size_t>((r * static_cast<std::uint64_t>(n)) >> 32);
}

void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
}

Evaluation evaluate_predictions(std::span<const double> predictions, std::span<const PredictionSample> samples) {
  if (predictions.size() != samples.size()) throw std::invalid_argument("evaluate: size mismatch");
  Evaluation e;
  e.predictions.assign(predictions.begin(), predictions.end());
  if (samples.empty()) return e;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double err = predictions[i] - samples[i].target;
    e.mse += err * err;
    e.mean_signed_error += err;
  }
  e.mse /= static_cast<double>(samples.size());
  e.mean_signed_error /= static_cast<double>(samples.size());
  return e;
}

Evaluation evaluate(const ModelWeights& w, const Vocabulary& vocab, std::span<const PredictionSample> samples,
                    std::optional<Preference> pref) {
  std::vector<double> preds;
  preds.reserve(samples.size());
  for (const auto& s : samples) preds.push_back(predict(w, tokenize(render_prompt(s, pref), vocab, w.config.max_len)));
  return evaluate_predictions(preds, samples);
}

TrainResult fit(ModelWeights init, std::size_t num_samples, const ExampleFactory& make,
                std::span<const PredictionSample> eval_samples, const Vocabulary& vocab, const TrainConfig& cfg,
                std::optional<Preference> eval_preference) {
  cfg.validate();
  if (num_samples == 0) throw TrainingError("train: empty sample set");
  TrainResult result;
  result.weights = std::move(init);
  const bool has_eval = !eval_samples.empty();
  if (has_eval) result.initial_eval_mse = evaluate(result.weights, vocab, eval_samples, eval_preference).mse;

  const std::size_t per_epoch =
      cfg.samples_per_epoch > 0 ? std::min(cfg.samples_per_epoch, num_samples) : num_samples;
  const long steps_per_epoch = static_cast<long>((per_epoch + cfg.batch_size - 1) / cfg.batch_size);
  const long total_steps = std::max(1L, steps_per_epoch * cfg.epochs);

  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 choice_rng(cfg.seed ^ 0x5bd1e9955bd1e995ULL);
  std::vector<std::size_t> order(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) order[i] = i;

  AdamState state;
  const AdamHyper hyper{cfg.beta1, cfg.beta2, cfg.adam_eps};
  ModelWeights best = result.weights;
  double best_mse = has_eval ? result.initial_eval_mse : std::numeric_limits<double>::infinity();
  int stale = 0;
  long step = 0;
  auto params = parameter_list(result.weights);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(order, order_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    double lr = 0.0;
    try {
      for (std::size_t start = 0; start < per_epoch; start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(per_epoch, start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<Example> batch;
        batch.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) batch.push_back(make(order[i], choice_rng));
        auto g = gradients(result.weights, batch);
        auto grads = parameter_list(g.grads);
        clip_global_norm(grads, cfg.clip_norm);
        lr = cosine_lr(step, total_steps, cfg.base_lr);
        const std::vector<const Mat*> cgrads(grads.begin(), grads.end());
        optimizer_step(params, cgrads, state, lr, cfg.weight_decay, hyper);
        ++step;
        loss_sum += g.mean_loss * static_cast<double>(end - start);
        seen += end - start;
      }
    } catch (const std::exception& e) {
      result.diverged = true;
      result.diagnostic = "epoch " + std::to_string(epoch) + ": " + e.what();
      result.weights = best;
      return result;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    if (!std::isfinite(rec.train_loss) || !result.weights.all_finite()) {
      result.diverged = true;
      result.diagnostic = "epoch " + std::to_string(epoch) + ": training loss diverged";
      result.weights = best;
      return result;
    }
    rec.eval_mse = has_eval ? evaluate(result.weights, vocab, eval_samples, eval_preference).mse : rec.train_loss;
    result.history.push_back(rec);
    if (!has_eval) {
      best = result.weights;
      continue;
    }
    if (rec.eval_mse < best_mse) {
      best_mse = rec.eval_mse;
      best = result.weights;
      stale = 0;
    } else if (cfg.early_stop_patience > 0 && ++stale >= cfg.early_stop_patience) {
      break;
    }
  }
  result.weights = std::move(best);
  return result;
}

TrainResult train(ModelWeights init, std::span<const PredictionSample> samples,
                  std::span<const PredictionSample> eval_samples, const Vocabulary& vocab, const TrainConfig& cfg) {
  const int len = init.config.max_len;
  std::vector<TokenSequence> tokens;
  tokens.reserve(samples.size());
  for (const auto& s : samples) tokens.push_back(tokenize(render_prompt(s), vocab, len));
  const ExampleFactory make = [&](std::size_t i, std::mt19937_64&) {
    return Example{tokens[i], samples[i].target, cfg.loss};
  };
  return fit(std::move(init), samples.size(), make, eval_samples, vocab, cfg);
}

TrainResult finetune_berto(ModelWeights init, std::span<const PredictionSample> samples,
                           std::span<const PredictionSample> eval_samples, const Vocabulary& vocab,
                           const TrainConfig& cfg, const FinetuneOptions& opts) {
  if (opts.preferences.empty()) throw TrainingError("finetune: no preferences allowed");
  const int len = init.config.max_len;
  const ExampleFactory make = [&](std::size_t i, std::mt19937_64& rng) {
    const Preference p = opts.preferences.size() == 1 ? opts.preferences[0]
                                                      : opts.preferences[uniform_index(rng, opts.preferences.size())];
    const auto clause = opts.include_clause ? std::optional<Preference>(p) : std::nullopt;
    return Example{tokenize(render_prompt(samples[i], clause), vocab, len), samples[i].target,
                   LossSpec::blf(q_for_preference(p, opts.orientation))};
  };
  std::optional<Preference> eval_pref;
  if (opts.include_clause) {
    eval_pref = opts.preferences.front();
    for (auto p : opts.preferences)
      if (p == Preference::Neutral) eval_pref = p;
  }
  return fit(std::move(init), samples.size(), make, eval_samples, vocab, cfg, eval_pref);
}

void write_history(std::ostream& out, const std::vector<EpochRecord>& history) {
  out.precision(10);
  out << "epoch,lr,train_loss,eval_mse\n";
  for (const auto& r : history) out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.eval_mse << '\n';
}

}  // namespace berto
