#include <cmath>

#include "berto/baselines.hpp"
#include "doctest.h"

using namespace berto;

namespace {

std::vector<PredictionSample> samples_from(const std::vector<LoadSeries>& series) {
  std::vector<PredictionSample> out;
  for (const auto& s : series)
    for (auto& x : make_samples(s, 5, 144)) out.push_back(std::move(x));
  return out;
}

PredictionSample sample(std::vector<double> h, double target) {
  PredictionSample s;
  s.history = std::move(h);
  s.mean = 20;
  s.deviation = 3;
  s.target = target;
  return s;
}

double fnn_batch_loss(const FnnWeights& w, const std::vector<PredictionSample>& b, const LossSpec& loss) {
  double s = 0;
  for (const auto& x : b) s += loss.value(x.target, fnn_predict(w, x));
  return s / static_cast<double>(b.size());
}

template <class Pred>
double mse_of(const std::vector<PredictionSample>& s, Pred&& pred) {
  double acc = 0;
  for (const auto& x : s) acc += (pred(x) - x.target) * (pred(x) - x.target);
  return acc / static_cast<double>(s.size());
}

}  // namespace

TEST_CASE("previous value") {
  CHECK(previous_value_predict(sample({1, 2, 3, 4, 5}, 0)) == 5.0);
  CHECK_THROWS(previous_value_predict(sample({}, 0)));
  const auto flat = make_samples({1, 0, 600, std::vector<double>(30, 42.0)}, 5, 5);
  for (const auto& s : flat) CHECK(previous_value_predict(s) == s.target);
}

TEST_CASE("fnn shape and parameter count") {
  const auto w = fnn_init(5, 16, 1);
  CHECK(w.input_dim() == 7);
  CHECK(w.parameter_count() == 7u * 16 + 16 + 16 + 1);
  CHECK(fnn_init(5, 16, 1) == w);
  CHECK_FALSE(fnn_init(5, 16, 2) == w);
  CHECK(std::isfinite(fnn_predict(w, sample({1, 2, 3, 4, 5}, 0))));
  CHECK_THROWS(fnn_predict(w, sample({1, 2, 3}, 0)));
}

TEST_CASE("fnn gradients match finite differences") {
  const std::vector<PredictionSample> batch{sample({10, 12, 11, 13, 12}, 80), sample({50, 40, 45, 60, 55}, -30),
                                            sample({0, 5, 90, 2, 7}, 44)};
  auto w = fnn_init(5, 6, 3);
  for (const auto& loss : {LossSpec::mse(), LossSpec::blf(0.5), LossSpec::blf(5)}) {
    const auto g = fnn_gradients(w, batch, loss);
    CHECK(g.mean_loss == doctest::Approx(fnn_batch_loss(w, batch, loss)).epsilon(1e-12));
    auto probe = w;
    std::vector<Mat*> ps;
    std::vector<const Mat*> gs;
    probe.for_each([&](const std::string&, Mat& m) { ps.push_back(&m); });
    g.grads.for_each([&](const std::string&, const Mat& m) { gs.push_back(&m); });
    // Central differences carry ~eps_mach * |loss| / h of roundoff, so entries
    // far below the largest gradient are judged against that scale instead.
    double gmax = 0;
    for (const Mat* m : gs) gmax = std::max(gmax, m->cwiseAbs().maxCoeff());
    const double floor = 1e-3 * gmax;
    double worst = 0;
    for (std::size_t p = 0; p < ps.size(); ++p)
      for (Eigen::Index i = 0; i < ps[p]->size(); ++i) {
        double& x = ps[p]->data()[i];
        const double orig = x, eps = 1e-5;
        x = orig + eps;
        const double up = fnn_batch_loss(probe, batch, loss);
        x = orig - eps;
        const double down = fnn_batch_loss(probe, batch, loss);
        x = orig;
        const double fd = (up - down) / (2 * eps);
        const double an = gs[p]->data()[i];
        worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor}));
      }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("zero epochs returns the initialization") {
  SynthConfig sc;
  sc.num_cells = 2;
  sc.days = 2;
  const auto s = samples_from(synth_traffic(sc));
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 4;
  const auto r = fnn_train(s, cfg, 16);
  CHECK(r.weights == fnn_init(5, 16, 4));
  CHECK(r.history.empty());
}

TEST_CASE("fnn beats previous value on a noiseless sinusoid") {
  SynthConfig sc;
  sc.num_cells = 4;
  sc.days = 6;
  sc.noise_std = 0;
  const auto all = samples_from(synth_traffic(sc));
  std::vector<PredictionSample> train_set, test_set;
  for (const auto& x : all) (x.target_ms - sc.start_ms < 4LL * 144 * kBinMs ? train_set : test_set).push_back(x);
  TrainConfig cfg;
  cfg.base_lr = 1e-2;
  cfg.batch_size = 32;
  cfg.epochs = 40;
  cfg.weight_decay = 0;
  const auto r = fnn_train(train_set, cfg, 16);
  const double fnn = mse_of(test_set, [&](const auto& x) { return fnn_predict(r.weights, x); });
  const double prev = mse_of(test_set, [](const auto& x) { return previous_value_predict(x); });
  MESSAGE("noiseless test mse: fnn " << fnn << ", previous value " << prev);
  CHECK(fnn < prev);

  const auto again = fnn_train(train_set, cfg, 16);
  CHECK(again.weights == r.weights);
}

TEST_CASE("fnn early stopping keeps the best eval epoch") {
  SynthConfig sc;
  sc.num_cells = 2;
  sc.days = 3;
  const auto s = samples_from(synth_traffic(sc));
  TrainConfig cfg;
  cfg.base_lr = 0.05;
  cfg.epochs = 8;
  cfg.early_stop_patience = 2;
  const auto r = fnn_train(s, cfg, 16, s);
  double best = 1e300;
  for (const auto& h : r.history) best = std::min(best, h.eval_mse);
  CHECK(mse_of(s, [&](const auto& x) { return fnn_predict(r.weights, x); }) <= best + 1e-9);
}
