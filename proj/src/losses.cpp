#include <cstdlib>
#include "berto/losses.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace berto {

namespace {

void check_q(double q) {
  if (!(q > 0.0)) throw std::invalid_argument("BLF q must be positive");
}

}  // namespace

LossSpec LossSpec::blf(double q) {
  check_q(q);
  return {LossKind::Blf, q};
}

double LossSpec::value(double y, double y_hat) const {
  return kind == LossKind::Mse ? berto::mse(y, y_hat) : berto::blf(y, y_hat, q);
}

double LossSpec::derivative(double y, double y_hat) const {
  return kind == LossKind::Mse ? 2.0 * (y_hat - y) : blf_subgradient(y, y_hat, q);
}

std::string LossSpec::to_string() const {
  if (kind == LossKind::Mse) return "mse";
  char buf[64];
  for (int digits = 6; digits <= 17; ++digits) {  // shortest text that parses back exactly
    std::snprintf(buf, sizeof buf, "blf:%.*g", digits, q);
    if (std::strtod(buf + 4, nullptr) == q) break;
  }
  return buf;
}

LossSpec LossSpec::parse(const std::string& text) {
  if (text == "mse") return mse();
  if (text.rfind("blf:", 0) == 0) return blf(std::stod(text.substr(4)));
  throw std::invalid_argument("unknown loss '" + text + "' (mse | blf:<q>)");
}

double mse(double y, double y_hat) { return (y - y_hat) * (y - y_hat); }

double mse(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw std::invalid_argument("mse: size mismatch");
  if (y.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += mse(y[i], y_hat[i]);
  return s / static_cast<double>(y.size());
}

double blf(double y, double y_hat, double q) {
  check_q(q);
  return std::max(q * (y - y_hat) / (q + 1.0), (y_hat - y) / (q + 1.0));
}

double blf_subgradient(double y, double y_hat, double q) {
  check_q(q);
  if (y_hat < y) return -q / (q + 1.0);
  if (y_hat > y) return 1.0 / (q + 1.0);
  return 0.0;
}

double blf_minimizer_quantile(double q) {
  check_q(q);
  return q / (q + 1.0);
}

}  // namespace berto
