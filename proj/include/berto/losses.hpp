#pragma once

#include <span>
#include <string>

namespace berto {

enum class LossKind { Mse, Blf };

struct LossSpec {
  LossKind kind = LossKind::Mse;
  double q = 1.0;  // BLF only

  static LossSpec mse() { return {}; }
  static LossSpec blf(double q);

  double value(double y, double y_hat) const;
  /// d(loss)/d(y_hat); zero at the BLF kink.
  double derivative(double y, double y_hat) const;

  std::string to_string() const;
  static LossSpec parse(const std::string& text);  // "mse" | "blf:<q>"

  bool operator==(const LossSpec&) const = default;
};

double mse(double y, double y_hat);
double mse(std::span<const double> y, std::span<const double> y_hat);

// Balancing loss: max{ q(y - y_hat), (y_hat - y) } / (q + 1).
double blf(double y, double y_hat, double q);
double blf_subgradient(double y, double y_hat, double q);

/// The quantile level q/(q+1) that minimizes expected BLF.
double blf_minimizer_quantile(double q);

}  // namespace berto
