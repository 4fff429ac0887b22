#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace countgraph {

/// Total number of times any Plf evaluation received an input outside
/// [0,1] and clamped it. Diagnostic only.
inline std::atomic<std::uint64_t>& plf_clamp_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

inline void reset_plf_clamp_count() { plf_clamp_count().store(0); }

/// Gradient of a Plf at one input point.
struct PlfGrad {
  double dx = 0.0;               ///< slope of the active segment
  std::vector<double> dweights;  ///< gradient w.r.t. the raw weights
};

/// Monotone piecewise-linear map [0,1] -> [0,1] on a uniform knot grid.
///
/// The raw weights are unconstrained. The realized segment increments are
/// the normalized absolute values |w_i| / (sum_j |w_j| + kEps), so the
/// curve is non-decreasing with f(0) = 0 and f(1) = 1 for every raw
/// vector. A Plf is immutable once constructed; optimizers build new
/// values from updated raw weights.
class Plf {
 public:
  static constexpr double kEps = 1e-12;

  Plf() : Plf(std::vector<double>{1.0}) {}

  explicit Plf(std::vector<double> raw_weights) : raw_(std::move(raw_weights)) {
    if (raw_.empty()) {
      throw std::invalid_argument("Plf: need at least one segment");
    }
    prefix_.resize(raw_.size() + 1);
    prefix_[0] = 0.0;
    for (std::size_t i = 0; i < raw_.size(); ++i) {
      prefix_[i + 1] = prefix_[i] + std::abs(raw_[i]);
    }
    norm_ = prefix_.back() + kEps;
  }

  /// All raw weights 1, realizing f(x) = x.
  static Plf identity(int segments) {
    if (segments < 1) {
      throw std::invalid_argument("Plf::identity: segments must be >= 1");
    }
    return Plf(std::vector<double>(static_cast<std::size_t>(segments), 1.0));
  }

  int segments() const { return static_cast<int>(raw_.size()); }
  const std::vector<double>& raw_weights() const { return raw_; }

  double eval(double x) const {
    x = clamp_input(x);
    const int d = segments();
    const double t = d * x;
    const int i = std::min(static_cast<int>(t), d - 1);
    return (prefix_[i] + std::abs(raw_[i]) * (t - i)) / norm_;
  }

  /// Slope of the active segment. Interior knots take the left segment.
  double slope_at(double x) const {
    x = clamp_input(x);
    return segments() * std::abs(raw_[active_segment(x)]) / norm_;
  }

  PlfGrad grad(double x) const {
    PlfGrad g;
    g.dx = slope_at(x);
    g.dweights.assign(raw_.size(), 0.0);
    add_weight_grad(x, 1.0, g.dweights);
    return g;
  }

  /// acc += scale * df/dw at x. Exact gradient through the normalization,
  /// with sign(0) = 0.
  void add_weight_grad(double x, double scale, std::vector<double>& acc) const {
    x = clamp_input(x);
    const int d = segments();
    const double t = d * x;
    const double fx = eval(x);
    for (int k = 0; k < d; ++k) {
      const double sgn = sign(raw_[k]);
      if (sgn == 0.0) continue;
      const double gk = std::clamp(t - k, 0.0, 1.0);
      acc[static_cast<std::size_t>(k)] += scale * sgn * (gk - fx) / norm_;
    }
  }

  /// k >= 2 samples at x = i/(k-1).
  std::vector<std::pair<double, double>> sample(int k) const {
    if (k < 2) {
      throw std::invalid_argument("Plf::sample: need at least two points");
    }
    std::vector<std::pair<double, double>> points;
    points.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      const double x = static_cast<double>(i) / (k - 1);
      points.emplace_back(x, eval(x));
    }
    return points;
  }

 private:
  static double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

  static double clamp_input(double x) {
    if (x < 0.0 || x > 1.0) {
      plf_clamp_count().fetch_add(1, std::memory_order_relaxed);
      return std::clamp(x, 0.0, 1.0);
    }
    return x;
  }

  // Segment owning x, 0-based; t in (k-1, k] maps to segment k-1.
  int active_segment(double x) const {
    const int d = segments();
    const double t = d * x;
    const int seg = static_cast<int>(std::ceil(t)) - 1;
    return std::clamp(seg, 0, d - 1);
  }

  std::vector<double> raw_;
  std::vector<double> prefix_;  // prefix_[i] = sum_{j<i} |raw_[j]|
  double norm_ = 0.0;           // sum |raw_| + kEps
};

}  // namespace countgraph
