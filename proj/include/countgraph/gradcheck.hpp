#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "countgraph/counting.hpp"
#include "countgraph/oracle.hpp"
#include "countgraph/rng.hpp"

namespace countgraph {

/// Random parameters suitable for finite-difference checks: every raw
/// weight keeps |w| >= 0.1 so no perturbation crosses the sign kink of
/// the normalization.
inline CountParams random_params(std::mt19937_64& rng, int segments, double theta = 0.5) {
  const auto draw = [&rng, segments] {
    std::vector<double> raw(static_cast<std::size_t>(segments));
    for (double& w : raw) {
      const double magnitude = 0.1 + 1.9 * u01(rng);
      w = u01(rng) < 0.5 ? magnitude : -magnitude;
    }
    return Plf(raw);
  };
  return CountParams{{draw(), draw(), draw(), draw(), draw(), draw(), draw(), draw()},
                     theta};
}

/// Random scene with generic box overlap and interior attention weights.
inline Scene random_scene(std::mt19937_64& rng, int n) {
  Scene scene;
  scene.boxes.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double x = 0.7 * u01(rng);
    const double y = 0.7 * u01(rng);
    const double w = 0.05 + 0.3 * u01(rng);
    const double h = 0.05 + 0.3 * u01(rng);
    scene.boxes.push_back(Box{x, y, x + w, y + h});
  }
  scene.attention.resize(n);
  for (int i = 0; i < n; ++i) scene.attention[i] = 0.02 + 0.96 * u01(rng);
  return scene;
}

namespace detail {

inline bool near_knot(double x, int segments, double margin) {
  const double t = x * segments;
  return std::abs(t - std::round(t)) < margin * segments;
}

}  // namespace detail

/// Rejects draws whose finite differences would straddle a kink: a Plf
/// input that moves with the attention sitting on a knot, a count near an
/// integer, a confidence estimate at the theta crossing or at the clamp
/// boundary. Such collisions are measure zero; rejected draws are redrawn
/// by the caller.
inline bool fd_smooth(const CountParams& params, const Scene& scene,
                      const ForwardTrace& trace, double margin = 1e-3) {
  const Eigen::Index n = scene.attention.size();
  const Eigen::VectorXd& a = scene.attention;
  const int d1 = params.f[0].segments();
  const int d3 = params.f[2].segments();
  const int d6 = params.f[5].segments();

  for (Eigen::Index i = 0; i < n; ++i) {
    if (detail::near_knot(a[i] * a[i], d1, margin)) return false;
    if (detail::near_knot(a[i], d6, margin)) return false;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (detail::near_knot(trace.adjacency(i, j), d1, margin)) return false;
      if (i != j) {
        if (std::abs(a[i] - a[j]) < margin) return false;
        if (detail::near_knot(1.0 - std::abs(a[i] - a[j]), d3, margin)) return false;
      }
    }
  }

  if (trace.count < margin || trace.count > n - margin) return false;
  if (std::abs(trace.count - std::round(trace.count)) < margin) return false;

  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(params.f[5].eval(a[i]) - params.theta) < margin) return false;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(params.f[6].eval(trace.distance(i, j)) - params.theta) < margin) {
        return false;
      }
    }
  }

  const double u_raw = trace.p_attention + trace.p_distance;
  if (u_raw < margin || std::abs(u_raw - 1.0) < margin) return false;
  if (u_raw < 1.0 && detail::near_knot(u_raw, params.f[7].segments(), margin)) return false;
  return true;
}

/// Largest entrywise deviation between two gradient blocks, normalized by
/// the block scale (relative above `floor`, absolute below).
inline double block_rel_error(const std::vector<double>& analytic,
                              const std::vector<double>& reference,
                              double floor = 1e-6) {
  double scale = floor;
  for (double v : analytic) scale = std::max(scale, std::abs(v));
  for (double v : reference) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - reference[i]) / scale);
  }
  return worst;
}

struct GradCheckResult {
  int draws = 0;
  int rejected = 0;
  double max_rel_error = 0.0;
  std::string worst_block;
};

/// Compares analytic backward gradients against central finite
/// differences of the squared-output loss sum(gated_output^2) over random
/// (params, scene) draws.
inline GradCheckResult run_grad_check(int draws, int n, int segments, double h,
                                      std::uint64_t seed, double theta = 0.5) {
  if (draws < 1) throw std::invalid_argument("grad check: draws must be >= 1");
  if (n < 1) throw std::invalid_argument("grad check: n must be >= 1");

  std::mt19937_64 rng(seed);
  GradCheckResult result;
  const auto loss = [](const Eigen::VectorXd& o) { return o.squaredNorm(); };

  while (result.draws < draws) {
    const CountParams params = random_params(rng, segments, theta);
    const Scene scene = random_scene(rng, n);
    const ForwardTrace trace = forward(params, scene);
    if (!fd_smooth(params, scene, trace)) {
      ++result.rejected;
      if (result.rejected > 1000 * draws) {
        throw std::runtime_error("grad check: rejection sampling failed to converge");
      }
      continue;
    }
    ++result.draws;

    const Eigen::VectorXd d_out = 2.0 * trace.gated_output;
    const CountGrads analytic = backward(params, scene, trace, d_out);
    const CountGrads reference = fd_gradient(params, scene, loss, h);

    for (std::size_t k = 0; k < 8; ++k) {
      const double err = block_rel_error(analytic.plf_weights[k], reference.plf_weights[k]);
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_block = "f" + std::to_string(k + 1);
      }
    }
    const std::vector<double> a_an(analytic.attention.begin(), analytic.attention.end());
    const std::vector<double> a_fd(reference.attention.begin(), reference.attention.end());
    const double err = block_rel_error(a_an, a_fd);
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_block = "attention";
    }
  }
  return result;
}

}  // namespace countgraph
