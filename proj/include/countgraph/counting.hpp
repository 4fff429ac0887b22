#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "countgraph/geometry.hpp"
#include "countgraph/plf.hpp"

namespace countgraph {

/// The module's entire trainable state: eight piecewise-linear
/// activations plus the confidence center theta.
///
/// f[0]..f[7] are f1..f8: f1 gates adjacency, f2 gates distance, f3/f4
/// form the proposal similarity, f6/f7 feed the confidence estimates and
/// f8 gates the output. f5 is carried as state for a fixed-size parameter
/// block but no operation consumes it, so its gradient is identically zero.
struct CountParams {
  std::array<Plf, 8> f;
  double theta = 0.5;

  static CountParams identity(int segments = 16, double theta = 0.5) {
    if (!(theta > 0.0 && theta < 1.0)) {
      throw std::invalid_argument("CountParams: theta must lie in (0,1)");
    }
    const Plf id = Plf::identity(segments);
    return CountParams{{id, id, id, id, id, id, id, id}, theta};
  }
};

/// One counting problem: n proposals with question-conditioned attention
/// weights and an optional ground-truth object count.
struct Scene {
  std::vector<Box> boxes;
  Eigen::VectorXd attention;
  std::optional<int> true_count;
};

inline void validate(const Scene& scene) {
  const auto n = static_cast<Eigen::Index>(scene.boxes.size());
  if (n < 1) throw std::invalid_argument("Scene: need at least one proposal");
  if (scene.attention.size() != n) {
    throw std::invalid_argument("Scene: boxes and attention lengths differ");
  }
  for (const Box& b : scene.boxes) {
    if (!is_valid(b)) throw std::invalid_argument("Scene: inverted box corners");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = scene.attention[i];
    if (!(a >= 0.0 && a <= 1.0)) {
      throw std::invalid_argument("Scene: attention weight outside [0,1]");
    }
  }
  if (scene.true_count && (*scene.true_count < 0 || *scene.true_count > n)) {
    throw std::invalid_argument("Scene: true_count outside 0..n");
  }
}

/// Every intermediate of one forward pass, retained for backprop and
/// inspection.
struct ForwardTrace {
  Eigen::MatrixXd adjacency;     ///< A = a a^T
  Eigen::MatrixXd distance;      ///< D(i,j) = 1 - IoU of boxes i, j
  Eigen::MatrixXd dedup;         ///< f1(A) .* f2(D), zero diagonal
  Eigen::MatrixXd similarity;    ///< f3(1-|a_i-a_j|) .* f4(1-D)
  Eigen::VectorXd scale;         ///< s_i = 1 / row sum of similarity
  Eigen::MatrixXd count_matrix;  ///< dedup .* s s^T + diag(s .* f1(a .* a))
  double count = 0.0;            ///< sqrt of count_matrix total
  Eigen::VectorXd output;        ///< k-hot encoding of count, size n+1
  double p_attention = 0.0;      ///< mean |f6(a_i) - theta|
  double p_distance = 0.0;       ///< mean |f7(D_ij) - theta|
  double gate = 0.0;             ///< f8(p_attention + p_distance)
  Eigen::VectorXd gated_output;  ///< gate * output
};

/// Gradients of a scalar loss w.r.t. the trainable state and the
/// attention input (for upstream attention when embedded in a larger
/// model).
struct CountGrads {
  std::array<std::vector<double>, 8> plf_weights;
  Eigen::VectorXd attention;
};

inline Eigen::MatrixXd adjacency(const Eigen::VectorXd& attention) {
  return attention * attention.transpose();
}

/// Removes intra-object edges: entries survive only where the proposals
/// both matter (f1 of adjacency) and do not overlap (f2 of distance).
/// The diagonal is exactly zero because D_ii = 0 and f2(0) = 0.
inline Eigen::MatrixXd dedup_intra(const Eigen::MatrixXd& adjacency,
                                   const Eigen::MatrixXd& distance,
                                   const Plf& f1, const Plf& f2) {
  const Eigen::Index n = adjacency.rows();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      out(i, j) = f1.eval(adjacency(i, j)) * f2.eval(distance(i, j));
    }
  }
  return out;
}

/// sim(i,j) = f3(1 - |a_i - a_j|) * f4(1 - D_ij). Proposals count as
/// similar when their attention agrees and their boxes overlap; the
/// diagonal is 1 by the Plf boundary conditions.
inline Eigen::MatrixXd similarity(const Eigen::VectorXd& attention,
                                  const Eigen::MatrixXd& distance,
                                  const Plf& f3, const Plf& f4) {
  const Eigen::Index n = attention.size();
  Eigen::MatrixXd sim(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = f3.eval(1.0 - std::abs(attention[i] - attention[j])) *
                       f4.eval(1.0 - distance(i, j));
      sim(i, j) = v;
      sim(j, i) = v;
    }
  }
  return sim;
}

/// s_i = 1 / sum_j sim(i,j). The unit diagonal of sim keeps every
/// denominator >= 1, so each s_i lies in (0,1].
inline Eigen::VectorXd scaling(const Eigen::MatrixXd& similarity) {
  const Eigen::Index n = similarity.rows();
  Eigen::VectorXd s(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    assert(similarity(i, i) >= 1.0 - 1e-9 && "scaling: similarity diagonal must be 1");
    double row = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) row += similarity(i, j);
    s[i] = 1.0 / row;
  }
  return s;
}

/// C = dedup .* s s^T + diag(s .* f1(a .* a)). Scaling by s on both edge
/// ends collapses duplicated proposals, and the self-loops removed by the
/// dedup step are added back scaled.
inline Eigen::MatrixXd assemble_C(const Eigen::MatrixXd& dedup,
                                  const Eigen::VectorXd& scale,
                                  const Eigen::VectorXd& attention,
                                  const Plf& f1) {
  const Eigen::Index n = scale.size();
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      c(i, j) = dedup(i, j) * scale[i] * scale[j];
    }
    c(i, i) += scale[i] * f1.eval(attention[i] * attention[i]);
  }
  return c;
}

/// The count is sqrt of the total edge weight: for a complete directed
/// graph with self-loops, vertices = sqrt(edges).
inline double count_from_C(const Eigen::MatrixXd& count_matrix) {
  return std::sqrt(count_matrix.sum());
}

/// Encodes a real count as a linear interpolation between the one-hot
/// vectors of its two neighbouring integers; indices run 0..n and the
/// count is clamped into [0, n] first. The result sums to 1 and has at
/// most two nonzero entries.
inline Eigen::VectorXd to_khot(double count, int n) {
  const double c = std::clamp(count, 0.0, static_cast<double>(n));
  Eigen::VectorXd o(n + 1);
  for (int k = 0; k <= n; ++k) {
    o[k] = std::max(0.0, 1.0 - std::abs(c - k));
  }
  return o;
}

struct ConfidenceEstimate {
  double p_attention = 0.0;
  double p_distance = 0.0;
  double gate = 0.0;
};

/// Average deviation of f6(attention) and f7(distance) from the
/// confidence center theta, and the resulting output gate
/// f8(p_attention + p_distance). For theta = 0.5 both means lie in
/// [0, 0.5] and the clamp on the sum is inactive.
inline ConfidenceEstimate confidence(const Eigen::VectorXd& attention,
                                     const Eigen::MatrixXd& distance,
                                     const CountParams& params) {
  const Eigen::Index n = attention.size();
  const Plf& f6 = params.f[5];
  const Plf& f7 = params.f[6];
  const Plf& f8 = params.f[7];
  ConfidenceEstimate est;
  for (Eigen::Index i = 0; i < n; ++i) {
    est.p_attention += std::abs(f6.eval(attention[i]) - params.theta);
  }
  est.p_attention /= static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      est.p_distance += std::abs(f7.eval(distance(i, j)) - params.theta);
    }
  }
  est.p_distance /= static_cast<double>(n * n);
  est.gate = f8.eval(std::clamp(est.p_attention + est.p_distance, 0.0, 1.0));
  return est;
}

/// Full forward pass. Total on valid scenes; all trace fields are finite.
inline ForwardTrace forward(const CountParams& params, const Scene& scene) {
  validate(scene);
  const auto n = static_cast<int>(scene.boxes.size());
  const Eigen::VectorXd& a = scene.attention;

  ForwardTrace trace;
  trace.distance = distance_matrix(scene.boxes);
  trace.adjacency = adjacency(a);
  trace.dedup = dedup_intra(trace.adjacency, trace.distance, params.f[0], params.f[1]);
  trace.similarity = similarity(a, trace.distance, params.f[2], params.f[3]);
  trace.scale = scaling(trace.similarity);
  trace.count_matrix = assemble_C(trace.dedup, trace.scale, a, params.f[0]);
  trace.count = count_from_C(trace.count_matrix);
  trace.output = to_khot(trace.count, n);
  const ConfidenceEstimate est = confidence(a, trace.distance, params);
  trace.p_attention = est.p_attention;
  trace.p_distance = est.p_distance;
  trace.gate = est.gate;
  trace.gated_output = trace.gate * trace.output;
  return trace;
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Exact reverse-mode gradients of the gated output w.r.t. all eight Plf
/// raw-weight vectors and the attention input.
///
/// d_gated_output is the upstream gradient dL/d(gated output), length n+1.
/// The trace must come from forward() on the same (params, scene).
/// Subgradient conventions: sign(0) = 0 for every |.|, interior Plf knots
/// take the left slope, clamps pass gradient through on the closed
/// interval, and d sqrt(sigma) is guarded to 0 below sqrt(sigma) = 1e-8.
inline CountGrads backward(const CountParams& params, const Scene& scene,
                           const ForwardTrace& trace,
                           const Eigen::VectorXd& d_gated_output) {
  const auto n = static_cast<Eigen::Index>(scene.boxes.size());
  if (trace.adjacency.rows() != n || trace.distance.rows() != n ||
      trace.similarity.rows() != n || trace.scale.size() != n ||
      trace.count_matrix.rows() != n || trace.output.size() != n + 1 ||
      d_gated_output.size() != n + 1) {
    throw std::invalid_argument("backward: trace shape does not match scene");
  }

  const Eigen::VectorXd& a = scene.attention;
  const Plf& f1 = params.f[0];
  const Plf& f2 = params.f[1];
  const Plf& f3 = params.f[2];
  const Plf& f4 = params.f[3];
  const Plf& f6 = params.f[5];
  const Plf& f7 = params.f[6];
  const Plf& f8 = params.f[7];

  CountGrads grads;
  for (int k = 0; k < 8; ++k) {
    grads.plf_weights[static_cast<std::size_t>(k)].assign(
        params.f[static_cast<std::size_t>(k)].raw_weights().size(), 0.0);
  }
  grads.attention = Eigen::VectorXd::Zero(n);

  // gated_output = gate * output
  const double d_gate = d_gated_output.dot(trace.output);
  const Eigen::VectorXd d_output = trace.gate * d_gated_output;

  // gate = f8(clamp(p_attention + p_distance, 0, 1))
  const double u_raw = trace.p_attention + trace.p_distance;
  const double u = std::clamp(u_raw, 0.0, 1.0);
  f8.add_weight_grad(u, d_gate, grads.plf_weights[7]);
  const bool clamp_active = u_raw < 0.0 || u_raw > 1.0;
  const double d_p = clamp_active ? 0.0 : d_gate * f8.slope_at(u);

  // p_attention = mean_i |f6(a_i) - theta|
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sgn = detail::sign(f6.eval(a[i]) - params.theta);
    if (sgn == 0.0) continue;
    const double coeff = d_p * sgn / static_cast<double>(n);
    f6.add_weight_grad(a[i], coeff, grads.plf_weights[5]);
    grads.attention[i] += coeff * f6.slope_at(a[i]);
  }

  // p_distance = mean_ij |f7(D_ij) - theta|; D is constant
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double sgn = detail::sign(f7.eval(trace.distance(i, j)) - params.theta);
      if (sgn == 0.0) continue;
      f7.add_weight_grad(trace.distance(i, j),
                         d_p * sgn / static_cast<double>(n * n),
                         grads.plf_weights[6]);
    }
  }

  // output_k = max(0, 1 - |clamp(count, 0, n) - k|)
  const double c_bar = std::clamp(trace.count, 0.0, static_cast<double>(n));
  double d_cbar = 0.0;
  for (Eigen::Index k = 0; k <= n; ++k) {
    if (1.0 - std::abs(c_bar - static_cast<double>(k)) > 0.0) {
      d_cbar -= d_output[k] * detail::sign(c_bar - static_cast<double>(k));
    }
  }
  const double d_count =
      (trace.count >= 0.0 && trace.count <= static_cast<double>(n)) ? d_cbar : 0.0;

  // count = sqrt(sigma), guarded below sqrt(sigma) = 1e-8
  const double d_sigma = trace.count >= 1e-8 ? d_count / (2.0 * trace.count) : 0.0;

  // sigma = sum_ij dedup_ij s_i s_j + sum_i s_i f1(a_i^2)
  const Eigen::VectorXd& s = trace.scale;
  Eigen::VectorXd d_s = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd d_dedup(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      d_dedup(i, j) = d_sigma * s[i] * s[j];
    }
  }
  for (Eigen::Index p = 0; p < n; ++p) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) acc += trace.dedup(p, j) * s[j];
    for (Eigen::Index i = 0; i < n; ++i) acc += trace.dedup(i, p) * s[i];
    const double ap2 = a[p] * a[p];
    d_s[p] = d_sigma * (acc + f1.eval(ap2));

    // diagonal self-loop term s_p * f1(a_p^2)
    const double d_diag = d_sigma * s[p];
    f1.add_weight_grad(ap2, d_diag, grads.plf_weights[0]);
    grads.attention[p] += d_diag * f1.slope_at(ap2) * 2.0 * a[p];
  }

  // dedup_ij = f1(A_ij) * f2(D_ij)
  Eigen::MatrixXd d_adjacency(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double aij = trace.adjacency(i, j);
      const double dij = trace.distance(i, j);
      const double v1 = f1.eval(aij);
      const double v2 = f2.eval(dij);
      f1.add_weight_grad(aij, d_dedup(i, j) * v2, grads.plf_weights[0]);
      f2.add_weight_grad(dij, d_dedup(i, j) * v1, grads.plf_weights[1]);
      d_adjacency(i, j) = d_dedup(i, j) * f1.slope_at(aij) * v2;
    }
  }

  // s_i = 1 / row_sum_i(sim); sim_ij = f3(1-|a_i-a_j|) * f4(1-D_ij)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d_row = -d_s[i] * s[i] * s[i];
    for (Eigen::Index j = 0; j < n; ++j) {
      const double m = 1.0 - std::abs(a[i] - a[j]);
      const double e = 1.0 - trace.distance(i, j);
      const double v3 = f3.eval(m);
      const double v4 = f4.eval(e);
      f3.add_weight_grad(m, d_row * v4, grads.plf_weights[2]);
      f4.add_weight_grad(e, d_row * v3, grads.plf_weights[3]);
      const double d_m = d_row * f3.slope_at(m) * v4;
      const double sgn = detail::sign(a[i] - a[j]);
      grads.attention[i] -= d_m * sgn;
      grads.attention[j] += d_m * sgn;
    }
  }

  // A_ij = a_i a_j
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      grads.attention[i] += d_adjacency(i, j) * a[j];
      grads.attention[j] += d_adjacency(i, j) * a[i];
    }
  }

  return grads;
}

}  // namespace countgraph
