#pragma once

#include <stdexcept>

#include <Eigen/Core>

namespace countgraph {

/// Projections for the gated feature-fusion operation.
struct FusionParams {
  Eigen::MatrixXd w_x;
  Eigen::MatrixXd w_y;
};

inline void check_fusion_shapes(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                const FusionParams& p) {
  if (p.w_x.cols() != x.size() || p.w_y.cols() != y.size() ||
      p.w_x.rows() != p.w_y.rows()) {
    throw std::invalid_argument("gated_fusion: incompatible dimensions");
  }
}

/// x <> y = ReLU(W_x x + W_y y) - (W_x x - W_y y)^2, elementwise.
inline Eigen::VectorXd gated_fusion(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                    const FusionParams& p) {
  check_fusion_shapes(x, y, p);
  const Eigen::VectorXd px = p.w_x * x;
  const Eigen::VectorXd py = p.w_y * y;
  return (px + py).cwiseMax(0.0) - (px - py).cwiseAbs2();
}

struct FusionGrads {
  Eigen::MatrixXd w_x;
  Eigen::MatrixXd w_y;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// Reverse-mode gradients of the fusion output. ReLU subgradient at 0 is 0.
inline FusionGrads gated_fusion_backward(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                         const FusionParams& p,
                                         const Eigen::VectorXd& d_out) {
  check_fusion_shapes(x, y, p);
  if (d_out.size() != p.w_x.rows()) {
    throw std::invalid_argument("gated_fusion_backward: bad upstream gradient size");
  }
  const Eigen::VectorXd px = p.w_x * x;
  const Eigen::VectorXd py = p.w_y * y;
  const Eigen::VectorXd sum = px + py;
  const Eigen::VectorXd diff = px - py;

  const Eigen::VectorXd d_sum =
      d_out.cwiseProduct((sum.array() > 0.0).cast<double>().matrix());
  const Eigen::VectorXd d_diff = -2.0 * d_out.cwiseProduct(diff);

  FusionGrads g;
  g.w_x = (d_sum + d_diff) * x.transpose();
  g.w_y = (d_sum - d_diff) * y.transpose();
  g.x = p.w_x.transpose() * (d_sum + d_diff);
  g.y = p.w_y.transpose() * (d_sum - d_diff);
  return g;
}

}  // namespace countgraph
