#include "medcl/losses.hpp"

#include <cmath>

namespace medcl {

namespace {

constexpr double kNormGuard = 1e-12;
constexpr double kProbFloor = 1e-12;

// cos(u,v) plus its two partials; returns 0 with zero partials when either
// norm underflows.
double cos_with_grad(const Eigen::VectorXd& u, const Eigen::VectorXd& v, Eigen::VectorXd* gu,
                     Eigen::VectorXd* gv) {
  double nu = u.norm();
  double nv = v.norm();
  if (nu < kNormGuard || nv < kNormGuard) {
    if (gu) gu->setZero(u.size());
    if (gv) gv->setZero(v.size());
    return 0.0;
  }
  double c = u.dot(v) / (nu * nv);
  if (gu) *gu = v / (nu * nv) - c * u / (nu * nu);
  if (gv) *gv = u / (nu * nv) - c * v / (nv * nv);
  return c;
}

}  // namespace

double neg_cos(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2) {
  return -cos_with_grad(z1, z2, nullptr, nullptr);
}

double neg_cos_grad(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2, Eigen::VectorXd& g1,
                    Eigen::VectorXd& g2) {
  double c = cos_with_grad(z1, z2, &g1, &g2);
  g1 = -g1;
  g2 = -g2;
  return -c;
}

double mix_consistency_loss(const Eigen::MatrixXd& y12, const Eigen::MatrixXd& target,
                            bool per_channel) {
  Eigen::MatrixXd unused;
  return mix_consistency_loss_grad(y12, target, unused, per_channel, nullptr);
}

double mix_consistency_loss_grad(const Eigen::MatrixXd& y12, const Eigen::MatrixXd& target,
                                 Eigen::MatrixXd& grad, bool per_channel,
                                 Eigen::MatrixXd* grad_target) {
  require(y12.rows() == target.rows() && y12.cols() == target.cols(),
          ErrorCode::InvalidArgument, "prediction and mix target shapes must match");

  grad.setZero(y12.rows(), y12.cols());
  if (grad_target) grad_target->setZero(y12.rows(), y12.cols());

  if (!per_channel) {
    Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(y12.data(), y12.size());
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(target.data(), target.size());
    Eigen::VectorXd ga, gb;
    double loss = neg_cos_grad(a, b, ga, gb);
    grad = Eigen::Map<Eigen::MatrixXd>(ga.data(), y12.rows(), y12.cols());
    if (grad_target) {
      *grad_target = Eigen::Map<Eigen::MatrixXd>(gb.data(), y12.rows(), y12.cols());
    }
    return loss;
  }

  double loss = 0.0;
  for (Eigen::Index c = 0; c < y12.rows(); ++c) {
    Eigen::VectorXd ga, gb;
    loss += neg_cos_grad(y12.row(c).transpose(), target.row(c).transpose(), ga, gb);
    grad.row(c) = ga.transpose() / y12.rows();
    if (grad_target) grad_target->row(c) = gb.transpose() / y12.rows();
  }
  return loss / y12.rows();
}

double cluster_loss(const std::vector<Eigen::MatrixXd>& prototype_batches, double tau) {
  std::vector<Eigen::MatrixXd> unused;
  return cluster_loss_grad(prototype_batches, tau, unused);
}

double cluster_loss_grad(const std::vector<Eigen::MatrixXd>& prototype_batches, double tau,
                         std::vector<Eigen::MatrixXd>& grads) {
  require(tau > 0.0, ErrorCode::InvalidArgument, "cluster temperature tau must be positive");
  require(!prototype_batches.empty(), ErrorCode::InvalidArgument,
          "cluster loss needs at least one batch element");
  const int B = static_cast<int>(prototype_batches.size());
  const int m = static_cast<int>(prototype_batches[0].rows());
  const int d = static_cast<int>(prototype_batches[0].cols());
  require(m >= 1 && d >= 1, ErrorCode::InvalidArgument, "prototype matrices must be non-empty");
  for (const auto& pb : prototype_batches) {
    require(pb.rows() == m && pb.cols() == d, ErrorCode::InvalidArgument,
            "all prototype batch elements must share one shape");
  }

  // Direction-normalize every member vector; zero vectors stay zero.
  std::vector<Eigen::MatrixXd> unit(B, Eigen::MatrixXd::Zero(m, d));
  std::vector<std::vector<double>> norms(B, std::vector<double>(m, 0.0));
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < m; ++i) {
      double nv = prototype_batches[b].row(i).norm();
      norms[b][i] = nv;
      if (nv >= kNormGuard) unit[b].row(i) = prototype_batches[b].row(i) / nv;
    }

  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(m, d);
  for (int b = 0; b < B; ++b) centers += unit[b];
  centers /= static_cast<double>(B);

  // Forward pass: compactness C over members-vs-center, discriminability D
  // over ordered center pairs.
  Eigen::MatrixXd cosC(B, m);
  double C = 0.0;
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < m; ++i) {
      cosC(b, i) = cos_with_grad(unit[b].row(i).transpose(), centers.row(i).transpose(),
                                 nullptr, nullptr);
      C += std::exp(cosC(b, i) / tau);
    }

  Eigen::MatrixXd cosD = Eigen::MatrixXd::Zero(m, m);
  double D = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      cosD(i, j) =
          cos_with_grad(centers.row(i).transpose(), centers.row(j).transpose(), nullptr, nullptr);
      D += std::exp(cosD(i, j) / tau);
    }

  double loss = std::log(C + D) - std::log(C);

  // Backward pass. dL/dC = 1/(C+D) - 1/C, dL/dD = 1/(C+D); each exp term
  // contributes its weight/tau times the cosine partials, member terms both
  // directly and through their center (dc_i/du_ib = I/B), then everything
  // maps back through the normalization Jacobian.
  const double dC = 1.0 / (C + D) - 1.0 / C;
  const double dD = 1.0 / (C + D);

  Eigen::MatrixXd grad_centers = Eigen::MatrixXd::Zero(m, d);
  std::vector<Eigen::MatrixXd> grad_unit(B, Eigen::MatrixXd::Zero(m, d));

  for (int b = 0; b < B; ++b)
    for (int i = 0; i < m; ++i) {
      Eigen::VectorXd gu, gc;
      cos_with_grad(unit[b].row(i).transpose(), centers.row(i).transpose(), &gu, &gc);
      double wgt = dC * std::exp(cosC(b, i) / tau) / tau;
      grad_unit[b].row(i) += wgt * gu.transpose();
      grad_centers.row(i) += wgt * gc.transpose();
    }

  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      Eigen::VectorXd gi, gj;
      cos_with_grad(centers.row(i).transpose(), centers.row(j).transpose(), &gi, &gj);
      double wgt = dD * std::exp(cosD(i, j) / tau) / tau;
      grad_centers.row(i) += wgt * gi.transpose();
      grad_centers.row(j) += wgt * gj.transpose();
    }

  grads.assign(B, Eigen::MatrixXd::Zero(m, d));
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < m; ++i) {
      Eigen::VectorXd g = grad_unit[b].row(i).transpose() + grad_centers.row(i).transpose() / B;
      double nv = norms[b][i];
      if (nv < kNormGuard) continue;  // guard region: gradient stays zero
      Eigen::VectorXd u = unit[b].row(i).transpose();
      grads[b].row(i) = ((g - u * u.dot(g)) / nv).transpose();
    }

  return loss;
}

double anatomy_consistency_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& a_hat,
                                const SubsetSchedule& schedule) {
  Eigen::MatrixXd gy, ga;
  return anatomy_consistency_loss_grad(y, a_hat, schedule, gy, ga);
}

double anatomy_consistency_loss_grad(const Eigen::MatrixXd& y, const Eigen::MatrixXd& a_hat,
                                     const SubsetSchedule& schedule, Eigen::MatrixXd& grad_y,
                                     Eigen::MatrixXd& grad_a) {
  const int m = schedule.m();
  require(y.rows() == 2 * m - 1, ErrorCode::InvalidArgument,
          "prediction must have 2m-1 channel rows");
  require(a_hat.rows() == 2 * m - 1, ErrorCode::InvalidArgument,
          "aggregated prototypes must have 2m-1 rows");

  grad_y.setZero(y.rows(), y.cols());
  grad_a.setZero(a_hat.rows(), a_hat.cols());

  double loss = 0.0;
  for (int k = 2; k <= m; ++k) {
    const int combined = m + k - 2;  // 0-based row of the Omega_k channel
    const auto omega = schedule.omega(k);

    Eigen::VectorXd sum_y = Eigen::VectorXd::Zero(y.cols());
    Eigen::VectorXd sum_a = Eigen::VectorXd::Zero(a_hat.cols());
    for (int cls : omega) {
      sum_y += y.row(cls - 1).transpose();
      sum_a += a_hat.row(cls - 1).transpose();
    }

    Eigen::VectorXd g_comb, g_sum;
    loss += neg_cos_grad(y.row(combined).transpose(), sum_y, g_comb, g_sum);
    grad_y.row(combined) += g_comb.transpose();
    for (int cls : omega) grad_y.row(cls - 1) += g_sum.transpose();

    loss += neg_cos_grad(a_hat.row(combined).transpose(), sum_a, g_comb, g_sum);
    grad_a.row(combined) += g_comb.transpose();
    for (int cls : omega) grad_a.row(cls - 1) += g_sum.transpose();
  }
  return loss;
}

ScribbleLossResult scribble_loss(const Tensor3& class_probs, const LabelMap& scribbles) {
  Tensor3 unused;
  return scribble_loss_grad(class_probs, scribbles, unused);
}

ScribbleLossResult scribble_loss_grad(const Tensor3& class_probs, const LabelMap& scribbles,
                                      Tensor3& grad) {
  require(class_probs.height() == scribbles.height() && class_probs.width() == scribbles.width(),
          ErrorCode::InvalidArgument, "probability map and scribbles must share a shape");
  const int num_classes = class_probs.channels();  // m + 1 including background

  grad.reset(class_probs.channels(), class_probs.height(), class_probs.width());

  // First pass: count annotated pixels so the average is known up front.
  int annotated = 0;
  for (uint8_t v : scribbles) {
    if (v == kUnlabeled) continue;
    require(v < num_classes, ErrorCode::LabelOutOfRange,
            "scribble id " + std::to_string(v) + " has no probability channel");
    ++annotated;
  }

  ScribbleLossResult result;
  if (annotated == 0) return result;  // value 0, has_supervision false
  result.has_supervision = true;

  double sum = 0.0;
  for (int r = 0; r < scribbles.height(); ++r)
    for (int c = 0; c < scribbles.width(); ++c) {
      uint8_t v = scribbles(r, c);
      if (v == kUnlabeled) continue;
      double p = class_probs(v, r, c);
      double p_floored = std::max(p, kProbFloor);
      // One-hot target collapses the sum over classes to the true class:
      // cross-entropy -log p plus negated soft-dice -2p/(1+p).
      sum += -(std::log(p_floored) + 2.0 * p / (1.0 + p));
      double g = -2.0 / ((1.0 + p) * (1.0 + p));
      if (p > kProbFloor) g += -1.0 / p;
      grad(v, r, c) = g / annotated;
    }

  result.value = sum / annotated;
  return result;
}

double category_loss(const Tensor3& class_probs, const std::set<int>& present) {
  Tensor3 unused;
  return category_loss_grad(class_probs, present, unused);
}

double category_loss_grad(const Tensor3& class_probs, const std::set<int>& present,
                          Tensor3& grad) {
  const int channels = class_probs.channels();
  for (int cls : present) {
    require(cls >= 1 && cls < channels, ErrorCode::InvalidArgument,
            "present class " + std::to_string(cls) + " has no probability channel");
  }

  grad.reset(channels, class_probs.height(), class_probs.width());
  const int64_t n = static_cast<int64_t>(class_probs.plane_size());

  double sum = 0.0;
  for (int r = 0; r < class_probs.height(); ++r)
    for (int c = 0; c < class_probs.width(); ++c) {
      double mass = class_probs(0, r, c);  // background always counts
      for (int cls : present) mass += class_probs(cls, r, c);
      double floored = std::max(mass, kProbFloor);
      sum += -std::log(floored);
      if (mass > kProbFloor) {
        double g = -1.0 / (mass * n);
        grad(0, r, c) = g;
        for (int cls : present) grad(cls, r, c) = g;
      }
    }
  return sum / n;
}

LossBreakdown total_loss(const LossTerms& terms, const LossWeights& weights) {
  auto check = [](double v, const char* name) {
    require(std::isfinite(v), ErrorCode::NumericalError,
            std::string("loss diverged: ") + name + " is not finite");
  };
  check(terms.mix, "l_mix");
  check(terms.cluster, "l_cluster");
  check(terms.ac, "l_ac");
  check(terms.map, "l_map");
  check(terms.scribble, "l_scribble");
  check(terms.category, "l_category");

  LossBreakdown out;
  out.terms = terms;
  out.weights = weights;
  out.total = weights.mix * terms.mix + weights.cluster * terms.cluster + weights.ac * terms.ac +
              weights.map * terms.map + weights.scribble * terms.scribble +
              weights.category * terms.category;
  return out;
}

}  // namespace medcl
