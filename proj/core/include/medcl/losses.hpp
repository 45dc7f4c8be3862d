#pragma once

#include <Eigen/Dense>
#include <set>
#include <vector>

#include "medcl/grid.hpp"
#include "medcl/mixing.hpp"

namespace medcl {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A (C x H x W) tensor viewed as a C x (H*W) matrix, one channel per row.
inline Eigen::Map<const RowMajorMatrix> channels_as_rows(const Tensor3& t) {
  return {t.data(), t.channels(), static_cast<Eigen::Index>(t.plane_size())};
}
inline Eigen::Map<RowMajorMatrix> channels_as_rows(Tensor3& t) {
  return {t.data(), t.channels(), static_cast<Eigen::Index>(t.plane_size())};
}

// -(z1.z2)/(|z1||z2|). Either norm under 1e-12 short-circuits to 0 so the
// all-zero prediction stays differentiable (with zero gradient).
double neg_cos(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2);
double neg_cos_grad(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2, Eigen::VectorXd& g1,
                    Eigen::VectorXd& g2);

// Negative cosine between a prediction stack and its (constant) mix target,
// both flattened to single vectors; `per_channel` switches to the mean of
// per-channel cosines instead.
double mix_consistency_loss(const Eigen::MatrixXd& y12, const Eigen::MatrixXd& target,
                            bool per_channel = false);
// grad_target is only filled when non-null (the undetached training variant).
double mix_consistency_loss_grad(const Eigen::MatrixXd& y12, const Eigen::MatrixXd& target,
                                 Eigen::MatrixXd& grad, bool per_channel = false,
                                 Eigen::MatrixXd* grad_target = nullptr);

// Prototype clustering: one m x d matrix per batch element b, row i holding
// the aggregated vector for class i+1. Vectors are direction-normalized
// before the class centers are formed, so the loss is invariant to positive
// rescaling of any individual vector. Compactness pulls members toward their
// center, discriminability pushes centers apart:
//   loss = -log(C / (C + D)),  C = sum exp(cos(a_i^b, a*_i)/tau),
//   D = sum_{i != j} exp(cos(a*_i, a*_j)/tau).
double cluster_loss(const std::vector<Eigen::MatrixXd>& prototype_batches, double tau = 0.1);
double cluster_loss_grad(const std::vector<Eigen::MatrixXd>& prototype_batches, double tau,
                         std::vector<Eigen::MatrixXd>& grads);

// Multi-scale consistency: each combined channel (row m+k-2, 0-based, for
// k = 2..m) should align with the sum of its subset's single-class rows, in
// both segmentation space (y, channels x pixels) and prototype space (a_hat,
// channels x d). Perfect alignment gives -2(m-1).
double anatomy_consistency_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& a_hat,
                                const SubsetSchedule& schedule);
double anatomy_consistency_loss_grad(const Eigen::MatrixXd& y, const Eigen::MatrixXd& a_hat,
                                     const SubsetSchedule& schedule, Eigen::MatrixXd& grad_y,
                                     Eigen::MatrixXd& grad_a);

struct ScribbleLossResult {
  double value = 0.0;
  bool has_supervision = false;
};

// Cross-entropy plus soft-dice on annotated pixels only. class_probs is the
// (m+1) x h x w softmax output, channel 0 background; scribbles carry class
// ids with kUnlabeled elsewhere. Averaged over annotated pixels.
ScribbleLossResult scribble_loss(const Tensor3& class_probs, const LabelMap& scribbles);
ScribbleLossResult scribble_loss_grad(const Tensor3& class_probs, const LabelMap& scribbles,
                                      Tensor3& grad);

// Mean over pixels of -log(background mass + mass on classes in `present`).
// Zero exactly when no probability sits on absent classes.
double category_loss(const Tensor3& class_probs, const std::set<int>& present);
double category_loss_grad(const Tensor3& class_probs, const std::set<int>& present,
                          Tensor3& grad);

struct LossWeights {
  double mix = 1.0;
  double cluster = 1.0;
  double ac = 1.0;
  double map = 1.0;
  double scribble = 1.0;
  double category = 1.0;
};

struct LossTerms {
  double mix = 0.0;
  double cluster = 0.0;
  double ac = 0.0;
  double map = 0.0;
  double scribble = 0.0;
  double category = 0.0;
};

struct LossBreakdown {
  LossTerms terms;
  LossWeights weights;
  double total = 0.0;
};

// Weighted sum; throws a "loss diverged" error naming the first non-finite
// term.
LossBreakdown total_loss(const LossTerms& terms, const LossWeights& weights);

}  // namespace medcl
