#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace medcl {

// Learnable anatomical prototypes, one d-vector per prediction channel
// position; shaped (2m-1) x d so scores = a^T * y_flat.
struct PrototypeMatrix {
  Eigen::MatrixXd a;

  int rows() const { return static_cast<int>(a.rows()); }
  int dim() const { return static_cast<int>(a.cols()); }

  // Unit-variance Gaussian entries followed by column normalization.
  static PrototypeMatrix init(int num_rows, int d, uint64_t seed);

  // Restore unit Euclidean norm on every column; call after each optimizer
  // step that touched `a`.
  void renormalize_columns();
};

// scores = a^T y_flat, shaped d x n. y_flat is (2m-1) x n, one pixel per
// column.
Eigen::MatrixXd compute_scores(const PrototypeMatrix& prototypes,
                               const Eigen::MatrixXd& y_flat);

// Entropic balanced assignment. Returns Q, n x d, each pixel row a
// distribution over prototypes. The prototype marginal is uniform 1/d, the
// pixel marginal uniform 1/n; niters alternating scaling rounds, then a final
// per-pixel normalization. Scores are max-shifted before exponentiation,
// which leaves the result unchanged.
Eigen::MatrixXd sinkhorn(const Eigen::MatrixXd& scores, double eps = 0.05, int niters = 3);

// Swapped-assignment loss: p = softmax(scores/w) per pixel, loss =
// -mean over pixels of sum_proto Q * log p. Q is treated as a constant.
double mapping_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& Q, double w = 0.05);

// Same value, plus d(loss)/d(scores) for backpropagation.
double mapping_loss_grad(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& Q, double w,
                         Eigen::MatrixXd& grad_scores);

// Per-channel soft prototype vectors: row c of the result is
// sum_p y_flat(c,p) * Q(p,:). Linear in y_flat, i.e. the plain product
// y_flat * Q.
Eigen::MatrixXd aggregate_prototype_vectors(const Eigen::MatrixXd& y_flat,
                                            const Eigen::MatrixXd& Q);

}  // namespace medcl
