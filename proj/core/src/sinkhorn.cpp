#include "medcl/sinkhorn.hpp"

#include "medcl/error.hpp"
#include "medcl/rng.hpp"

namespace medcl {

PrototypeMatrix PrototypeMatrix::init(int num_rows, int d, uint64_t seed) {
  require(num_rows >= 1, ErrorCode::InvalidArgument, "prototype matrix needs rows");
  require(d >= 2, ErrorCode::InvalidArgument, "prototype count d must be at least 2");
  PrototypeMatrix p;
  p.a.resize(num_rows, d);
  Rng rng(seed);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < num_rows; ++i) p.a(i, j) = rng.normal();
  p.renormalize_columns();
  return p;
}

void PrototypeMatrix::renormalize_columns() {
  for (int j = 0; j < a.cols(); ++j) {
    double norm = a.col(j).norm();
    require(norm > 0.0, ErrorCode::NumericalError, "prototype column collapsed to zero");
    a.col(j) /= norm;
  }
}

Eigen::MatrixXd compute_scores(const PrototypeMatrix& prototypes,
                               const Eigen::MatrixXd& y_flat) {
  require(prototypes.a.rows() == y_flat.rows(), ErrorCode::InvalidArgument,
          "prototype rows must match prediction channels");
  return prototypes.a.transpose() * y_flat;
}

Eigen::MatrixXd sinkhorn(const Eigen::MatrixXd& scores, double eps, int niters) {
  require(eps > 0.0, ErrorCode::InvalidArgument, "sinkhorn eps must be positive");
  require(niters >= 0, ErrorCode::InvalidArgument, "sinkhorn niters must be non-negative");
  require(scores.allFinite(), ErrorCode::InvalidArgument, "sinkhorn needs finite scores");

  const Eigen::Index d = scores.rows();
  const Eigen::Index n = scores.cols();
  require(d > 0 && n > 0, ErrorCode::InvalidArgument, "sinkhorn needs a non-empty score matrix");

  // Uniform shift before exp: exp((s-max)/eps) = exp(-max/eps)*exp(s/eps)
  // and the very first global normalization cancels the common factor, so
  // this is exact stabilization, not an approximation.
  const double shift = scores.maxCoeff();
  Eigen::MatrixXd P = ((scores.array() - shift) / eps).exp();
  const double total = P.sum();
  require(std::isfinite(total) && total > 0.0, ErrorCode::NumericalError,
          "sinkhorn diverged: transport plan vanished or overflowed");
  P /= total;

  const double r = 1.0 / static_cast<double>(d);  // per-prototype row marginal
  const double c = 1.0 / static_cast<double>(n);  // per-pixel column marginal
  for (int it = 0; it < niters; ++it) {
    Eigen::VectorXd u = P.rowwise().sum();
    require((u.array() > 0.0).all(), ErrorCode::NumericalError,
            "sinkhorn diverged: empty prototype row");
    P.array().colwise() *= (r / u.array());
    Eigen::RowVectorXd v = P.colwise().sum();
    require((v.array() > 0.0).all(), ErrorCode::NumericalError,
            "sinkhorn diverged: empty pixel column");
    P.array().rowwise() *= (c / v.array());
  }

  Eigen::RowVectorXd colsum = P.colwise().sum();
  require((colsum.array() > 0.0).all() && P.allFinite(), ErrorCode::NumericalError,
          "sinkhorn diverged: empty pixel column");
  P.array().rowwise() /= colsum.array();
  return P.transpose();  // n x d, rows sum to 1
}

double mapping_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& Q, double w) {
  Eigen::MatrixXd unused;
  return mapping_loss_grad(scores, Q, w, unused);
}

double mapping_loss_grad(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& Q, double w,
                         Eigen::MatrixXd& grad_scores) {
  require(w > 0.0, ErrorCode::InvalidArgument, "mapping loss temperature w must be positive");
  require(scores.rows() == Q.cols() && scores.cols() == Q.rows(), ErrorCode::InvalidArgument,
          "scores (d x n) and Q (n x d) dimensions must agree");

  const Eigen::Index d = scores.rows();
  const Eigen::Index n = scores.cols();

  // Stable per-pixel log-softmax of scores/w.
  Eigen::MatrixXd z = scores / w;
  Eigen::RowVectorXd zmax = z.colwise().maxCoeff();
  Eigen::MatrixXd shifted = z.rowwise() - zmax;
  Eigen::RowVectorXd lse = shifted.array().exp().colwise().sum().log();
  Eigen::MatrixXd log_p = shifted.rowwise() - lse;

  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < d; ++i) loss -= Q(j, i) * log_p(i, j);
  loss /= static_cast<double>(n);

  // d(loss)/d(scores) = (softmax * rowmass - Q^T) / (n * w); Q rows sum to 1
  // so rowmass is 1, but keep the general form in case they do not.
  Eigen::MatrixXd p = log_p.array().exp();
  Eigen::RowVectorXd qmass = Q.rowwise().sum().transpose();
  grad_scores = (p.array().rowwise() * qmass.array()).matrix() - Q.transpose();
  grad_scores /= static_cast<double>(n) * w;
  return loss;
}

Eigen::MatrixXd aggregate_prototype_vectors(const Eigen::MatrixXd& y_flat,
                                            const Eigen::MatrixXd& Q) {
  require(y_flat.cols() == Q.rows(), ErrorCode::InvalidArgument,
          "y_flat pixel count must match Q rows");
  return y_flat * Q;
}

}  // namespace medcl
