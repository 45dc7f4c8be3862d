#include "medcl/selfcheck.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <utility>

#include "medcl/error.hpp"
#include "medcl/losses.hpp"
#include "medcl/metrics.hpp"
#include "medcl/mixing.hpp"
#include "medcl/rng.hpp"
#include "medcl/segnet.hpp"
#include "medcl/sinkhorn.hpp"

namespace medcl {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Shared failure format: worst relative error against its tolerance.
std::string rel_detail(double worst, double tol) {
  std::ostringstream out;
  out << "worst relative error " << worst << " (tolerance " << tol << ")";
  return out.str();
}

bool fd_match(double analytic, double fd, double tol, double& worst) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-6});
  const double rel = std::abs(analytic - fd) / denom;
  worst = std::max(worst, rel);
  return rel <= tol;
}

MatrixXd random_scores(Rng& rng, int d, int n) {
  MatrixXd scores(d, n);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < n; ++c) scores(r, c) = rng.uniform(-1.0, 1.0);
  }
  return scores;
}

CheckResult check_sinkhorn_rows(bool corrupt) {
  CheckResult result{"sinkhorn row-stochasticity", false, ""};
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + static_cast<int>(rng.uniform_int(7));
    const int n = 2 + static_cast<int>(rng.uniform_int(7));
    MatrixXd q = sinkhorn(random_scores(rng, d, n), 0.05, 3);
    if (corrupt) q(0, 0) += 0.01;  // simulated broken final normalization
    for (int i = 0; i < q.rows(); ++i) {
      worst = std::max(worst, std::abs(q.row(i).sum() - 1.0));
    }
  }
  result.passed = worst <= 1e-6;
  result.detail = "max row-sum deviation " + std::to_string(worst);
  return result;
}

CheckResult check_sinkhorn_marginals() {
  CheckResult result{"sinkhorn uniform marginals", false, ""};
  Rng rng(102);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 2 + static_cast<int>(rng.uniform_int(5));
    const int n = d + static_cast<int>(rng.uniform_int(8));
    const MatrixXd q = sinkhorn(random_scores(rng, d, n), 0.05, 1000);
    for (int j = 0; j < d; ++j) {
      worst = std::max(worst, std::abs(q.col(j).sum() / n - 1.0 / d));
    }
  }
  result.passed = worst <= 1e-3;
  result.detail = "max marginal deviation " + std::to_string(worst);
  return result;
}

CheckResult check_sinkhorn_permutation() {
  CheckResult result{"sinkhorn permutation case", false, ""};
  MatrixXd scores(2, 2);
  scores << 8.0, 0.0, 0.0, 8.0;
  const MatrixXd q = sinkhorn(scores, 0.05, 1000);

  // Independent reference: textbook alternating scaling, 1e4 rounds.
  MatrixXd p = ((scores.array() - scores.maxCoeff()) / 0.05).exp();
  p /= p.sum();
  for (int it = 0; it < 10000; ++it) {
    for (int r = 0; r < p.rows(); ++r) p.row(r) *= 1.0 / (p.rows() * p.row(r).sum());
    for (int c = 0; c < p.cols(); ++c) p.col(c) *= 1.0 / (p.cols() * p.col(c).sum());
  }
  MatrixXd ref = p.transpose();
  for (int i = 0; i < ref.rows(); ++i) ref.row(i) /= ref.row(i).sum();

  const double diff = (q - ref).cwiseAbs().maxCoeff();
  result.passed = diff <= 1e-6 && q(0, 0) > 0.99 && q(1, 1) > 0.99;
  result.detail = "max deviation from reference " + std::to_string(diff);
  return result;
}

CheckResult check_mapping_gradient() {
  CheckResult result{"mapping-loss gradient", false, ""};
  Rng rng(103);
  const MatrixXd scores = random_scores(rng, 3, 6);
  const MatrixXd q = sinkhorn(scores, 0.05, 3);
  MatrixXd grad;
  mapping_loss_grad(scores, q, 0.05, grad);
  const double h = 1e-6;
  double worst = 0.0;
  bool ok = true;
  for (int i = 0; i < 6; ++i) {
    MatrixXd plus = scores, minus = scores;
    const int r = i % 3, c = i;
    plus(r, c) += h;
    minus(r, c) -= h;
    const double fd = (mapping_loss(plus, q, 0.05) - mapping_loss(minus, q, 0.05)) / (2 * h);
    ok = fd_match(grad(r, c), fd, 1e-5, worst) && ok;
  }
  result.passed = ok;
  result.detail = rel_detail(worst, 1e-5);
  return result;
}

CheckResult check_loss_gradients() {
  CheckResult result{"clustering and mix loss gradients", false, ""};
  Rng rng(104);
  const double h = 1e-6;
  double worst = 0.0;
  bool ok = true;

  {  // mix consistency
    MatrixXd y(3, 8), t(3, 8);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 8; ++c) {
        y(r, c) = rng.uniform(0.05, 1.0);
        t(r, c) = rng.uniform(0.05, 1.0);
      }
    }
    MatrixXd grad;
    mix_consistency_loss_grad(y, t, grad);
    for (int i = 0; i < 5; ++i) {
      MatrixXd plus = y, minus = y;
      const int r = i % 3, c = i;
      plus(r, c) += h;
      minus(r, c) -= h;
      const double fd = (mix_consistency_loss(plus, t) - mix_consistency_loss(minus, t)) / (2 * h);
      ok = fd_match(grad(r, c), fd, 1e-5, worst) && ok;
    }
  }
  {  // cluster
    std::vector<MatrixXd> members = {MatrixXd::Random(3, 4), MatrixXd::Random(3, 4)};
    std::vector<MatrixXd> grads;
    cluster_loss_grad(members, 0.1, grads);
    for (int i = 0; i < 5; ++i) {
      auto plus = members, minus = members;
      const int r = i % 3, c = i % 4;
      plus[i % 2](r, c) += h;
      minus[i % 2](r, c) -= h;
      const double fd = (cluster_loss(plus, 0.1) - cluster_loss(minus, 0.1)) / (2 * h);
      ok = fd_match(grads[i % 2](r, c), fd, 1e-5, worst) && ok;
    }
  }
  {  // anatomy consistency
    const SubsetSchedule schedule = sample_subsets(3, 7);
    MatrixXd y = MatrixXd::Random(5, 6).array() + 1.5;
    MatrixXd a = MatrixXd::Random(5, 4).array() + 1.5;
    MatrixXd gy, ga;
    anatomy_consistency_loss_grad(y, a, schedule, gy, ga);
    for (int i = 0; i < 5; ++i) {
      MatrixXd plus = y, minus = y;
      const int r = i % 5, c = i;
      plus(r, c) += h;
      minus(r, c) -= h;
      const double fd = (anatomy_consistency_loss(plus, a, schedule) -
                         anatomy_consistency_loss(minus, a, schedule)) /
                        (2 * h);
      ok = fd_match(gy(r, c), fd, 1e-5, worst) && ok;
    }
  }
  result.passed = ok;
  result.detail = rel_detail(worst, 1e-5);
  return result;
}

CheckResult check_supervised_gradients() {
  CheckResult result{"supervised loss gradients", false, ""};
  Rng rng(105);
  const int m = 2, size = 4;
  Tensor3 probs(m + 1, size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double total = 0.0;
      for (int ch = 0; ch <= m; ++ch) {
        probs(ch, r, c) = rng.uniform(0.05, 1.0);
        total += probs(ch, r, c);
      }
      for (int ch = 0; ch <= m; ++ch) probs(ch, r, c) /= total;
    }
  }
  LabelMap scribbles(size, size, kUnlabeled);
  scribbles(0, 0) = 0;
  scribbles(1, 2) = 1;
  scribbles(3, 3) = 2;
  const std::set<int> present = {1, 2};

  const double h = 1e-7;
  double worst = 0.0;
  bool ok = true;
  Tensor3 grad_s, grad_c;
  scribble_loss_grad(probs, scribbles, grad_s);
  category_loss_grad(probs, present, grad_c);
  for (int i = 0; i < 6; ++i) {
    const int ch = i % (m + 1), r = i % size, c = (i * 2 + 1) % size;
    Tensor3 plus = probs, minus = probs;
    plus(ch, r, c) += h;
    minus(ch, r, c) -= h;
    const double fd_s =
        (scribble_loss(plus, scribbles).value - scribble_loss(minus, scribbles).value) / (2 * h);
    const double fd_c = (category_loss(plus, present) - category_loss(minus, present)) / (2 * h);
    ok = fd_match(grad_s(ch, r, c), fd_s, 1e-5, worst) && ok;
    ok = fd_match(grad_c(ch, r, c), fd_c, 1e-5, worst) && ok;
  }
  result.passed = ok;
  result.detail = rel_detail(worst, 1e-5);
  return result;
}

CheckResult check_mix_identities() {
  CheckResult result{"mix identities", false, ""};
  Rng rng(106);
  bool ok = true;
  for (int trial = 0; trial < 10 && ok; ++trial) {
    ImageF x(12, 12);
    for (double& v : x) v = rng.uniform();
    const BoundingBoxMask box = sample_bbox(12, 12, 0.1, 0.3, rng.next_u64());
    const double theta = rng.uniform(-15.0, 15.0);

    // beta' = 1 keeps the image; so does a box covering the whole frame.
    const ImageF keep = intra_mix(x, box, 1.0, theta);
    ok = ok && std::memcmp(keep.data(), x.data(), sizeof(double) * x.size()) == 0;
    BoundingBoxMask full;
    full.mask.reset(12, 12, 1);
    full.row1 = full.col1 = 12;
    const ImageF boxed = intra_mix(x, full, rng.uniform(), theta);
    ok = ok && std::memcmp(boxed.data(), x.data(), sizeof(double) * x.size()) == 0;
    const ImageF still = intra_mix(x, box, rng.uniform(), 0.0);
    for (size_t i = 0; i < x.size(); ++i) {
      ok = ok && std::abs(still.data()[i] - x.data()[i]) <= 1e-12;
    }

    MixedSample s1, s2;
    s1.image = intra_mix(x, box, 0.5, theta);
    s1.box = box;
    s1.schedule = sample_subsets(3, trial);
    s2 = s1;
    for (double& v : s2.image) v = rng.uniform();
    const MixedSample merged = inter_mix(s1, s2, 1.0);
    ok = ok && std::memcmp(merged.image.data(), s1.image.data(),
                           sizeof(double) * s1.image.size()) == 0;
  }
  result.passed = ok;
  result.detail = ok ? "identities bit-exact over 10 trials" : "an identity failed to hold";
  return result;
}

CheckResult check_anatomy_fixed_point() {
  CheckResult result{"anatomy-consistency fixed point", false, ""};
  double worst = 0.0;
  for (int m = 2; m <= 4; ++m) {
    const SubsetSchedule schedule = sample_subsets(m, 41 + m);
    Rng rng(200 + m);
    MatrixXd y(2 * m - 1, 10), a(2 * m - 1, 5);
    for (int r = 0; r < y.rows(); ++r) {
      for (int c = 0; c < 10; ++c) y(r, c) = rng.uniform(0.1, 1.0);
      for (int c = 0; c < 5; ++c) a(r, c) = rng.uniform(0.1, 1.0);
    }
    for (int k = 2; k <= m; ++k) {
      y.row(m + k - 2).setZero();
      a.row(m + k - 2).setZero();
      for (int cls : schedule.omega(k)) {
        y.row(m + k - 2) += y.row(cls - 1);
        a.row(m + k - 2) += a.row(cls - 1);
      }
    }
    worst = std::max(worst,
                     std::abs(anatomy_consistency_loss(y, a, schedule) + 2.0 * (m - 1)));

    // Orthogonal pixel channels isolate the prototype half: each channel on
    // its own coordinate makes every segmentation cosine zero.
    MatrixXd y_orth = MatrixXd::Zero(2 * m - 1, 2 * m - 1);
    for (int r = 0; r < 2 * m - 1; ++r) y_orth(r, r) = 1.0;
    worst = std::max(
        worst, std::abs(anatomy_consistency_loss(y_orth, a, schedule) + 1.0 * (m - 1)));
  }
  result.passed = worst <= 1e-9;
  result.detail = "max deviation from fixed point " + std::to_string(worst);
  return result;
}

CheckResult check_metric_oracles() {
  CheckResult result{"metric oracles", false, ""};
  Rng rng(107);
  bool ok = true;

  auto boundary = [](const Grid<uint8_t>& mask) {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < mask.height(); ++r) {
      for (int c = 0; c < mask.width(); ++c) {
        if (!mask(r, c)) continue;
        const bool edge = r == 0 || r + 1 == mask.height() || c == 0 ||
                          c + 1 == mask.width() || !mask(r - 1, c) || !mask(r + 1, c) ||
                          !mask(r, c - 1) || !mask(r, c + 1);
        if (edge) out.emplace_back(r, c);
      }
    }
    return out;
  };
  for (int trial = 0; trial < 50 && ok; ++trial) {
    Grid<uint8_t> a(12, 12), b(12, 12);
    for (auto& v : a) v = rng.uniform() < 0.3;
    for (auto& v : b) v = rng.uniform() < 0.3;

    size_t inter = 0, total = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      inter += a.data()[i] && b.data()[i];
      total += a.data()[i] != 0;
      total += b.data()[i] != 0;
    }
    const double want_dice = total == 0 ? 1.0 : 2.0 * double(inter) / double(total);
    ok = ok && dice(a, b) == want_dice;

    const auto ba = boundary(a), bb = boundary(b);
    const auto got = hausdorff(a, b);
    if (ba.empty() || bb.empty()) {
      ok = ok && !got.has_value();
    } else {
      double worst_sq = 0.0;
      for (const auto& from : {std::make_pair(&ba, &bb), std::make_pair(&bb, &ba)}) {
        for (const auto& [pr, pc] : *from.first) {
          double best = 1e300;
          for (const auto& [qr, qc] : *from.second) {
            best = std::min(best, double((pr - qr) * (pr - qr) + (pc - qc) * (pc - qc)));
          }
          worst_sq = std::max(worst_sq, best);
        }
      }
      ok = ok && got.has_value() && *got == std::sqrt(worst_sq);
    }
  }

  // Analytic anchors: shifted block Dice, 3-4-5 pixel pair.
  Grid<uint8_t> blk_a(6, 6), blk_b(6, 6);
  for (int r = 1; r <= 2; ++r) {
    for (int c = 1; c <= 2; ++c) {
      blk_a(r, c) = 1;
      blk_b(r, c + 1) = 1;
    }
  }
  ok = ok && dice(blk_a, blk_b) == 0.5;
  Grid<uint8_t> p(6, 6), q(6, 6);
  p(0, 0) = 1;
  q(3, 4) = 1;
  ok = ok && *hausdorff(p, q) == 5.0;

  result.passed = ok;
  result.detail = ok ? "50 random pairs plus analytic anchors exact" : "oracle mismatch";
  return result;
}

CheckResult check_network_gradient() {
  CheckResult result{"network gradient", false, ""};
  ModelSpec spec;
  spec.input_size = 16;
  spec.base_width = 4;
  spec.depth = 2;
  spec.num_classes = 2;
  spec.seed = 99;
  const ModelParams params = init_model(spec);

  Rng rng(108);
  ImageF image(16, 16);
  for (double& v : image) v = rng.uniform();
  Tensor3 wp(3, 16, 16), wc(3, 16, 16);
  const auto nv = static_cast<Eigen::Index>(wp.size());
  Eigen::Map<VectorXd>(wp.data(), nv) = VectorXd::Random(nv);
  Eigen::Map<VectorXd>(wc.data(), nv) = VectorXd::Random(nv);

  auto loss_of = [&](const ModelParams& theta) {
    const ForwardOutput out = forward(theta, image);
    double total = 0.0;
    for (size_t i = 0; i < wp.size(); ++i) total += wp.data()[i] * out.probs.data()[i];
    for (size_t i = 0; i < wc.size(); ++i) total += wc.data()[i] * out.class_probs.data()[i];
    return total;
  };

  ForwardCache cache;
  forward(params, image, &cache);
  const VectorXd grad = backward(params, cache, wp, wc);

  Rng pick(109);
  const double h = 1e-5;
  double worst = 0.0;
  bool ok = true;
  for (int i = 0; i < 5; ++i) {
    const Eigen::Index at = static_cast<Eigen::Index>(pick.uniform_int(params.values.size()));
    ModelParams probe = params;
    probe.values[at] += h;
    const double up = loss_of(probe);
    probe.values[at] = params.values[at] - h;
    const double down = loss_of(probe);
    ok = fd_match(grad[at], (up - down) / (2 * h), 1e-4, worst) && ok;
  }
  result.passed = ok;
  result.detail = rel_detail(worst, 1e-4);
  return result;
}

CheckResult guarded(CheckResult (*fn)(), const char* name) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {name, false, std::string("threw: ") + e.what()};
  }
}

}  // namespace

bool SelfCheckReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const CheckResult& c) { return c.passed; });
}

SelfCheckReport run_selfcheck(const SelfCheckOptions& options) {
  SelfCheckReport report;
  try {
    report.checks.push_back(check_sinkhorn_rows(options.corrupt_sinkhorn));
  } catch (const std::exception& e) {
    report.checks.push_back(
        {"sinkhorn row-stochasticity", false, std::string("threw: ") + e.what()});
  }
  report.checks.push_back(guarded(check_sinkhorn_marginals, "sinkhorn uniform marginals"));
  report.checks.push_back(guarded(check_sinkhorn_permutation, "sinkhorn permutation case"));
  report.checks.push_back(guarded(check_mapping_gradient, "mapping-loss gradient"));
  report.checks.push_back(guarded(check_loss_gradients, "clustering and mix loss gradients"));
  report.checks.push_back(guarded(check_supervised_gradients, "supervised loss gradients"));
  report.checks.push_back(guarded(check_mix_identities, "mix identities"));
  report.checks.push_back(guarded(check_anatomy_fixed_point, "anatomy-consistency fixed point"));
  report.checks.push_back(guarded(check_metric_oracles, "metric oracles"));
  report.checks.push_back(guarded(check_network_gradient, "network gradient"));
  return report;
}

}  // namespace medcl
