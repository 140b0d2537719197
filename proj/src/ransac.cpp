#include "spvins/ransac.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

namespace spvins {

namespace {

/// Similarity that moves the points' centroid to the origin with mean distance sqrt(2).
Mat3 hartley(const std::vector<Vec2>& x) {
  Vec2 c = Vec2::Zero();
  for (const Vec2& p : x) c += p;
  c /= static_cast<double>(x.size());
  double d = 0.0;
  for (const Vec2& p : x) d += (p - c).norm();
  d /= static_cast<double>(x.size());
  const double s = d > 0.0 ? std::sqrt(2.0) / d : 1.0;
  Mat3 T;
  T << s, 0.0, -s * c.x(), 0.0, s, -s * c.y(), 0.0, 0.0, 1.0;
  return T;
}

}  // namespace

namespace {

/// Eight-point solve; rows are scaled by `w` when given (Sampson reweighting).
std::optional<Mat3> eight_point(const std::vector<Vec2>& x1, const std::vector<Vec2>& x2,
                                const std::vector<double>* w) {
  const int n = static_cast<int>(x1.size());
  if (n < 8 || x2.size() != x1.size()) return std::nullopt;
  const Mat3 T1 = hartley(x1), T2 = hartley(x2);
  Eigen::MatrixXd A(n, 9);
  for (int i = 0; i < n; ++i) {
    const Vec3 a = T1 * x1[i].homogeneous(), b = T2 * x2[i].homogeneous();
    const double wi = w ? (*w)[i] : 1.0;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) A(i, 3 * r + c) = wi * b[r] * a[c];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 F;
  F << e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8];
  const Mat3 E = T2.transpose() * F * T1;
  Eigen::JacobiSVD<Mat3> se(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (!(se.singularValues()[1] > 0.0)) return std::nullopt;
  return se.matrixU() * Vec3(1.0, 1.0, 0.0).asDiagonal() * se.matrixV().transpose();
}

}  // namespace

std::optional<Mat3> essential_eight_point(const std::vector<Vec2>& x1, const std::vector<Vec2>& x2) {
  return eight_point(x1, x2, nullptr);
}

namespace {

double signed_sampson(const Mat3& E, const Vec2& x1, const Vec2& x2) {
  const Vec3 a = x1.homogeneous(), b = x2.homogeneous();
  const Vec3 Ea = E * a, Etb = E.transpose() * b;
  const double g = std::sqrt(Ea.head<2>().squaredNorm() + Etb.head<2>().squaredNorm());
  return g > 0.0 ? b.dot(Ea) / g : 0.0;
}

}  // namespace

std::optional<Mat3> essential_sampson_fit(const std::vector<Vec2>& x1, const std::vector<Vec2>& x2,
                                          int iterations) {
  const auto E0 = essential_eight_point(x1, x2);
  if (!E0) return std::nullopt;
  // E = [t]x R with unit t; one of the four decompositions is enough here.
  Eigen::JacobiSVD<Mat3> svd(*E0, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU(), V = svd.matrixV();
  if (U.determinant() < 0.0) U = -U;
  if (V.determinant() < 0.0) V = -V;
  Mat3 W;
  W << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  Mat3 R = U * W * V.transpose();
  Vec3 t = U.col(2);
  auto essential = [](const Mat3& R, const Vec3& t) -> Mat3 { return skew(t) * R; };
  if ((essential(R, t) - *E0).norm() > (essential(R, t) + *E0).norm()) t = -t;

  const int n = static_cast<int>(x1.size());
  auto residuals = [&](const Mat3& Rk, const Vec3& tk) {
    const Mat3 E = essential(Rk, tk);
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) r[i] = signed_sampson(E, x1[i], x2[i]);
    return r;
  };
  auto apply = [](const Mat3& Rk, const Vec3& tk, const Eigen::Matrix<double, 5, 1>& d,
                  Mat3& Ro, Vec3& to) {
    Vec3 b1 = tk.unitOrthogonal();
    Vec3 b2 = tk.cross(b1);
    Ro = exp_so3(d.head<3>()) * Rk;
    to = (tk + d[3] * b1 + d[4] * b2).normalized();
  };
  double lambda = 1e-3;
  Eigen::VectorXd r = residuals(R, t);
  for (int it = 0; it < iterations; ++it) {
    Eigen::MatrixXd J(n, 5);
    const double h = 1e-7;
    for (int k = 0; k < 5; ++k) {
      Eigen::Matrix<double, 5, 1> d = Eigen::Matrix<double, 5, 1>::Zero();
      d[k] = h;
      Mat3 Rp, Rm;
      Vec3 tp, tm;
      apply(R, t, d, Rp, tp);
      apply(R, t, -d, Rm, tm);
      J.col(k) = (residuals(Rp, tp) - residuals(Rm, tm)) / (2.0 * h);
    }
    Eigen::Matrix<double, 5, 5> A = J.transpose() * J;
    A.diagonal() *= 1.0 + lambda;
    const Eigen::Matrix<double, 5, 1> d = A.ldlt().solve(-J.transpose() * r);
    if (!d.allFinite()) break;
    Mat3 Rn;
    Vec3 tn;
    apply(R, t, d, Rn, tn);
    const Eigen::VectorXd rn = residuals(Rn, tn);
    if (rn.squaredNorm() < r.squaredNorm()) {
      R = Rn;
      t = tn;
      r = rn;
      lambda *= 0.1;
      if (d.norm() < 1e-10) break;
    } else {
      lambda *= 10.0;
    }
  }
  return essential(R, t);
}

double sampson_error(const Mat3& E, const Vec2& x1, const Vec2& x2) {
  const Vec3 a = x1.homogeneous(), b = x2.homogeneous();
  const Vec3 Ea = E * a, Etb = E.transpose() * b;
  const double num = b.dot(Ea);
  const double den = Ea.head<2>().squaredNorm() + Etb.head<2>().squaredNorm();
  return den > 0.0 ? num * num / den : std::numeric_limits<double>::infinity();
}

std::optional<CameraFromWorld> pnp_dlt(const std::vector<Vec3>& X, const std::vector<Vec2>& x) {
  const int n = static_cast<int>(X.size());
  if (n < 6 || x.size() != X.size()) return std::nullopt;
  // Centre and scale the points for conditioning.
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : X) mean += p;
  mean /= n;
  double scale = 0.0;
  for (const Vec3& p : X) scale += (p - mean).norm();
  scale = scale > 0.0 ? n / scale : 1.0;

  Eigen::MatrixXd A(2 * n, 12);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector4d Xh = ((X[i] - mean) * scale).homogeneous();
    A.row(2 * i) << Xh.transpose(), Eigen::RowVector4d::Zero(), -x[i].x() * Xh.transpose();
    A.row(2 * i + 1) << Eigen::RowVector4d::Zero(), Xh.transpose(), -x[i].y() * Xh.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> P;
  P << p.segment<4>(0).transpose(), p.segment<4>(4).transpose(), p.segment<4>(8).transpose();

  // The null vector's sign is arbitrary: choose it so the rotation part is proper.
  if (P.leftCols<3>().determinant() < 0.0) P = -P;
  Eigen::JacobiSVD<Mat3> sr(P.leftCols<3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double sigma = sr.singularValues().mean();
  if (!(sigma > 0.0)) return std::nullopt;
  const Mat3 R = sr.matrixU() * sr.matrixV().transpose();
  const Vec3 t = P.col(3) / sigma;
  int front = 0;
  for (int i = 0; i < n; ++i) front += (R * ((X[i] - mean) * scale) + t).z() > 0.0;
  if (2 * front < n) return std::nullopt;
  // Undo the normalization: x = R (s (X - m)) + t = s (R X + (t / s - R m)).
  CameraFromWorld T;
  T.R = R;
  T.t = t / scale - R * mean;
  return T;
}

double reprojection_error(const CameraFromWorld& T, const Vec3& X, const Vec2& x) {
  const Vec3 c = T.R * X + T.t;
  if (!(c.z() > 1e-9)) return std::numeric_limits<double>::infinity();
  return (c.head<2>() / c.z() - x).norm();
}

CameraFromWorld refine_pose(const CameraFromWorld& init, const std::vector<Vec3>& X,
                            const std::vector<Vec2>& x, int iterations) {
  CameraFromWorld T = init;
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> JtJ = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> Jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < X.size(); ++i) {
      const Vec3 c = T.R * X[i] + T.t;
      if (!(c.z() > 1e-9)) continue;
      const double iz = 1.0 / c.z();
      Eigen::Matrix<double, 2, 3> Pi;
      Pi << iz, 0.0, -c.x() * iz * iz, 0.0, iz, -c.y() * iz * iz;
      // c(dtheta, dt) = Exp(dtheta) R X + t + dt
      Eigen::Matrix<double, 2, 6> J;
      J.leftCols<3>() = -Pi * skew(T.R * X[i]);
      J.rightCols<3>() = Pi;
      const Vec2 r = c.head<2>() * iz - x[i];
      JtJ += J.transpose() * J;
      Jtr += J.transpose() * r;
    }
    const Eigen::Matrix<double, 6, 1> d = JtJ.ldlt().solve(-Jtr);
    if (!d.allFinite()) break;
    T.R = exp_so3(d.head<3>()) * T.R;
    T.t += d.tail<3>();
    if (d.norm() < 1e-12) break;
  }
  return T;
}

namespace {

std::vector<std::size_t> sample(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> out;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  while (out.size() < k) {
    const std::size_t i = pick(rng);
    if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
  }
  return out;
}

int required_iterations(double inlier_ratio, int sample_size, double confidence, int cap) {
  const double w = std::pow(inlier_ratio, sample_size);
  if (w <= 0.0) return cap;
  if (w >= 1.0) return 1;
  const double n = std::log(1.0 - confidence) / std::log1p(-w);
  if (!(n < cap)) return cap;
  return std::max(1, static_cast<int>(std::ceil(n)));
}

}  // namespace

RansacResult ransac_essential(const std::vector<Vec2>& x1, const std::vector<Vec2>& x2,
                              const RansacOptions& opts) {
  RansacResult best;
  const std::size_t n = x1.size();
  if (n < 8) return best;
  std::mt19937_64 rng(opts.seed);
  const double thr2 = opts.epipolar_threshold * opts.epipolar_threshold;
  auto score = [&](const Mat3& E, double scale = 1.0) {
    std::vector<std::size_t> in;
    for (std::size_t i = 0; i < n; ++i) {
      if (sampson_error(E, x1[i], x2[i]) < scale * scale * thr2) in.push_back(i);
    }
    return in;
  };
  // Refit on the consensus set with a threshold that shrinks to the nominal one;
  // the wider first passes pull in inliers a noisy minimal model missed.
  auto local_optimize = [&](std::vector<std::size_t> in) {
    std::vector<std::size_t> best_in = in;
    for (double scale : {3.0, 2.0, 1.5, 1.0, 1.0}) {
      if (in.size() < 8) break;
      std::vector<Vec2> c1, c2;
      for (std::size_t i : in) {
        c1.push_back(x1[i]);
        c2.push_back(x2[i]);
      }
      const auto E = essential_sampson_fit(c1, c2);
      if (!E) break;
      auto nominal = score(*E);
      if (nominal.size() > best_in.size()) best_in = nominal;
      in = scale > 1.0 ? score(*E, scale) : std::move(nominal);
    }
    return best_in;
  };
  int needed = opts.max_iterations;
  std::vector<Vec2> s1(8), s2(8);
  for (int it = 0; it < needed; ++it) {
    const auto idx = sample(rng, n, 8);
    for (int k = 0; k < 8; ++k) {
      s1[k] = x1[idx[k]];
      s2[k] = x2[idx[k]];
    }
    ++best.iterations;
    const auto E = essential_eight_point(s1, s2);
    if (!E) continue;
    auto in = score(*E);
    auto wide = score(*E, 3.0);
    // A noisy minimal model can undercount; judge it by its widened support.
    if (wide.size() > best.inliers.size()) {
      auto refined = local_optimize(std::move(wide));
      if (refined.size() > in.size()) in = std::move(refined);
    }
    if (in.size() > best.inliers.size()) {
      best.inliers = std::move(in);
      needed = required_iterations(double(best.inliers.size()) / n, 8, opts.confidence,
                                   opts.max_iterations);
    }
  }
  return best;
}

std::optional<PnpResult> ransac_pnp(const std::vector<Vec3>& X, const std::vector<Vec2>& x,
                                    const RansacOptions& opts) {
  const std::size_t n = X.size();
  if (n < 6) return std::nullopt;
  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::optional<PnpResult> best;
  int needed = opts.max_iterations, iterations = 0;
  std::vector<Vec3> sX(6);
  std::vector<Vec2> sx(6);
  for (int it = 0; it < needed; ++it) {
    const auto idx = sample(rng, n, 6);
    for (int k = 0; k < 6; ++k) {
      sX[k] = X[idx[k]];
      sx[k] = x[idx[k]];
    }
    ++iterations;
    const auto T = pnp_dlt(sX, sx);
    if (!T) continue;
    std::vector<std::size_t> in;
    for (std::size_t i = 0; i < n; ++i) {
      if (reprojection_error(*T, X[i], x[i]) < opts.reprojection_threshold) in.push_back(i);
    }
    if (!best || in.size() > best->inliers.size()) {
      best = PnpResult{*T, std::move(in), 0};
      needed = required_iterations(double(best->inliers.size()) / n, 6, opts.confidence,
                                   opts.max_iterations);
    }
  }
  if (!best || best->inliers.size() < 6) return std::nullopt;

  // Refine on the consensus set, then re-score once with the refined pose.
  for (int round = 0; round < 2; ++round) {
    std::vector<Vec3> iX;
    std::vector<Vec2> ix;
    for (std::size_t i : best->inliers) {
      iX.push_back(X[i]);
      ix.push_back(x[i]);
    }
    best->pose = refine_pose(best->pose, iX, ix);
    best->inliers.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (reprojection_error(best->pose, X[i], x[i]) < opts.reprojection_threshold) {
        best->inliers.push_back(i);
      }
    }
    if (best->inliers.size() < 6) return std::nullopt;
  }
  best->iterations = iterations;
  return best;
}

}  // namespace spvins
