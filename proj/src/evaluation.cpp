#include "spvins/evaluation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>

namespace spvins {

AlignMode parse_align_mode(const std::string& s) {
  if (s == "se3") return AlignMode::SE3;
  if (s == "posyaw") return AlignMode::PosYaw;
  if (s == "none") return AlignMode::None;
  throw std::invalid_argument("unknown alignment mode '" + s + "'");
}

std::vector<std::pair<std::size_t, std::size_t>> associate(const std::vector<TrajectoryPoint>& est,
                                                           const std::vector<TrajectoryPoint>& ref,
                                                           double max_dt) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.size() && !ref.empty(); ++i) {
    const double t = est[i].timestamp;
    while (j + 1 < ref.size() && std::abs(ref[j + 1].timestamp - t) <= std::abs(ref[j].timestamp - t)) ++j;
    if (std::abs(ref[j].timestamp - t) > max_dt) continue;
    if (!out.empty() && out.back().second == j) continue;  // keep it one-to-one
    out.emplace_back(i, j);
  }
  return out;
}

Alignment align_points(const std::vector<Vec3>& est, const std::vector<Vec3>& ref, AlignMode mode) {
  Alignment a;
  if (mode == AlignMode::None || est.empty()) return a;
  if (est.size() != ref.size()) throw std::invalid_argument("alignment needs paired points");
  Vec3 me = Vec3::Zero(), mr = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    me += est[i];
    mr += ref[i];
  }
  me /= static_cast<double>(est.size());
  mr /= static_cast<double>(est.size());
  if (mode == AlignMode::SE3) {
    Mat3 H = Mat3::Zero();
    for (std::size_t i = 0; i < est.size(); ++i) H += (est[i] - me) * (ref[i] - mr).transpose();
    Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 D = Mat3::Identity();
    D(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    a.R = svd.matrixV() * D * svd.matrixU().transpose();
  } else {
    double s = 0.0, c = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
      const Vec3 e = est[i] - me, r = ref[i] - mr;
      s += e.x() * r.y() - e.y() * r.x();
      c += e.x() * r.x() + e.y() * r.y();
    }
    a.R = Eigen::AngleAxisd(std::atan2(s, c), Vec3::UnitZ()).toRotationMatrix();
  }
  a.t = mr - a.R * me;
  return a;
}

Alignment align(const std::vector<TrajectoryPoint>& est, const std::vector<TrajectoryPoint>& ref,
                AlignMode mode, double max_dt) {
  std::vector<Vec3> e, r;
  for (const auto& [i, j] : associate(est, ref, max_dt)) {
    e.push_back(est[i].p);
    r.push_back(ref[j].p);
  }
  return align_points(e, r, mode);
}

std::vector<TrajectoryPoint> apply_alignment(const Alignment& a, const std::vector<TrajectoryPoint>& est) {
  std::vector<TrajectoryPoint> out = est;
  const Quat qa(a.R);
  for (TrajectoryPoint& p : out) {
    p.p = a.R * p.p + a.t;
    p.q = canonical(qa * p.q);
  }
  return out;
}

AteResult ate(const std::vector<TrajectoryPoint>& est, const std::vector<TrajectoryPoint>& ref,
              AlignMode mode, double max_dt) {
  AteResult res;
  const auto pairs = associate(est, ref, max_dt);
  if (pairs.empty()) throw std::invalid_argument("no associated poses within the time tolerance");
  std::vector<Vec3> e, r;
  for (const auto& [i, j] : pairs) {
    e.push_back(est[i].p);
    r.push_back(ref[j].p);
  }
  res.alignment = align_points(e, r, mode);
  double sum2 = 0.0, sum = 0.0;
  for (std::size_t k = 0; k < e.size(); ++k) {
    const double d = (res.alignment.R * e[k] + res.alignment.t - r[k]).norm();
    res.errors.push_back(d);
    sum2 += d * d;
    sum += d;
    res.max = std::max(res.max, d);
  }
  res.count = e.size();
  res.rmse = std::sqrt(sum2 / static_cast<double>(res.count));
  res.mean = sum / static_cast<double>(res.count);
  return res;
}

double ate_rmse(const std::vector<TrajectoryPoint>& est, const std::vector<TrajectoryPoint>& ref,
                AlignMode mode) {
  return ate(est, ref, mode).rmse;
}

std::vector<RpeStats> rpe(const std::vector<TrajectoryPoint>& est,
                          const std::vector<TrajectoryPoint>& ref,
                          const std::vector<double>& lengths, double max_dt) {
  const auto pairs = associate(est, ref, max_dt);
  std::vector<double> dist(pairs.size(), 0.0);
  for (std::size_t k = 1; k < pairs.size(); ++k) {
    dist[k] = dist[k - 1] + (ref[pairs[k].second].p - ref[pairs[k - 1].second].p).norm();
  }
  std::vector<RpeStats> out;
  for (double L : lengths) {
    RpeStats s;
    s.length = L;
    double t_sum = 0.0, t_sq = 0.0, r_sum = 0.0, r_sq = 0.0;
    std::size_t end = 0;
    for (std::size_t a = 0; a < pairs.size(); ++a) {
      end = std::max(end, a + 1);
      while (end < pairs.size() && dist[end] - dist[a] < L) ++end;
      if (end >= pairs.size()) break;
      const Pose ref_rel = ref[pairs[a].second].pose().inverse() * ref[pairs[end].second].pose();
      const Pose est_rel = est[pairs[a].first].pose().inverse() * est[pairs[end].first].pose();
      const Pose E = ref_rel.inverse() * est_rel;
      const double te = E.t.norm();
      const double re = log_so3(E.R).norm() * 180.0 / std::numbers::pi;
      t_sum += te;
      t_sq += te * te;
      r_sum += re;
      r_sq += re * re;
      ++s.count;
    }
    if (s.count > 0) {
      const double n = static_cast<double>(s.count);
      s.trans_mean = t_sum / n;
      s.trans_rmse = std::sqrt(t_sq / n);
      s.rot_mean = r_sum / n;
      s.rot_rmse = std::sqrt(r_sq / n);
    }
    out.push_back(s);
  }
  return out;
}

Eigen::Matrix<double, 6, 1> pose_error(const Pose& truth, const Pose& est) {
  Eigen::Matrix<double, 6, 1> d;
  const Vec3 phi = log_so3(truth.R * est.R.transpose());
  d.head<3>() = phi;
  d.tail<3>() = truth.t - exp_so3(phi) * est.t;
  return d;
}

double pose_nees(const Pose& truth, const Pose& est, const Mat6& cov) {
  const Eigen::Matrix<double, 6, 1> d = pose_error(truth, est);
  const Eigen::LDLT<Mat6> ldlt(cov);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw std::invalid_argument("pose covariance is not positive definite");
  }
  return d.dot(ldlt.solve(d));
}

NeesResult nees(const std::vector<Pose>& est, const std::vector<Mat6>& covs,
                const std::vector<Pose>& truth) {
  if (est.size() != covs.size() || est.size() != truth.size()) {
    throw std::invalid_argument("nees inputs differ in length");
  }
  NeesResult out;
  for (std::size_t i = 0; i < est.size(); ++i) out.per_frame.push_back(pose_nees(truth[i], est[i], covs[i]));
  double s = 0.0;
  for (double v : out.per_frame) s += v;
  out.mean = out.per_frame.empty() ? 0.0 : s / static_cast<double>(out.per_frame.size());
  return out;
}

}  // namespace spvins
