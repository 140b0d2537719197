#include "spvins/update.hpp"

#include <cmath>
#include <iomanip>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <boost/math/distributions/chi_squared.hpp>

namespace spvins {

MeasurementBatch MeasurementBatch::empty(int error_dim) {
  MeasurementBatch b;
  b.r.resize(0);
  b.H.resize(0, error_dim);
  b.noise.resize(0);
  return b;
}

int MeasurementBatch::count(RowSource s) const {
  int n = 0;
  for (RowSource x : sources) n += (x == s);
  return n;
}

int MeasurementBatch::track_count() const {
  int n = 0;
  for (std::size_t i = 0; i < tracks.size(); ++i) n += (i == 0 || tracks[i] != tracks[i - 1]);
  return n;
}

void MeasurementBatch::append(const MeasurementBatch& other) {
  if (other.rows() == 0) return;
  if (rows() == 0 && H.cols() != other.H.cols()) H.resize(0, other.H.cols());
  const int n = rows(), m = other.rows();
  r.conservativeResize(n + m);
  r.tail(m) = other.r;
  H.conservativeResize(n + m, other.H.cols());
  H.bottomRows(m) = other.H;
  noise.conservativeResize(n + m);
  noise.tail(m) = other.noise;
  sources.insert(sources.end(), other.sources.begin(), other.sources.end());
  tracks.insert(tracks.end(), other.tracks.begin(), other.tracks.end());
}

MeasurementBatch MeasurementBatch::concat(const std::vector<MeasurementBatch>& parts, int error_dim) {
  int m = 0;
  for (const MeasurementBatch& p : parts) m += p.rows();
  MeasurementBatch out;
  out.r.resize(m);
  out.H.resize(m, error_dim);
  out.noise.resize(m);
  out.sources.reserve(m);
  out.tracks.reserve(m);
  int row = 0;
  for (const MeasurementBatch& p : parts) {
    const int k = p.rows();
    if (k == 0) continue;
    out.r.segment(row, k) = p.r;
    out.H.middleRows(row, k) = p.H;
    out.noise.segment(row, k) = p.noise;
    out.sources.insert(out.sources.end(), p.sources.begin(), p.sources.end());
    out.tracks.insert(out.tracks.end(), p.tracks.begin(), p.tracks.end());
    row += k;
  }
  return out;
}

MeasurementBatch MeasurementBatch::slice(int begin, int end) const {
  MeasurementBatch b;
  b.r = r.segment(begin, end - begin);
  b.H = H.middleRows(begin, end - begin);
  b.noise = noise.segment(begin, end - begin);
  b.sources.assign(sources.begin() + begin, sources.begin() + end);
  b.tracks.assign(tracks.begin() + begin, tracks.begin() + end);
  return b;
}

namespace {

// Unit normal, in beta's image plane, of the epipolar line of the alpha ray.
Eigen::RowVector2d epipolar_normal(const FeatureTrack& track, const FullState& state,
                                   const BaseViewPair& base) {
  const RelativePose rel = relative_camera_pose(state, track.observations[base.alpha].view,
                                                track.observations[base.beta].view);
  const Vec3 l = rel.t.cross(rel.R * track.observations[base.alpha].ray());
  const Eigen::Vector2d n = l.head<2>();
  if (n.norm() < 1e-300) return {1.0, 0.0};
  return n.normalized().transpose();
}

}  // namespace

MeasurementBatch track_measurement(const FeatureTrack& track, const FullState& state,
                                   const ResidualPolicy& policy, RowSource uv_tag,
                                   TargetSet targets) {
  const int dim = state.error_dim();
  MeasurementBatch out = MeasurementBatch::empty(dim);
  const auto& obs = track.observations;
  const int nobs = static_cast<int>(obs.size());

  BaseViewPair base;
  try {
    base = select_base_views(track, state, policy.vision);
  } catch (const DegenerateTrack&) {
    return out;
  }

  std::vector<double> r_raw;
  std::vector<Eigen::RowVectorXd> H_rows, J_rows;
  std::vector<RowSource> tags;

  std::optional<std::size_t> canonical;
  if (policy.use_ray && targets == TargetSet::All) {
    if (auto c = track.newest_stereo_left()) {
      try {
        const double rr = ray_residual(track, state, *c, policy.vision);
        Eigen::RowVectorXd h = ray_jacobian(track, state, *c, policy.vision);
        Eigen::RowVectorXd j = ray_observation_jacobian(track, state, *c, policy.vision);
        double var = 0.0;
        for (int k = 0; k < nobs; ++k) var += j.segment<2>(2 * k).squaredNorm() * obs[k].sigma * obs[k].sigma;
        const auto right = track.find({obs[*c].view.frame, Eye::Right});
        const double z = stereo_depth(obs[*c].ray(), obs[*right].ray(), state.extrinsics,
                                      policy.vision.min_parallax);
        if (!(std::sqrt(var) <= policy.max_ray_relative_sigma * z)) throw DegenerateTrack("weak stereo depth");
        r_raw.push_back(rr);
        H_rows.push_back(std::move(h));
        J_rows.push_back(std::move(j));
        tags.push_back(RowSource::Ray);
        canonical = c;
      } catch (const DegenerateTrack&) {
      }
    }
  }

  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (i == base.alpha || (canonical && i == *canonical)) continue;
    if (targets == TargetSet::ClonesOnly && obs[i].view.frame.kind != PoseKind::Clone) continue;
    try {
      const Vec2 res = landmark_residual(track, state, i, base, policy.vision);
      const Eigen::MatrixXd h = landmark_jacobian(track, state, i, base, policy.vision);
      const Eigen::MatrixXd j = landmark_observation_jacobian(track, state, i, base, policy.vision);
      if (i == base.beta) {
        // At beta the component along the epipolar line of the alpha ray is
        // zero to first order; keep only the normal component.
        const Eigen::RowVector2d n = epipolar_normal(track, state, base);
        r_raw.push_back(n * res);
        H_rows.push_back(n * h);
        J_rows.push_back(n * j);
        tags.push_back(uv_tag);
        continue;
      }
      for (int k = 0; k < 2; ++k) {
        r_raw.push_back(res[k]);
        H_rows.push_back(h.row(k));
        J_rows.push_back(j.row(k));
        tags.push_back(uv_tag);
      }
    } catch (const CheiralityViolation&) {
      // observation dropped
    } catch (const DegenerateTrack&) {
      return out;
    }
  }
  const int m = static_cast<int>(r_raw.size());
  if (m == 0) return out;

  Eigen::VectorXd sigma2(2 * nobs);
  for (int i = 0; i < nobs; ++i) sigma2.segment<2>(2 * i).setConstant(obs[i].sigma * obs[i].sigma);

  Eigen::VectorXd r(m);
  Eigen::MatrixXd H(m, dim), J(m, 2 * nobs);
  for (int k = 0; k < m; ++k) {
    r[k] = -r_raw[k];  // innovation: measurement minus prediction
    H.row(k) = H_rows[k];
    J.row(k) = J_rows[k];
  }
  Eigen::MatrixXd R = J * sigma2.asDiagonal() * J.transpose();
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) {
    R.diagonal().array() += 1e-12 * R.diagonal().mean();
    llt.compute(R);
    if (llt.info() != Eigen::Success) return out;
  }
  const auto L = llt.matrixL();
  out.r = L.solve(r);
  out.H = L.solve(H);
  out.noise = Eigen::VectorXd::Ones(m);
  out.sources = tags;
  out.tracks.assign(m, track.id);
  return out;
}

MeasurementBatch build_batch(std::span<const FeatureTrack> tracks, const FullState& state,
                             const ResidualPolicy& policy) {
  std::vector<MeasurementBatch> parts;
  for (const FeatureTrack& t : tracks) parts.push_back(track_measurement(t, state, policy));
  return MeasurementBatch::concat(parts, state.error_dim());
}

double chi2_quantile(double level, int dof) {
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::quantile(dist, level);
}

namespace {

std::vector<int> nonzero_columns(const Eigen::MatrixXd& H) {
  std::vector<int> cols;
  for (int c = 0; c < H.cols(); ++c) {
    if (H.col(c).cwiseAbs().maxCoeff() > 0.0) cols.push_back(c);
  }
  return cols;
}

Eigen::MatrixXd gather_cols(const Eigen::MatrixXd& H, const std::vector<int>& cols) {
  Eigen::MatrixXd out(H.rows(), cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<int>(k)) = H.col(cols[k]);
  return out;
}

Eigen::MatrixXd gather_block(const Covariance& P, const std::vector<int>& rows,
                             const std::vector<int>& cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = P(rows[i], cols[j]);
  }
  return out;
}

}  // namespace

MeasurementBatch chi2_gate(const MeasurementBatch& batch, const Covariance& cov,
                           const GateOptions& opts) {
  std::vector<MeasurementBatch> kept;
  int begin = 0;
  while (begin < batch.rows()) {
    int end = begin + 1;
    while (end < batch.rows() && batch.tracks[end] == batch.tracks[begin]) ++end;
    const MeasurementBatch t = batch.slice(begin, end);
    const std::vector<int> cols = nonzero_columns(t.H);
    const Eigen::MatrixXd Hs = gather_cols(t.H, cols);
    Eigen::MatrixXd S = Hs * gather_block(cov, cols, cols) * Hs.transpose();
    S.diagonal() += t.noise;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() == Eigen::Success) {
      const double m2 = t.r.dot(llt.solve(t.r));
      if (m2 < chi2_quantile(opts.level, t.rows())) kept.push_back(t);
    }
    begin = end;
  }
  return MeasurementBatch::concat(kept, static_cast<int>(batch.H.cols()));
}

MeasurementBatch compress(const MeasurementBatch& batch) {
  const std::vector<int> cols = nonzero_columns(batch.H);
  const int m = batch.rows();
  const int c = static_cast<int>(cols.size());
  if (m <= c) return batch;

  const Eigen::VectorXd inv_sd = batch.noise.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd Hs = inv_sd.asDiagonal() * gather_cols(batch.H, cols);
  const Eigen::VectorXd rs = inv_sd.asDiagonal() * batch.r;

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Hs);
  const Eigen::MatrixXd Rfull = qr.matrixQR().triangularView<Eigen::Upper>();
  const Eigen::VectorXd qtr = qr.householderQ().transpose() * rs;

  MeasurementBatch out;
  out.H = Eigen::MatrixXd::Zero(c, batch.H.cols());
  const Eigen::MatrixXd Rtop = Rfull.topRows(c);
  for (int k = 0; k < c; ++k) out.H.col(cols[k]) = Rtop.col(k);
  out.r = qtr.head(c);
  out.noise = Eigen::VectorXd::Ones(c);
  out.sources.assign(c, RowSource::Mixed);
  out.tracks.assign(c, -1);
  return out;
}

void UpdateReport::merge(const UpdateReport& other) {
  const int rows = n_uv_rows + n_ray_rows + n_map_rows;
  const int orows = other.n_uv_rows + other.n_ray_rows + other.n_map_rows;
  if (rows + orows > 0) {
    residual_rms = std::sqrt((residual_rms * residual_rms * rows +
                              other.residual_rms * other.residual_rms * orows) /
                             (rows + orows));
  }
  n_uv_rows += other.n_uv_rows;
  n_ray_rows += other.n_ray_rows;
  n_map_rows += other.n_map_rows;
  accepted_tracks += other.accepted_tracks;
  rejected_tracks += other.rejected_tracks;
  conditioning_failure = conditioning_failure || other.conditioning_failure;
}

void write_report_line(std::ostream& os, const UpdateReport& r) {
  os << std::setprecision(17) << r.timestamp << ", " << r.n_uv_rows << ", " << r.n_ray_rows
     << ", " << r.n_map_rows << ", " << std::setprecision(9) << r.residual_rms << ", "
     << (r.conditioning_failure ? 1 : 0) << '\n';
}

UpdateReport ekf_update(FullState& state, Covariance& cov, const MeasurementBatch& batch) {
  UpdateReport report;
  report.n_uv_rows = batch.count(RowSource::Uv);
  report.n_ray_rows = batch.count(RowSource::Ray);
  report.n_map_rows = batch.count(RowSource::Map);
  report.accepted_tracks = batch.track_count();
  const int m = batch.rows();
  if (m == 0) return report;
  if (batch.H.cols() != cov.rows()) throw StateError("Jacobian width does not match covariance");

  const Eigen::VectorXd w = batch.noise.cwiseSqrt().cwiseInverse();
  report.residual_rms = std::sqrt((w.asDiagonal() * batch.r).squaredNorm() / m);

  const std::vector<int> cols = nonzero_columns(batch.H);
  const Eigen::MatrixXd Hs = gather_cols(batch.H, cols);
  // M = P H^T
  Eigen::MatrixXd M(cov.rows(), m);
  {
    Eigen::MatrixXd Pc(cov.rows(), cols.size());
    for (std::size_t k = 0; k < cols.size(); ++k) Pc.col(static_cast<int>(k)) = cov.col(cols[k]);
    M.noalias() = Pc * Hs.transpose();
  }
  Eigen::MatrixXd S(m, m);
  {
    Eigen::MatrixXd Mc(cols.size(), m);
    for (std::size_t k = 0; k < cols.size(); ++k) Mc.row(static_cast<int>(k)) = M.row(cols[k]);
    S.noalias() = Hs * Mc;
  }
  S.diagonal() += batch.noise;
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success || !std::isfinite(S.sum())) {
    report.conditioning_failure = true;
    return report;
  }
  const Eigen::MatrixXd K = llt.solve(M.transpose()).transpose();
  const Eigen::VectorXd delta = K * batch.r;

  // Joseph form (I - KH) P (I - KH)^T + K Rn K^T, using H P = M^T.
  Eigen::MatrixXd B = cov;
  B.noalias() -= K * M.transpose();
  Eigen::MatrixXd BHt(cov.rows(), m);
  {
    Eigen::MatrixXd Bc(cov.rows(), cols.size());
    for (std::size_t k = 0; k < cols.size(); ++k) Bc.col(static_cast<int>(k)) = B.col(cols[k]);
    BHt.noalias() = Bc * Hs.transpose();
  }
  B.noalias() -= BHt * K.transpose();
  B.noalias() += K * batch.noise.asDiagonal() * K.transpose();
  cov = std::move(B);
  symmetrize(cov);

  inject_correction(state, delta);
  return report;
}

UpdateReport gated_update(FullState& state, Covariance& cov, const MeasurementBatch& batch,
                          const GateOptions& opts) {
  const int before = batch.track_count();
  const MeasurementBatch gated = chi2_gate(batch, cov, opts);
  UpdateReport report;
  report.n_uv_rows = gated.count(RowSource::Uv);
  report.n_ray_rows = gated.count(RowSource::Ray);
  report.n_map_rows = gated.count(RowSource::Map);
  report.accepted_tracks = gated.track_count();
  report.rejected_tracks = before - report.accepted_tracks;
  if (gated.rows() == 0) return report;
  const UpdateReport core = ekf_update(state, cov, compress(gated));
  report.residual_rms = core.residual_rms;
  report.conditioning_failure = core.conditioning_failure;
  return report;
}

}  // namespace spvins
