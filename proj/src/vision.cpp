#include "spvins/vision.hpp"

#include <algorithm>
#include <cmath>

namespace spvins {

std::optional<std::size_t> FeatureTrack::find(const ViewId& view) const {
  for (std::size_t i = 0; i < observations.size(); ++i) {
    if (observations[i].view == view) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> FeatureTrack::newest_stereo_left() const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const ViewId& v = observations[i].view;
    if (v.eye != Eye::Left) continue;
    if (!find(ViewId{v.frame, Eye::Right})) continue;
    if (!best || observations[*best].view.frame < v.frame) best = i;
  }
  return best;
}

Pose camera_pose(const FullState& state, const ViewId& view) {
  return state.extrinsics[view.eye].camera_pose(state.pose(view.frame));
}

RelativePose relative_camera_pose(const Pose& body_source, const CameraExtrinsic& ext_source,
                                  const Pose& body_target, const CameraExtrinsic& ext_target) {
  const Pose src = ext_source.camera_pose(body_source);
  const Pose dst = ext_target.camera_pose(body_target);
  return {dst.R.transpose() * src.R, dst.R.transpose() * (src.t - dst.t)};
}

RelativePose relative_camera_pose(const FullState& state, const ViewId& source,
                                  const ViewId& target) {
  return relative_camera_pose(state.pose(source.frame), state.extrinsics[source.eye],
                              state.pose(target.frame), state.extrinsics[target.eye]);
}

double parallax(const Vec3& p_a, const Vec3& p_b, const Mat3& R_ba) {
  return p_b.cross(R_ba * p_a).norm();
}

BaseViewPair select_base_views(const FeatureTrack& track, const FullState& state,
                               const VisionOptions& opts) {
  const auto& obs = track.observations;
  if (obs.size() < 2) throw DegenerateTrack("track needs at least two observations");
  // ||p_b x R_b^T R_a p_a|| == ||(R_b p_b) x (R_a p_a)||: parallax from global-frame rays.
  std::vector<Vec3> rays(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) rays[i] = camera_pose(state, obs[i].view).R * obs[i].ray();

  std::optional<BaseViewPair> best;
  for (std::size_t a = 0; a < obs.size(); ++a) {
    for (std::size_t b = a + 1; b < obs.size(); ++b) {
      std::size_t alpha = a, beta = b;
      if (obs[b].view < obs[a].view) std::swap(alpha, beta);
      const double theta = rays[beta].cross(rays[alpha]).norm();
      const bool better =
          !best || theta > best->theta ||
          (theta == best->theta &&
           std::tie(obs[alpha].view, obs[beta].view) <
               std::tie(obs[best->alpha].view, obs[best->beta].view));
      if (better) best = BaseViewPair{alpha, beta, theta};
    }
  }
  if (best->theta < opts.min_parallax) throw DegenerateTrack("parallax below threshold");
  return *best;
}

namespace {

struct Camera {
  Mat3 R;  // camera to global
  Vec3 c;  // camera centre in global
};

Camera camera_of(const FullState& state, const ViewId& v) {
  const Pose p = camera_pose(state, v);
  return {p.R, p.t};
}

// Derivatives of some function w.r.t. one camera's global-frame rotation error
// psi (R = Exp(psi) R_est) and its centre c.
struct CameraDerivative {
  ViewId view;
  Eigen::MatrixXd d_psi;
  Eigen::MatrixXd d_c;
};

// Chains camera derivatives into the error-state columns. The body error
// (phi, dp_st) moves the camera by psi = phi, c = Exp(phi) c_est + dp_st.
// The extrinsic error (phi_e, dp_e) gives psi = -R_GC phi_e, c = c_est - R_GC (dp_e + [..]).
void scatter(const FullState& state, const CameraDerivative& d, bool body, bool calibrate,
             Eigen::Ref<Eigen::MatrixXd> H) {
  const CameraExtrinsic& ext = state.extrinsics[d.view.eye];
  Pose body_pose;
  if (body) body_pose = state.pose(d.view.frame);
  const Pose cam = ext.camera_pose(body_pose);
  if (body) {
    const int o = state.pose_offset(d.view.frame);
    H.middleCols<3>(o) += d.d_psi - d.d_c * skew(cam.t);
    H.middleCols<3>(o + 3) += d.d_c;
  }
  if (calibrate) {
    const int o = state.extrinsic_offset(d.view.eye);
    const Mat3& R_GC = cam.R;
    H.middleCols<3>(o) += -d.d_psi * R_GC - d.d_c * skew(R_GC * ext.p_CB) * R_GC;
    H.middleCols<3>(o + 3) += -d.d_c * R_GC;
  }
}

// Unit-gradient helper: d||x||/dx = x^T / ||x||.
Eigen::RowVector3d norm_gradient(const Vec3& x) {
  const double n = x.norm();
  if (n < 1e-300) return Eigen::RowVector3d::Zero();
  return x.transpose() / n;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& f) {
  const double iz = 1.0 / f.z();
  Eigen::Matrix<double, 2, 3> P;
  P << iz, 0.0, -f.x() * iz * iz,
       0.0, iz, -f.y() * iz * iz;
  return P;
}

// Everything the landmark formula needs, evaluated once.
struct LandmarkTerms {
  Camera ci, ca, cb;
  Vec3 pa, pb;
  Vec3 a, d, e;   // R_a p_a, c_a - c_i, c_a - c_b
  Vec3 t_ba;      // R_b^T e
  Vec3 u;         // t_ba x p_b
  Vec3 rp;        // R_b^T a
  Vec3 w;         // p_b x rp
  double A = 0.0, B = 0.0;
  Vec3 y;         // A a + B d
  Vec3 f;         // R_i^T y
};

LandmarkTerms landmark_terms(const FeatureTrack& track, const FullState& state, std::size_t target,
                             const BaseViewPair& base) {
  const auto& obs = track.observations;
  if (target >= obs.size() || base.alpha >= obs.size() || base.beta >= obs.size() ||
      base.alpha == base.beta) {
    throw DegenerateTrack("invalid target or base views");
  }
  LandmarkTerms T;
  T.ci = camera_of(state, obs[target].view);
  T.ca = camera_of(state, obs[base.alpha].view);
  T.cb = camera_of(state, obs[base.beta].view);
  T.pa = obs[base.alpha].ray();
  T.pb = obs[base.beta].ray();
  T.a = T.ca.R * T.pa;
  T.d = T.ca.c - T.ci.c;
  T.e = T.ca.c - T.cb.c;
  T.t_ba = T.cb.R.transpose() * T.e;
  T.u = T.t_ba.cross(T.pb);
  T.rp = T.cb.R.transpose() * T.a;
  T.w = T.pb.cross(T.rp);
  T.A = T.u.norm();
  T.B = T.w.norm();
  T.y = T.A * T.a + T.B * T.d;
  T.f = T.ci.R.transpose() * T.y;
  return T;
}

void check_landmark(const LandmarkTerms& T, const VisionOptions& opts) {
  if (T.B < opts.min_parallax) throw DegenerateTrack("base parallax below threshold");
  if (T.A < 1e-12) throw DegenerateTrack("base translation parallel to the beta ray");
  if (!(T.f.z() > opts.eps_depth)) throw CheiralityViolation("predicted depth not positive");
}

}  // namespace

Vec3 po_project(const FeatureTrack& track, const FullState& state, std::size_t target,
                const BaseViewPair& base, const VisionOptions& opts) {
  const LandmarkTerms T = landmark_terms(track, state, target, base);
  if (T.B < opts.min_parallax) throw DegenerateTrack("base parallax below threshold");
  return T.f;
}

Vec2 landmark_residual(const FeatureTrack& track, const FullState& state, std::size_t target,
                       const BaseViewPair& base, const VisionOptions& opts) {
  const LandmarkTerms T = landmark_terms(track, state, target, base);
  check_landmark(T, opts);
  return T.f.head<2>() / T.f.z() - track.observations[target].uv;
}

Eigen::MatrixXd landmark_jacobian(const FeatureTrack& track, const FullState& state,
                                  std::size_t target, const BaseViewPair& base,
                                  const VisionOptions& opts) {
  const LandmarkTerms T = landmark_terms(track, state, target, base);
  check_landmark(T, opts);
  const auto& obs = track.observations;

  const Mat3 RiT = T.ci.R.transpose();
  const Mat3 RbT = T.cb.R.transpose();
  const Eigen::RowVector3d gA = norm_gradient(T.u) * -skew(T.pb);  // dA/dt_ba
  const Eigen::RowVector3d gB = norm_gradient(T.w) * skew(T.pb);   // dB/drp
  const Mat3 ax = skew(T.a);

  const Eigen::Matrix<double, 2, 3> Pi = projection_jacobian(T.f);
  auto deriv = [&](const ViewId& v, const Mat3& dpsi, const Mat3& dc) {
    return CameraDerivative{v, Pi * dpsi, Pi * dc};
  };

  const CameraDerivative parts[3] = {
      deriv(obs[target].view, RiT * skew(T.y), -T.B * RiT),
      deriv(obs[base.alpha].view, RiT * (-T.A * ax - T.d * gB * RbT * ax),
            RiT * (T.a * gA * RbT + T.B * Mat3::Identity())),
      deriv(obs[base.beta].view, RiT * (T.a * gA * RbT * skew(T.e) + T.d * gB * RbT * ax),
            RiT * (-T.a * gA * RbT)),
  };

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(2, state.error_dim());
  for (const auto& p : parts) scatter(state, p, true, opts.calibrate_extrinsics, H);
  return H;
}

Eigen::MatrixXd landmark_observation_jacobian(const FeatureTrack& track, const FullState& state,
                                              std::size_t target, const BaseViewPair& base,
                                              const VisionOptions& opts) {
  const LandmarkTerms T = landmark_terms(track, state, target, base);
  check_landmark(T, opts);
  const Mat3 RiT = T.ci.R.transpose();
  const Mat3 RbT = T.cb.R.transpose();
  const Eigen::Matrix<double, 2, 3> Pi = projection_jacobian(T.f);

  // f = R_i^T (A a + B d), a = R_a p_a, A = ||t_ba x p_b||, B = ||p_b x R_b^T a||
  const Eigen::RowVector3d dB_drp = norm_gradient(T.w) * skew(T.pb);
  const Mat3 df_dpa = RiT * (T.A * T.ca.R + T.d * dB_drp * RbT * T.ca.R);
  const Eigen::RowVector3d dA_dpb = norm_gradient(T.u) * skew(T.t_ba);
  const Eigen::RowVector3d dB_dpb = norm_gradient(T.w) * -skew(T.rp);
  const Mat3 df_dpb = RiT * (T.a * dA_dpb + T.d * dB_dpb);

  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, 2 * static_cast<int>(track.observations.size()));
  J.middleCols<2>(2 * static_cast<int>(base.alpha)) += (Pi * df_dpa).leftCols<2>();
  J.middleCols<2>(2 * static_cast<int>(base.beta)) += (Pi * df_dpb).leftCols<2>();
  J.middleCols<2>(2 * static_cast<int>(target)) -= Eigen::Matrix2d::Identity();
  return J;
}

double two_view_depth(const Vec3& p_gamma, const Vec3& p_i, const Mat3& R_i_gamma,
                      const Vec3& t_i_gamma, double min_parallax) {
  const double den = p_i.cross(R_i_gamma * p_gamma).norm();
  if (den < min_parallax) throw DegeneratePair("rays are nearly parallel");
  return t_i_gamma.cross(p_i).norm() / den;
}

namespace {

// Terms of one two-view depth Z = N / D of the gamma ray against view i.
struct PairTerms {
  Camera cg, ci;
  Vec3 pg, pi;
  Vec3 a;  // R_g p_g
  Vec3 g;  // c_g - c_i
  Vec3 t;  // R_i^T g
  Vec3 n;  // t x p_i
  Vec3 rp; // R_i^T a
  Vec3 w;  // p_i x rp
  double N = 0.0, D = 0.0;
};

PairTerms pair_terms(const Camera& cg, const Vec3& pg, const Camera& ci, const Vec3& pi) {
  PairTerms P;
  P.cg = cg;
  P.ci = ci;
  P.pg = pg;
  P.pi = pi;
  P.a = cg.R * pg;
  P.g = cg.c - ci.c;
  P.t = ci.R.transpose() * P.g;
  P.n = P.t.cross(pi);
  P.rp = ci.R.transpose() * P.a;
  P.w = pi.cross(P.rp);
  P.N = P.n.norm();
  P.D = P.w.norm();
  return P;
}

struct PairDerivative {
  Eigen::RowVector3d dN_dpsi_g, dN_dc_g, dN_dpsi_i, dN_dc_i;
  Eigen::RowVector3d dD_dpsi_g, dD_dpsi_i;
};

PairDerivative pair_state_derivative(const PairTerms& P) {
  const Mat3 RiT = P.ci.R.transpose();
  const Eigen::RowVector3d gN = norm_gradient(P.n) * -skew(P.pi);  // dN/dt
  const Eigen::RowVector3d gD = norm_gradient(P.w) * skew(P.pi);   // dD/drp
  PairDerivative d;
  d.dN_dpsi_i = gN * RiT * skew(P.g);
  d.dN_dc_g = gN * RiT;
  d.dN_dc_i = -gN * RiT;
  d.dN_dpsi_g.setZero();
  d.dD_dpsi_i = gD * RiT * skew(P.a);
  d.dD_dpsi_g = -gD * RiT * skew(P.a);
  return d;
}

Camera virtual_camera(const CameraExtrinsic& e) {
  const Pose p = e.camera_pose(Pose{});
  return {p.R, p.t};
}

struct RaySetup {
  std::size_t canonical = 0;
  std::size_t right = 0;
  std::vector<std::size_t> partners;
  std::vector<PairTerms> pairs;
  PairTerms stereo;
  double sumN = 0.0, sumD = 0.0;
};

RaySetup ray_setup(const FeatureTrack& track, const FullState& state, std::size_t canonical,
                   const VisionOptions& opts, bool need_stereo) {
  const auto& obs = track.observations;
  if (canonical >= obs.size()) throw DegenerateTrack("invalid canonical view");
  RaySetup S;
  S.canonical = canonical;
  const ViewId& cv = obs[canonical].view;
  const Camera cg = camera_of(state, cv);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (obs[i].view.frame == cv.frame) continue;
    PairTerms P = pair_terms(cg, obs[canonical].ray(), camera_of(state, obs[i].view), obs[i].ray());
    if (P.D < opts.min_parallax) continue;
    S.sumN += P.N;
    S.sumD += P.D;
    S.partners.push_back(i);
    S.pairs.push_back(std::move(P));
  }
  if (S.partners.empty()) throw DegenerateTrack("no non-degenerate partner view");
  if (need_stereo) {
    if (cv.eye != Eye::Left) throw DegenerateTrack("canonical view must be a left image");
    auto r = track.find(ViewId{cv.frame, Eye::Right});
    if (!r) throw DegenerateTrack("canonical frame has no stereo mate");
    S.right = *r;
    S.stereo = pair_terms(virtual_camera(state.extrinsics.left), obs[canonical].ray(),
                          virtual_camera(state.extrinsics.right), obs[*r].ray());
    if (S.stereo.D < opts.min_parallax) throw DegenerateTrack("stereo rays nearly parallel");
  }
  return S;
}

}  // namespace

FusedDepth fused_ray_depth(const FeatureTrack& track, const FullState& state,
                           std::size_t canonical, const VisionOptions& opts) {
  const RaySetup S = ray_setup(track, state, canonical, opts, false);
  FusedDepth out;
  out.partners = S.partners;
  for (const PairTerms& P : S.pairs) {
    out.weights.push_back(P.D / S.sumD);
    out.depths.push_back(P.N / P.D);
  }
  for (std::size_t k = 0; k < out.weights.size(); ++k) out.depth += out.weights[k] * out.depths[k];
  return out;
}

double stereo_depth(const Vec3& p_left, const Vec3& p_right, const ExtrinsicState& extr,
                    double min_parallax) {
  const Mat3 R_RL = extr.right.R_CB() * extr.left.R_CB().transpose();
  const Vec3 t_RL = extr.right.p_CB - R_RL * extr.left.p_CB;
  return two_view_depth(p_left, p_right, R_RL, t_RL, min_parallax);
}

double ray_residual(const FeatureTrack& track, const FullState& state, std::size_t canonical,
                    const VisionOptions& opts) {
  const RaySetup S = ray_setup(track, state, canonical, opts, true);
  const FusedDepth fused = fused_ray_depth(track, state, canonical, opts);
  return fused.depth - S.stereo.N / S.stereo.D;
}

Eigen::RowVectorXd ray_jacobian(const FeatureTrack& track, const FullState& state,
                                std::size_t canonical, const VisionOptions& opts) {
  const RaySetup S = ray_setup(track, state, canonical, opts, true);
  const auto& obs = track.observations;
  const double F = S.sumN / S.sumD;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(1, state.error_dim());

  // Fused depth: F = sum N_k / sum D_k, so dF = (sum dN_k - F sum dD_k) / sum D_k.
  Eigen::RowVector3d g_psi = Eigen::RowVector3d::Zero(), g_c = Eigen::RowVector3d::Zero();
  for (std::size_t k = 0; k < S.partners.size(); ++k) {
    const PairDerivative d = pair_state_derivative(S.pairs[k]);
    g_psi += (d.dN_dpsi_g - F * d.dD_dpsi_g) / S.sumD;
    g_c += d.dN_dc_g / S.sumD;
    CameraDerivative part{obs[S.partners[k]].view, (d.dN_dpsi_i - F * d.dD_dpsi_i) / S.sumD,
                          d.dN_dc_i / S.sumD};
    scatter(state, part, true, opts.calibrate_extrinsics, H);
  }
  scatter(state, CameraDerivative{obs[canonical].view, g_psi, g_c}, true,
          opts.calibrate_extrinsics, H);

  // Stereo depth depends on the extrinsics only.
  if (opts.calibrate_extrinsics) {
    const PairTerms& P = S.stereo;
    const double Zs = P.N / P.D;
    const PairDerivative d = pair_state_derivative(P);
    CameraDerivative left{ViewId{obs[canonical].view.frame, Eye::Left},
                          -(d.dN_dpsi_g - Zs * d.dD_dpsi_g) / P.D, -d.dN_dc_g / P.D};
    CameraDerivative right{ViewId{obs[canonical].view.frame, Eye::Right},
                           -(d.dN_dpsi_i - Zs * d.dD_dpsi_i) / P.D, -d.dN_dc_i / P.D};
    scatter(state, left, false, true, H);
    scatter(state, right, false, true, H);
  }
  return H.row(0);
}

Eigen::RowVectorXd ray_observation_jacobian(const FeatureTrack& track, const FullState& state,
                                            std::size_t canonical, const VisionOptions& opts) {
  const RaySetup S = ray_setup(track, state, canonical, opts, true);
  const double F = S.sumN / S.sumD;
  Eigen::RowVectorXd J = Eigen::RowVectorXd::Zero(2 * static_cast<int>(track.observations.size()));
  auto add = [&J](std::size_t idx, const Eigen::RowVector3d& g) {
    J.segment<2>(2 * static_cast<int>(idx)) += g.head<2>();
  };
  for (std::size_t k = 0; k < S.partners.size(); ++k) {
    const PairTerms& P = S.pairs[k];
    const Mat3 R_ig = P.ci.R.transpose() * P.cg.R;
    const Eigen::RowVector3d dN_dpi = norm_gradient(P.n) * skew(P.t);
    const Eigen::RowVector3d dD_dpi = norm_gradient(P.w) * -skew(P.rp);
    const Eigen::RowVector3d dD_dpg = norm_gradient(P.w) * skew(P.pi) * R_ig;
    add(S.partners[k], (dN_dpi - F * dD_dpi) / S.sumD);
    add(S.canonical, -F * dD_dpg / S.sumD);
  }
  const PairTerms& P = S.stereo;
  const double Zs = P.N / P.D;
  const Mat3 R_RL = P.ci.R.transpose() * P.cg.R;
  const Eigen::RowVector3d dN_dpr = norm_gradient(P.n) * skew(P.t);
  const Eigen::RowVector3d dD_dpr = norm_gradient(P.w) * -skew(P.rp);
  const Eigen::RowVector3d dD_dpl = norm_gradient(P.w) * skew(P.pi) * R_RL;
  add(S.right, -(dN_dpr - Zs * dD_dpr) / P.D);
  add(S.canonical, Zs * dD_dpl / P.D);
  return J;
}

}  // namespace spvins
