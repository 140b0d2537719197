#include <doctest.h>

#include <cmath>
#include <numbers>

#include "spvins/geometry.hpp"
#include "test_support.hpp"

using namespace spvins;
using spvins::test::randn3;
using spvins::test::Rng;

TEST_CASE("skew matches the cross product") {
  CHECK(skew(Vec3::Zero()).norm() == 0.0);
  CHECK((skew(Vec3::UnitZ()) * Vec3::UnitX() - Vec3::UnitY()).norm() == 0.0);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 v = randn3(rng), w = randn3(rng);
    CHECK((skew(v) * w - v.cross(w)).norm() < 1e-14);
    CHECK((skew(v) * w + skew(w) * v).norm() < 1e-14);
    CHECK((skew(v) + skew(v).transpose()).norm() == 0.0);
  }
}

TEST_CASE("exp and log round trip") {
  CHECK((exp_so3(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);
  const Mat3 Rx = exp_so3(Vec3(std::numbers::pi / 2, 0, 0));
  Mat3 expect;
  expect << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  CHECK((Rx - expect).norm() < 1e-15);

  Rng rng(2);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Vec3 phi = randn3(rng);
    phi *= test::uniform(rng, 0.0, 3.0) / phi.norm();
    worst = std::max(worst, (log_so3(exp_so3(phi)) - phi).norm());
    const Mat3 R = exp_so3(phi);
    worst = std::max(worst, (exp_so3(log_so3(R)) - R).norm());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("log near pi") {
  for (double eps : {1e-3, 1e-6, 1e-9, 0.0}) {
    const Vec3 axis = Vec3(1, -2, 0.5).normalized();
    const Vec3 phi = (std::numbers::pi - eps) * axis;
    const Mat3 R = exp_so3(phi);
    CHECK((exp_so3(log_so3(R)) - R).norm() < 1e-9);
  }
}

TEST_CASE("exp against the Rodrigues closed form") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vec3 phi = randn3(rng);
    const double th = phi.norm();
    const Mat3 K = skew(phi / th);
    const Mat3 rod = Mat3::Identity() + std::sin(th) * K + (1 - std::cos(th)) * K * K;
    CHECK((exp_so3(phi) - rod).norm() < 1e-13);
  }
}

TEST_CASE("quaternion error retraction") {
  CHECK(apply_quat_error(Vec3::Zero(), Quat::Identity()).coeffs() == Quat::Identity().coeffs());

  // Small angle against the closed-form exponential.
  const Vec3 phi(1e-3, 0, 0);
  const Quat q = apply_quat_error(phi, Quat::Identity());
  CHECK(std::abs(q.w() - std::cos(0.5e-3)) < 1e-12);
  CHECK(std::abs(q.x() - std::sin(0.5e-3)) < 1e-12);
  const Quat first_order = Quat(1.0, 0.5e-3, 0, 0).normalized();
  CHECK((q.coeffs() - first_order.coeffs()).norm() < 1e-7);

  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Quat qe = test::random_quat(rng);
    const Vec3 d = randn3(rng, 0.2);
    const Quat qt = apply_quat_error(d, qe);
    CHECK(std::abs(qt.norm() - 1.0) < 1e-12);
    CHECK(qt.w() >= 0.0);
    CHECK((extract_quat_error(qt, qe) - d).norm() < 1e-12);
    // Matrix and quaternion retractions agree.
    CHECK((apply_rot_error(d, qe.toRotationMatrix()) - qt.toRotationMatrix()).norm() < 1e-9);
  }
}

TEST_CASE("rotation retraction stays on SO(3) and is first-order consistent") {
  Rng rng(5);
  const Mat3 Re = test::random_quat(rng).toRotationMatrix();
  Vec3 phi = randn3(rng);
  phi *= 0.3 / phi.norm();
  const Mat3 R = apply_rot_error(phi, Re);
  CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-10);
  CHECK(std::abs(R.determinant() - 1.0) < 1e-10);
  CHECK((apply_rot_error(Vec3::Zero(), Re) - Re).norm() == 0.0);

  // R_est = (I - [phi x]) R up to second order: error ratio shrinks quadratically.
  const Vec3 dir = randn3(rng).normalized();
  double prev = 0.0;
  for (double s : {1e-2, 1e-3}) {
    const Mat3 Rt = apply_rot_error(s * dir, Re);
    const double err = (Re - (Mat3::Identity() - skew(s * dir)) * Rt).norm();
    if (prev > 0.0) CHECK(err / prev < 0.02);
    prev = err;
  }
}

TEST_CASE("transformed velocity and position errors") {
  const Vec3 z = Vec3::Zero();
  auto st = st_error_from_standard(z, z, z, Vec3(1, 2, 3), Vec3(4, 5, 6));
  CHECK(st.dv.norm() == 0.0);
  CHECK(st.dp.norm() == 0.0);

  const Vec3 dv(0.1, -0.2, 0.3), dp(1, 2, -3);
  st = st_error_from_standard(dv, dp, z, Vec3(1, 2, 3), Vec3(4, 5, 6));
  CHECK((st.dv + dv).norm() == 0.0);
  CHECK((st.dp + dp).norm() == 0.0);

  // v = e1, phi = e3: [e1 x] e3 = e1 x e3 = -e2.
  st = st_error_from_standard(z, z, Vec3::UnitZ(), Vec3::UnitX(), z);
  CHECK((st.dv - Vec3(0, -1, 0)).norm() < 1e-15);

  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const Vec3 a = randn3(rng), b = randn3(rng), phi = randn3(rng), v = randn3(rng), p = randn3(rng);
    const StError s = st_error_from_standard(a, b, phi, v, p);
    const StError back = st_error_to_standard(s.dv, s.dp, phi, v, p);
    CHECK((back.dv - a).norm() < 1e-13);
    CHECK((back.dp - b).norm() < 1e-13);
    // Linearity in (dv, dp, phi).
    const StError s2 = st_error_from_standard(2 * a, 2 * b, 2 * phi, v, p);
    CHECK((s2.dv - 2 * s.dv).norm() < 1e-13);
    CHECK((s2.dp - 2 * s.dp).norm() < 1e-13);
  }
}

TEST_CASE("transformed error is the first-order right-invariant error") {
  // xi_v = v_true - Exp(phi) v_est with v_est = v_true + dv (estimate-minus-truth).
  Rng rng(7);
  const Vec3 v = randn3(rng, 3.0);
  const Vec3 dir_phi = randn3(rng), dir_v = randn3(rng);
  for (double s : {1e-3, 1e-4}) {
    const Vec3 phi = s * dir_phi, dv = s * dir_v;
    const Vec3 v_est = v + dv;
    const Vec3 exact = v - exp_so3(phi) * v_est;
    const StError st = st_error_from_standard(dv, dv, phi, v_est, v_est);
    CHECK((exact - st.dv).norm() < 10 * s * s * (1 + v.norm()));
  }
}
