#include <catch2/catch_amalgamated.hpp>

#include "furpe/geometry.hpp"
#include "furpe/rng.hpp"

using namespace furpe;

namespace {

// Independent rotation path: quaternion built from the axis-angle, applied
// via the quaternion sandwich product. Never touches rodrigues().
Vec3 rotate_by_quaternion(const AxisAngle& aa, const Vec3& v) {
  double angle = aa.norm();
  double w = std::cos(angle / 2.0);
  Vec3 xyz = angle < 1e-300 ? Vec3::Zero() : Vec3(aa / angle * std::sin(angle / 2.0));
  // v' = v + 2*q_w*(q_xyz x v) + 2*(q_xyz x (q_xyz x v))
  Vec3 t = 2.0 * xyz.cross(v);
  return v + w * t + xyz.cross(t);
}

Vec3 random_vec3(Rng& rng, double scale = 1.0) {
  return Vec3(rng.normal(0, scale), rng.normal(0, scale), rng.normal(0, scale));
}

Mat3 random_rotation(Rng& rng) { return rodrigues(random_vec3(rng, 1.0)); }

}  // namespace

TEST_CASE("rodrigues zero rotation is identity", "[geometry]") {
  REQUIRE((rodrigues(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("rodrigues half turn about x", "[geometry]") {
  Mat3 r = rodrigues(Vec3(M_PI, 0, 0));
  Mat3 expected;
  expected << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  REQUIRE((r - expected).norm() < 1e-12);
}

TEST_CASE("rodrigues agrees with quaternion oracle and preserves norms", "[geometry]") {
  AxisAngle aa(0.3, -0.2, 0.1);
  Mat3 r = rodrigues(aa);
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    Vec3 v = random_vec3(rng);
    Vec3 by_matrix = r * v;
    Vec3 by_quat = rotate_by_quaternion(aa, v);
    REQUIRE((by_matrix - by_quat).norm() < 1e-12);
    REQUIRE(std::abs(by_matrix.norm() - v.norm()) < 1e-12);
  }
}

TEST_CASE("rodrigues output is orthonormal with unit determinant", "[geometry]") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    double scale = i % 3 == 0 ? 1e-7 : (i % 3 == 1 ? 0.5 : 4.0);
    Mat3 r = rodrigues(random_vec3(rng, scale));
    REQUIRE((r.transpose() * r - Mat3::Identity()).norm() < 1e-9);
    REQUIRE(std::abs(r.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("rodrigues rejects non-finite input", "[geometry]") {
  double nan = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(rodrigues(Vec3(nan, 0, 0)), std::invalid_argument);
  double inf = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(rodrigues(Vec3(0, inf, 0)), std::invalid_argument);
}

TEST_CASE("rodrigues jacobian matches finite differences", "[geometry]") {
  Rng rng(13);
  const double h = 1e-6;
  std::vector<AxisAngle> probes = {Vec3::Zero(), Vec3(1e-5, 0, 0),
                                   Vec3(0.001, -0.002, 0.0005)};
  for (int i = 0; i < 20; ++i) probes.push_back(random_vec3(rng));
  for (const auto& aa : probes) {
    auto jac = rodrigues_jacobian(aa);
    for (int c = 0; c < 3; ++c) {
      AxisAngle ap = aa, am = aa;
      ap[c] += h;
      am[c] -= h;
      Mat3 fd = (rodrigues(ap) - rodrigues(am)) / (2.0 * h);
      REQUIRE((jac[c] - fd).norm() < 1e-6);
    }
  }
}

TEST_CASE("rotation_log inverts rodrigues below pi", "[geometry]") {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    Vec3 axis = random_vec3(rng).normalized();
    double angle = rng.uniform(1e-6, M_PI - 1e-3);
    AxisAngle aa = axis * angle;
    AxisAngle rec = rotation_log(rodrigues(aa));
    REQUIRE((rec - aa).norm() < 1e-8);
  }
  // Near-half-turn branch.
  Vec3 axis = Vec3(0.3, -0.5, 0.81).normalized();
  AxisAngle aa = axis * (M_PI - 1e-9);
  Mat3 r = rodrigues(aa);
  REQUIRE((rodrigues(rotation_log(r)) - r).norm() < 1e-6);
}

TEST_CASE("canonicalize wraps magnitude into [0, 2pi)", "[geometry]") {
  Vec3 axis = Vec3(1, 2, -1).normalized();
  AxisAngle big = axis * (2.0 * M_PI + 0.5);
  AxisAngle c = canonicalize(big);
  REQUIRE(c.norm() < 2.0 * M_PI);
  REQUIRE(std::abs(c.norm() - 0.5) < 1e-12);
  REQUIRE((c.normalized() - axis).norm() < 1e-12);
  AxisAngle small(0.1, 0.2, 0.3);
  REQUIRE((canonicalize(small) - small).norm() == 0.0);
}

TEST_CASE("project optical axis and similar triangles", "[geometry]") {
  Camera cam;
  cam.focal_length = 1000.0;
  cam.principal_point = Vec2(500, 500);
  cam.subject_depth = 2.0;
  REQUIRE((project_point(Vec3(0, 0, 0), cam) - Vec2(500, 500)).norm() == 0.0);
  REQUIRE((project_point(Vec3(0.1, 0, 0), cam) - Vec2(550, 500)).norm() < 1e-12);
}

TEST_CASE("project batch matches a scalar loop", "[geometry]") {
  Camera cam;
  Rng rng(19);
  std::vector<Vec3> pts;
  for (int i = 0; i < 12; ++i) pts.push_back(random_vec3(rng, 0.3));
  auto batch = project(pts, cam);
  for (size_t i = 0; i < pts.size(); ++i) {
    double u = cam.focal_length * pts[i].x() / (pts[i].z() + cam.subject_depth) +
               cam.principal_point.x();
    double v = cam.focal_length * pts[i].y() / (pts[i].z() + cam.subject_depth) +
               cam.principal_point.y();
    REQUIRE(batch[i].x() == u);
    REQUIRE(batch[i].y() == v);
  }
}

TEST_CASE("project is invariant to positive scaling of the camera-frame ray",
          "[geometry]") {
  Camera cam;
  Rng rng(23);
  for (int i = 0; i < 50; ++i) {
    Vec3 p = random_vec3(rng, 0.4);
    double z = p.z() + cam.subject_depth;
    Vec2 pix = project_point(p, cam);
    double lambda = rng.uniform(0.2, 3.0);
    // Scale the full camera-frame point (x, y, z'), then shift back.
    Vec3 scaled(lambda * p.x(), lambda * p.y(), lambda * z - cam.subject_depth);
    REQUIRE((project_point(scaled, cam) - pix).norm() < 1e-9);
  }
}

TEST_CASE("project rejects points behind the camera", "[geometry]") {
  Camera cam;
  REQUIRE_THROWS_AS(project_point(Vec3(0, 0, -cam.subject_depth), cam), NumericError);
  REQUIRE_THROWS_AS(project_point(Vec3(0, 0, -cam.subject_depth - 1.0), cam), NumericError);
}

TEST_CASE("project jacobian matches finite differences", "[geometry]") {
  Camera cam;
  Rng rng(29);
  const double h = 1e-7;
  for (int i = 0; i < 20; ++i) {
    Vec3 p = random_vec3(rng, 0.4);
    auto jac = project_jacobian(p, cam);
    for (int c = 0; c < 3; ++c) {
      Vec3 pp = p, pm = p;
      pp[c] += h;
      pm[c] -= h;
      Vec2 fd = (project_point(pp, cam) - project_point(pm, cam)) / (2.0 * h);
      REQUIRE((jac.col(c) - fd).norm() < 1e-4);
    }
  }
}

TEST_CASE("umeyama identity when target equals source", "[geometry]") {
  Rng rng(31);
  MatX src(10, 3);
  for (int i = 0; i < 10; ++i) src.row(i) = random_vec3(rng).transpose();
  SimilarityTransform t = umeyama_align(src, src, true);
  REQUIRE((t.rotation - Mat3::Identity()).norm() < 1e-10);
  REQUIRE(std::abs(t.scale - 1.0) < 1e-10);
  REQUIRE(t.translation.norm() < 1e-10);
}

TEST_CASE("umeyama recovers a constructed similarity transform", "[geometry]") {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    Mat3 r0 = random_rotation(rng);
    Vec3 t0 = random_vec3(rng, 2.0);
    double s0 = 2.0;
    MatX src(8, 3);
    for (int i = 0; i < 8; ++i) src.row(i) = random_vec3(rng).transpose();
    MatX tgt = s0 * (src * r0.transpose());
    tgt.rowwise() += t0.transpose();
    SimilarityTransform t = umeyama_align(src, tgt, true);
    REQUIRE(std::abs(t.scale - s0) < 1e-8);
    REQUIRE((t.rotation - r0).norm() < 1e-8);
    REQUIRE((t.translation - t0).norm() < 1e-8);
  }
}

TEST_CASE("umeyama with_scale=false pins scale at one", "[geometry]") {
  Rng rng(41);
  MatX src(6, 3);
  for (int i = 0; i < 6; ++i) src.row(i) = random_vec3(rng).transpose();
  MatX tgt = 2.0 * src;
  SimilarityTransform t = umeyama_align(src, tgt, false);
  REQUIRE(t.scale == 1.0);
  double residual = (t.apply(src) - tgt).norm();
  REQUIRE(residual > 0.1);
}

TEST_CASE("umeyama rejects degenerate input", "[geometry]") {
  MatX two(2, 3);
  two << 0, 0, 0, 1, 0, 0;
  REQUIRE_THROWS_AS(umeyama_align(two, two, true), NumericError);
  MatX collinear(5, 3);
  for (int i = 0; i < 5; ++i) collinear.row(i) = Vec3(i, 2.0 * i, -i).transpose();
  REQUIRE_THROWS_AS(umeyama_align(collinear, collinear, true), NumericError);
}

TEST_CASE("umeyama beats 1000 random similarity transforms", "[geometry]") {
  Rng rng(43);
  MatX src(12, 3), tgt(12, 3);
  for (int i = 0; i < 12; ++i) {
    src.row(i) = random_vec3(rng).transpose();
    tgt.row(i) = random_vec3(rng).transpose();
  }
  SimilarityTransform best = umeyama_align(src, tgt, true);
  double best_res = (best.apply(src) - tgt).squaredNorm();
  for (int i = 0; i < 1000; ++i) {
    SimilarityTransform t;
    t.rotation = random_rotation(rng);
    t.scale = rng.uniform(0.1, 3.0);
    t.translation = random_vec3(rng);
    REQUIRE((t.apply(src) - tgt).squaredNorm() >= best_res - 1e-12);
  }
}
