#include <catch2/catch_amalgamated.hpp>
#include <cstring>

#include "furpe/body_model.hpp"
#include "furpe/rng.hpp"

using namespace furpe;

namespace {

FullBodyParams random_params(const ModelDims& dims, Rng& rng, double scale = 0.3) {
  FullBodyParams p = FullBodyParams::zero(dims);
  auto raa = [&]() { return AxisAngle(rng.normal(0, scale), rng.normal(0, scale), rng.normal(0, scale)); };
  for (auto& aa : p.body.pose) aa = raa();
  for (int i = 0; i < p.body.shape.size(); ++i) p.body.shape[i] = rng.normal(0, scale);
  p.face.jaw_pose = raa();
  for (auto& aa : p.face.other_poses) aa = raa();
  for (int i = 0; i < p.face.expression.size(); ++i) p.face.expression[i] = rng.normal(0, scale);
  for (auto* h : {&p.left_hand, &p.right_hand}) {
    for (auto& aa : h->pose) aa = raa();
    for (int i = 0; i < h->shape.size(); ++i) h->shape[i] = rng.normal(0, scale);
  }
  p.root_translation = Vec3(rng.normal(0, 0.1), rng.normal(0, 0.1), rng.normal(0, 0.1));
  return p;
}

// Independent FK oracle: per-joint recursion that recomputes the ancestor
// chain from scratch, plus the marker blend written out longhand.
struct FkOracle {
  const SkeletonTemplate& tpl;
  const FullBodyParams& params;
  VecX beta;
  std::vector<AxisAngle> pose;

  FkOracle(const SkeletonTemplate& t, const FullBodyParams& p) : tpl(t), params(p) {
    beta.resize(t.dims.shape_total());
    beta << p.body.shape, p.left_hand.shape, p.right_hand.shape;
    pose = furpe::detail::skeleton_pose(p, t.dims);
  }

  Vec3 offset(int j) const { return tpl.rest_offset[j] + tpl.shape_basis[j] * beta; }

  Mat3 global_rot(int j) const {
    Mat3 r = rodrigues(pose[j]);
    return tpl.parent[j] < 0 ? r : Mat3(global_rot(tpl.parent[j]) * r);
  }

  Vec3 position(int j) const {
    if (tpl.parent[j] < 0) return params.root_translation + offset(j);
    return position(tpl.parent[j]) + global_rot(tpl.parent[j]) * offset(j);
  }

  Vec3 rest_with_shape(int j) const {
    return tpl.parent[j] < 0 ? offset(j) : Vec3(rest_with_shape(tpl.parent[j]) + offset(j));
  }

  Vec3 rest_zero(int j) const {
    return tpl.parent[j] < 0 ? tpl.rest_offset[j]
                             : Vec3(rest_zero(tpl.parent[j]) + tpl.rest_offset[j]);
  }

  Vec3 marker(int m) const {
    const Marker& mk = tpl.markers[m];
    Vec3 x = mk.rest_position;
    for (int k = 0; k < mk.attach_count; ++k) {
      x += mk.weights[k] * (rest_with_shape(mk.joints[k]) - rest_zero(mk.joints[k]));
    }
    if (mk.part == PartClass::Face) {
      x += tpl.expression_basis[m - tpl.face_marker_begin()] * params.face.expression;
    }
    Vec3 w = Vec3::Zero();
    for (int k = 0; k < mk.attach_count; ++k) {
      int j = mk.joints[k];
      w += mk.weights[k] * (global_rot(j) * (x - rest_with_shape(j)) + position(j));
    }
    return w;
  }
};

bool bit_equal(const VecX& a, const VecX& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_CASE("dims presets and packed layout", "[body_model]") {
  ModelDims paper = ModelDims::paper();
  REQUIRE(paper.body_joints == 24);
  REQUIRE(paper.body_shape == 10);
  REQUIRE(paper.face_joints == 4);
  REQUIRE(paper.expression_dims == 100);
  REQUIRE(paper.hand_joints == 21);
  REQUIRE(paper.hand_shape == 10);
  REQUIRE(paper.param_count() ==
          3 * 24 + 10 + 3 * 4 + 100 + 2 * (3 * 21 + 10) + 3);

  ModelDims toy = ModelDims::toy();
  REQUIRE(toy.body_joints == 12);
  REQUIRE(toy.body_shape == 4);
  REQUIRE(toy.face_joints == 2);
  REQUIRE(toy.expression_dims == 6);
  REQUIRE(toy.hand_joints == 5);
  REQUIRE(toy.hand_shape == 2);
}

TEST_CASE("template invariants hold for presets and custom dims", "[body_model]") {
  for (const ModelDims& dims : {ModelDims::toy(), ModelDims::paper()}) {
    SkeletonTemplate tpl = make_template(dims, 42);
    REQUIRE(tpl.joint_count() == dims.skeleton_joints());
    for (int i = 1; i < tpl.joint_count(); ++i) REQUIRE(tpl.parent[i] < i);
  }
  ModelDims custom = ModelDims::toy();
  custom.body_joints = 9;
  SkeletonTemplate tpl = make_template(custom, 1);
  REQUIRE(tpl.joint_count() == custom.skeleton_joints());
}

TEST_CASE("rest pose joints sit at cumulative rest offsets", "[body_model]") {
  ModelDims dims = ModelDims::toy();
  SkeletonTemplate tpl = make_template(dims, 5);
  FkResult fk = forward_kinematics(FullBodyParams::zero(dims), tpl);
  for (int j = 0; j < tpl.joint_count(); ++j) {
    Vec3 expected = Vec3::Zero();
    for (int a = j; a >= 0; a = tpl.parent[a]) expected += tpl.rest_offset[a];
    REQUIRE((fk.joints[j] - expected).norm() < 1e-14);
  }
}

TEST_CASE("global root rotation rotates every joint and marker", "[body_model]") {
  ModelDims dims = ModelDims::toy();
  SkeletonTemplate tpl = make_template(dims, 5);
  FkResult rest = forward_kinematics(FullBodyParams::zero(dims), tpl);

  FullBodyParams p = FullBodyParams::zero(dims);
  p.body.pose[0] = AxisAngle(0.4, -0.8, 0.3);
  Mat3 r = rodrigues(p.body.pose[0]);
  FkResult fk = forward_kinematics(p, tpl);
  for (size_t j = 0; j < fk.joints.size(); ++j) {
    REQUIRE((fk.joints[j] - r * rest.joints[j]).norm() < 1e-12);
  }
  for (size_t m = 0; m < fk.markers.size(); ++m) {
    REQUIRE((fk.markers[m] - r * rest.markers[m]).norm() < 1e-12);
  }
}

TEST_CASE("fk is equivariant under global rotation and translation", "[body_model]") {
  ModelDims dims = ModelDims::toy();
  SkeletonTemplate tpl = make_template(dims, 9);
  Rng rng(101);
  for (int trial = 0; trial < 5; ++trial) {
    FullBodyParams p = random_params(dims, rng);
    FkResult base = forward_kinematics(p, tpl);

    AxisAngle raa(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
    Mat3 r = rodrigues(raa);
    Vec3 shift(rng.normal(0, 0.5), rng.normal(0, 0.5), rng.normal(0, 0.5));
    FullBodyParams moved = p;
    moved.body.pose[0] = rotation_log(r * rodrigues(p.body.pose[0]));
    moved.root_translation = r * p.root_translation + shift;
    FkResult fk = forward_kinematics(moved, tpl);
    for (size_t j = 0; j < fk.joints.size(); ++j) {
      REQUIRE((fk.joints[j] - (r * base.joints[j] + shift)).norm() < 1e-10);
    }
    for (size_t m = 0; m < fk.markers.size(); ++m) {
      REQUIRE((fk.markers[m] - (r * base.markers[m] + shift)).norm() < 1e-10);
    }
  }
}

TEST_CASE("fk matches the recursive oracle", "[body_model]") {
  Rng rng(55);
  for (const ModelDims& dims : {ModelDims::toy(), ModelDims::paper()}) {
    SkeletonTemplate tpl = make_template(dims, 77);
    for (int trial = 0; trial < 3; ++trial) {
      FullBodyParams p = random_params(dims, rng);
      FkResult fk = forward_kinematics(p, tpl);
      FkOracle oracle(tpl, p);
      for (int j = 0; j < tpl.joint_count(); ++j) {
        REQUIRE((fk.joints[j] - oracle.position(j)).norm() < 1e-10);
      }
      for (size_t m = 0; m < tpl.markers.size(); ++m) {
        REQUIRE((fk.markers[m] - oracle.marker(m)).norm() < 1e-10);
      }
    }
  }
}

TEST_CASE("split and merge are bit-exact inverses", "[body_model]") {
  ModelDims dims = ModelDims::toy();
  Rng rng(66);
  for (int i = 0; i < 10000; ++i) {
    FullBodyParams p = i == 0 ? FullBodyParams::zero(dims) : random_params(dims, rng);
    auto [body, face, lh, rh] = split(p);
    FullBodyParams back = merge(body, face, lh, rh, p.root_translation);
    REQUIRE(bit_equal(back.pack(dims), p.pack(dims)));
  }
}

TEST_CASE("split of rest pose gives all-zero sub-params", "[body_model]") {
  ModelDims dims = ModelDims::toy();
  auto [body, face, lh, rh] = split(FullBodyParams::zero(dims));
  for (const auto& aa : body.pose) REQUIRE(aa.norm() == 0.0);
  REQUIRE(body.shape.norm() == 0.0);
  REQUIRE(face.jaw_pose.norm() == 0.0);
  REQUIRE(face.expression.norm() == 0.0);
  for (const auto& aa : lh.pose) REQUIRE(aa.norm() == 0.0);
  REQUIRE(rh.shape.norm() == 0.0);
}

TEST_CASE("merge rejects two hands on the same side", "[body_model]") {
  ModelDims dims = ModelDims::toy();
  FullBodyParams p = FullBodyParams::zero(dims);
  HandParams wrong = p.right_hand;
  wrong.side = Side::Left;
  REQUIRE_THROWS_AS(merge(p.body, p.face, p.left_hand, wrong, Vec3::Zero()),
                    std::invalid_argument);
}

TEST_CASE("merging parts from two subjects still drives fk", "[body_model]") {
  ModelDims dims = ModelDims::toy();
  SkeletonTemplate tpl = make_template(dims, 3);
  Rng rng(77);
  for (int i = 0; i < 50; ++i) {
    FullBodyParams a = random_params(dims, rng);
    FullBodyParams b = random_params(dims, rng);
    FullBodyParams mixed = merge(a.body, b.face, b.left_hand, a.right_hand,
                                 a.root_translation);
    FkResult fk = forward_kinematics(mixed, tpl);
    for (const auto& j : fk.joints) REQUIRE(j.allFinite());
    for (const auto& m : fk.markers) REQUIRE(m.allFinite());
  }
}

TEST_CASE("zero expression makes face markers basis-independent", "[body_model]") {
  ModelDims dims = ModelDims::toy();
  SkeletonTemplate a = make_template(dims, 5);
  SkeletonTemplate b = a;
  Rng rng(88);
  for (auto& m : b.expression_basis) {
    for (int c = 0; c < m.cols(); ++c) {
      for (int r = 0; r < 3; ++r) m(r, c) = 0.01 * rng.normal();
    }
  }
  FullBodyParams p = random_params(dims, rng);
  p.face.expression.setZero();
  FkResult fa = forward_kinematics(p, a);
  FkResult fb = forward_kinematics(p, b);
  for (size_t m = 0; m < fa.markers.size(); ++m) {
    REQUIRE((fa.markers[m] - fb.markers[m]).norm() == 0.0);
  }
  // With nonzero expression the bases must matter.
  p.face.expression.setConstant(1.0);
  fa = forward_kinematics(p, a);
  fb = forward_kinematics(p, b);
  double diff = 0;
  for (int m = a.face_marker_begin(); m < a.lhand_marker_begin(); ++m) {
    diff += (fa.markers[m] - fb.markers[m]).norm();
  }
  REQUIRE(diff > 1e-6);
}

TEST_CASE("perturbing a leaf joint leaves its ancestors fixed", "[body_model]") {
  ModelDims dims = ModelDims::toy();
  SkeletonTemplate tpl = make_template(dims, 5);
  Rng rng(99);
  FullBodyParams p = random_params(dims, rng);
  FkResult base = forward_kinematics(p, tpl);

  // Perturb the last left-hand joint: a leaf of the left-hand subtree.
  FullBodyParams q = p;
  int leaf = dims.hand_joints - 1;
  q.left_hand.pose[leaf] += AxisAngle(0.5, -0.2, 0.1);
  FkResult moved = forward_kinematics(q, tpl);
  int leaf_skel = dims.lhand_joint_begin() + leaf;
  for (int j = 0; j < tpl.joint_count(); ++j) {
    bool descendant = false;
    for (int a = j; a >= 0; a = tpl.parent[a]) {
      if (a == leaf_skel) { descendant = true; break; }
    }
    // Joint positions depend on pose only through joints strictly above
    // them, so even the perturbed joint's own position is unchanged.
    if (!descendant || j == leaf_skel) {
      REQUIRE((moved.joints[j] - base.joints[j]).norm() == 0.0);
    }
  }
}

TEST_CASE("pack/unpack round-trips and validates size", "[body_model]") {
  ModelDims dims = ModelDims::paper();
  Rng rng(111);
  FullBodyParams p = random_params(dims, rng);
  VecX v = p.pack(dims);
  REQUIRE(v.size() == dims.param_count());
  FullBodyParams q = FullBodyParams::unpack(v, dims);
  REQUIRE(bit_equal(q.pack(dims), v));
  REQUIRE_THROWS_AS(FullBodyParams::unpack(VecX::Zero(3), dims), ConfigError);
}

TEST_CASE("fk_backward matches central finite differences", "[body_model]") {
  Rng rng(123);
  const double h = 1e-5;
  int states = 0;
  for (const ModelDims& dims : {ModelDims::toy(), ModelDims::paper()}) {
    SkeletonTemplate tpl = make_template(dims, 21);
    int trials = dims.body_joints == 12 ? 18 : 3;
    for (int trial = 0; trial < trials; ++trial, ++states) {
      FullBodyParams p = random_params(dims, rng);
      std::vector<Vec3> qbar(tpl.joint_count()), mbar(tpl.markers.size());
      for (auto& v : qbar) v = Vec3(rng.normal(), rng.normal(), rng.normal());
      for (auto& v : mbar) v = Vec3(rng.normal(), rng.normal(), rng.normal());

      FkCache cache;
      forward_kinematics(p, tpl, &cache);
      VecX analytic = fk_backward(cache, tpl, qbar, mbar);

      auto loss = [&](const VecX& packed) {
        FkResult fk = forward_kinematics(FullBodyParams::unpack(packed, dims), tpl);
        double s = 0;
        for (int j = 0; j < tpl.joint_count(); ++j) s += qbar[j].dot(fk.joints[j]);
        for (size_t m = 0; m < tpl.markers.size(); ++m) s += mbar[m].dot(fk.markers[m]);
        return s;
      };
      VecX x0 = p.pack(dims);
      VecX fd(x0.size());
      VecX xp = x0;
      for (long i = 0; i < x0.size(); ++i) {
        double orig = xp[i];
        xp[i] = orig + h;
        double fp = loss(xp);
        xp[i] = orig - h;
        double fm = loss(xp);
        xp[i] = orig;
        fd[i] = (fp - fm) / (2.0 * h);
      }
      double rel = (analytic - fd).norm() / std::max(fd.norm(), 1e-12);
      REQUIRE(rel < 1e-4);
    }
  }
  REQUIRE(states >= 20);
}
