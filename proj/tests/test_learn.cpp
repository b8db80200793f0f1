#include <catch2/catch_amalgamated.hpp>
#include <cstring>

#include "furpe/learn.hpp"
#include "furpe/pipeline.hpp"

using namespace furpe;

namespace {

// Small custom model for end-to-end gradient checks.
ModelDims tiny_dims() {
  ModelDims d;
  d.body_joints = 4;
  d.body_shape = 2;
  d.face_joints = 1;
  d.expression_dims = 2;
  d.hand_joints = 1;
  d.hand_shape = 1;
  d.body_markers = 3;
  d.face_markers = 3;
  d.hand_markers = 1;
  return d;
}

NetConfig tiny_net(const ModelDims& dims) {
  return NetConfig::for_model(dims, FeatureDims{6, 5, 5}, {8, 8}, 4);
}

VecX random_vec(long n, Rng& rng, double scale = 1.0) {
  VecX v(n);
  for (long i = 0; i < n; ++i) v[i] = rng.normal(0, scale);
  return v;
}

double norm_rel_error(const VecX& a, const VecX& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

// A curated sample whose observations sit a fixed, kink-safe distance away
// from the prediction's reprojection (the 2D loss is L1).
CuratedSample make_sample(const SkeletonTemplate& tpl, uint64_t seed,
                          const FeatureDims& fdims) {
  Rng rng(seed);
  Scene scene = generate_scene(seed, tpl.dims, 0.2);
  CuratedSample s;
  s.subject_id = 0;
  s.scene_seed = seed;
  s.camera = scene.camera;
  s.fused = scene.truth;
  FkResult fk = forward_kinematics(scene.truth, tpl);
  for (size_t m = 0; m < tpl.markers.size(); ++m) {
    KeypointObservation kp;
    kp.part = tpl.markers[m].part;
    kp.side = tpl.markers[m].side;
    kp.position = project_point(fk.markers[m], scene.camera) +
                  Vec2(6.0 + 4.0 * rng.uniform(), -6.0 - 4.0 * rng.uniform());
    kp.confidence = 0.5 + 0.5 * rng.uniform();
    s.keypoints.push_back(kp);
  }
  s.feature_body = random_vec(fdims.body, rng);
  s.feature_face = random_vec(fdims.face, rng);
  s.feature_lhand = random_vec(fdims.hand, rng);
  s.feature_rhand = random_vec(fdims.hand, rng);
  return s;
}

}  // namespace

TEST_CASE("zero weights produce zero outputs", "[learn]") {
  ModelDims dims = ModelDims::toy();
  NetConfig net = NetConfig::for_model(dims, FeatureDims::toy());
  ModelState state = ModelState::zero(net);
  Rng rng(1);
  VecX input = random_vec(net.input_dim, rng);
  ForwardResult out = forward(state, input, dims);
  REQUIRE(out.param_vector.norm() == 0.0);
  for (int p = 0; p < 3; ++p) REQUIRE(out.feature[p].norm() == 0.0);
}

TEST_CASE("forward is deterministic for fixed seed and input", "[learn]") {
  ModelDims dims = ModelDims::toy();
  NetConfig net = NetConfig::for_model(dims, FeatureDims::toy());
  ModelState a = ModelState::random_init(net, 9);
  ModelState b = ModelState::random_init(net, 9);
  REQUIRE(std::memcmp(a.params.data(), b.params.data(),
                      sizeof(double) * a.params.size()) == 0);
  Rng rng(2);
  VecX input = random_vec(net.input_dim, rng);
  VecX o1 = forward(a, input, dims).param_vector;
  VecX o2 = forward(b, input, dims).param_vector;
  REQUIRE(std::memcmp(o1.data(), o2.data(), sizeof(double) * o1.size()) == 0);
}

TEST_CASE("forward output dims track the model configuration", "[learn]") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ModelDims dims;
    dims.body_joints = 4 + static_cast<int>(rng.below(8));
    dims.body_shape = 1 + static_cast<int>(rng.below(4));
    dims.face_joints = 1 + static_cast<int>(rng.below(3));
    dims.expression_dims = 1 + static_cast<int>(rng.below(6));
    dims.hand_joints = 1 + static_cast<int>(rng.below(5));
    dims.hand_shape = 1 + static_cast<int>(rng.below(3));
    dims.body_markers = 1 + static_cast<int>(rng.below(6));
    dims.face_markers = 1 + static_cast<int>(rng.below(6));
    dims.hand_markers = 1 + static_cast<int>(rng.below(3));
    FeatureDims fd{2 + static_cast<int>(rng.below(20)), 2 + static_cast<int>(rng.below(10)),
                   2 + static_cast<int>(rng.below(10))};
    NetConfig net = NetConfig::for_model(dims, fd, {6}, 3);
    ModelState state = ModelState::random_init(net, trial);
    VecX input = random_vec(net.input_dim, rng);
    ForwardResult out = forward(state, input, dims);
    REQUIRE(out.param_vector.size() == dims.param_count());
    REQUIRE(out.feature[0].size() == fd.body);
    REQUIRE(out.feature[1].size() == fd.face);
    REQUIRE(out.feature[2].size() == fd.hand);
  }
}

TEST_CASE("forward rejects mismatched input length", "[learn]") {
  ModelDims dims = ModelDims::toy();
  NetConfig net = NetConfig::for_model(dims, FeatureDims::toy());
  ModelState state = ModelState::zero(net);
  REQUIRE_THROWS_AS(forward(state, VecX::Zero(net.input_dim + 1), dims), ConfigError);
}

TEST_CASE("flatten/unflatten is the identity", "[learn]") {
  NetConfig net = tiny_net(tiny_dims());
  ModelState state = ModelState::random_init(net, 4);
  VecX flat = state.flatten();
  ModelState other = ModelState::zero(net);
  other.unflatten(flat);
  REQUIRE(std::memcmp(other.params.data(), state.params.data(),
                      sizeof(double) * flat.size()) == 0);
  REQUIRE_THROWS_AS(state.unflatten(VecX::Zero(3)), ConfigError);
}

TEST_CASE("loss_pose values and gradient", "[learn]") {
  VecX a = VecX::Zero(4), b = VecX::Zero(4);
  REQUIRE(loss_pose(a, b).value == 0.0);
  VecX c(2), d(2);
  c << 1, 2;
  d << 0, 0;
  REQUIRE(loss_pose(c, d).value == 5.0);
  REQUIRE((loss_pose(c, d).grad - 2.0 * c).norm() == 0.0);
  REQUIRE_THROWS_AS(loss_pose(VecX::Zero(3), VecX::Zero(4)), std::invalid_argument);

  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    VecX x = random_vec(6, rng), t = random_vec(6, rng);
    auto r = loss_pose(x, t);
    VecX fd = finite_difference_gradient(
        [&](const VecX& v) { return loss_pose(v, t).value; }, x, 1e-5);
    REQUIRE(norm_rel_error(r.grad, fd) < 1e-4);
  }
}

TEST_CASE("loss_expression matches loss_pose semantics", "[learn]") {
  VecX a(3), b(3);
  a << 1, 0, 0;
  b << 0, 0, 0;
  REQUIRE(loss_expression(a, a).value == 0.0);
  REQUIRE(loss_expression(a, b).value == 1.0);
}

TEST_CASE("loss_2d_joint trivial values", "[learn]") {
  ModelDims dims = tiny_dims();
  SkeletonTemplate tpl = make_template(dims, 7);
  Scene scene = generate_scene(3, dims, 0.2);
  FkResult fk = forward_kinematics(scene.truth, tpl);
  ConfThresholds th;

  std::vector<KeypointObservation> obs;
  for (size_t m = 0; m < tpl.markers.size(); ++m) {
    obs.push_back({project_point(fk.markers[m], scene.camera), 1.0,
                   tpl.markers[m].part, tpl.markers[m].side});
  }
  auto exact = loss_2d_joint(scene.truth, tpl, scene.camera, obs, th);
  REQUIRE(exact.value == 0.0);

  // One visible keypoint offset by (3, -4): L1 contribution 7.
  auto shifted = obs;
  for (auto& kp : shifted) kp.confidence = 0.0;
  shifted[2].confidence = 1.0;
  shifted[2].position += Vec2(-3.0, 4.0);  // prediction sits (3,-4) away
  auto one = loss_2d_joint(scene.truth, tpl, scene.camera, shifted, th);
  REQUIRE(one.value == Catch::Approx(7.0).margin(1e-12));

  // All invisible: zero loss, zero gradient.
  for (auto& kp : shifted) kp.confidence = 0.0;
  auto none = loss_2d_joint(scene.truth, tpl, scene.camera, shifted, th);
  REQUIRE(none.value == 0.0);
  REQUIRE(none.grad.norm() == 0.0);
}

TEST_CASE("loss_2d_joint gradient matches finite differences", "[learn]") {
  ModelDims dims = tiny_dims();
  SkeletonTemplate tpl = make_template(dims, 7);
  FeatureDims fdims{6, 5, 5};
  ConfThresholds th;
  const double h = 1e-5;
  for (int state = 0; state < 50; ++state) {
    CuratedSample s = make_sample(tpl, 100 + state, fdims);
    Rng rng(500 + state);
    FullBodyParams pred = generate_scene(900 + state, dims, 0.15).truth;
    auto r = loss_2d_joint(pred, tpl, s.camera, s.keypoints, th);
    VecX x0 = pred.pack(dims);
    VecX fd = finite_difference_gradient(
        [&](const VecX& v) {
          return loss_2d_joint(FullBodyParams::unpack(v, dims), tpl, s.camera,
                               s.keypoints, th)
              .value;
        },
        x0, h);
    REQUIRE(norm_rel_error(r.grad, fd) < 1e-4);
  }
}

TEST_CASE("loss_feature values against a brute-force oracle", "[learn]") {
  Rng rng(11);
  const double amp = std::exp(5.0);
  for (int i = 0; i < 50; ++i) {
    VecX f = random_vec(12, rng), fhat = random_vec(12, rng);
    auto r = loss_feature(f, fhat, amp, 1.0);
    REQUIRE(r.value >= 0.0);

    // Oracle: explicit softmax + KL summation, no shared code path.
    auto soft = [](const VecX& v) {
      std::vector<double> e(v.size());
      double denom = 0;
      for (long k = 0; k < v.size(); ++k) { e[k] = std::exp(v[k]); denom += e[k]; }
      for (auto& x : e) x /= denom;
      return e;
    };
    auto p = soft(f), phat = soft(fhat);
    double kl = 0;
    for (size_t k = 0; k < p.size(); ++k) kl += phat[k] * std::log(phat[k] / p[k]);
    REQUIRE(std::abs(r.value - amp * kl) < 1e-10 * amp);
  }
  VecX same(5);
  same << 1, -2, 0.5, 3, 0;
  REQUIRE(loss_feature(same, same, amp).value == 0.0);
  REQUIRE_THROWS_AS(loss_feature(VecX::Zero(3), VecX::Zero(4), amp),
                    std::invalid_argument);
}

TEST_CASE("loss_feature gradient matches finite differences", "[learn]") {
  Rng rng(13);
  const double amp = std::exp(5.0);
  for (int i = 0; i < 20; ++i) {
    double temp = i % 2 == 0 ? 1.0 : 2.5;
    VecX f = random_vec(10, rng), fhat = random_vec(10, rng);
    auto r = loss_feature(f, fhat, amp, temp);
    VecX fd = finite_difference_gradient(
        [&](const VecX& v) { return loss_feature(v, fhat, amp, temp).value; }, f, 1e-5);
    REQUIRE(norm_rel_error(r.grad, fd) < 1e-4);
  }
}

TEST_CASE("loss_total is zero when predictions equal pseudo labels", "[learn]") {
  ModelDims dims = tiny_dims();
  SkeletonTemplate tpl = make_template(dims, 7);
  FeatureDims fdims{6, 5, 5};
  NetConfig net = tiny_net(dims);
  ModelState state = ModelState::random_init(net, 21);

  CuratedSample s = make_sample(tpl, 4, fdims);
  VecX input = input_from_observations(s.keypoints, s.camera);
  ForwardResult fwd = forward(state, input, dims);
  // Pseudo labels = the model's own outputs; observations = its reprojection.
  s.fused = fwd.params;
  s.feature_body = fwd.feature[0];
  s.feature_face = fwd.feature[1];
  s.feature_lhand = fwd.feature[2];
  s.feature_rhand = fwd.feature[2];
  FkResult fk = forward_kinematics(fwd.params, tpl);
  for (size_t m = 0; m < tpl.markers.size(); ++m) {
    s.keypoints[m].position = project_point(fk.markers[m], s.camera);
    s.keypoints[m].confidence = 1.0;
  }
  // Keep the same input: self-consistency of the targets, not the inputs.
  LossConfig cfg;
  cfg.adapter_dims = fdims;
  auto r = loss_total(state, s, tpl, cfg, nullptr, &input);
  REQUIRE(r.breakdown.total == 0.0);
}

TEST_CASE("loss breakdown totals reproduce the additive structure", "[learn]") {
  ModelDims dims = tiny_dims();
  SkeletonTemplate tpl = make_template(dims, 7);
  FeatureDims fdims{6, 5, 5};
  NetConfig net = tiny_net(dims);
  LossConfig cfg;
  cfg.adapter_dims = fdims;
  for (int i = 0; i < 10; ++i) {
    ModelState state = ModelState::random_init(net, 40 + i);
    CuratedSample s = make_sample(tpl, 50 + i, fdims);
    auto r = loss_total(state, s, tpl, cfg);
    const LossBreakdown& b = r.breakdown;
    REQUIRE(std::abs(b.body_total - (b.joint2d_body + b.pose + b.feature_body)) < 1e-12);
    REQUIRE(std::abs(b.face_total -
                     (b.joint2d_face + b.expression + b.jaw_pose + b.feature_face)) <
            1e-12);
    REQUIRE(std::abs(b.hand_total - (b.joint2d_hand + b.hand_pose + b.feature_hand)) <
            1e-12);
    REQUIRE(std::abs(b.total - (b.body_total + b.face_total + b.hand_total)) < 1e-12);
    REQUIRE(b.total > 0.0);
  }
}

TEST_CASE("loss_total end-to-end gradient matches finite differences", "[learn]") {
  ModelDims dims = tiny_dims();
  SkeletonTemplate tpl = make_template(dims, 7);
  FeatureDims fdims{6, 5, 5};
  NetConfig net = tiny_net(dims);
  LossConfig cfg;
  cfg.adapter_dims = fdims;
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    ModelState state = ModelState::random_init(net, 70 + trial);
    CuratedSample s = make_sample(tpl, 80 + trial, fdims);
    auto r = loss_total(state, s, tpl, cfg);
    ModelState probe = state;
    VecX fd = finite_difference_gradient(
        [&](const VecX& v) {
          probe.params = v;
          return loss_total(probe, s, tpl, cfg).breakdown.total;
        },
        state.params, h);
    REQUIRE(norm_rel_error(r.grad_state, fd) < 1e-4);
  }
}

TEST_CASE("ema consistency loss values", "[learn]") {
  VecX z(3);
  z << 1, 2, 3;
  REQUIRE(ema_consistency_loss(z, z).value == Catch::Approx(0.0).margin(1e-14));
  VecX neg = -z;
  REQUIRE(ema_consistency_loss(z, neg).value == Catch::Approx(4.0).margin(1e-12));
  VecX a(2), b(2);
  a << 1, 0;
  b << 0, 5;
  REQUIRE(ema_consistency_loss(a, b).value == Catch::Approx(2.0).margin(1e-12));
  REQUIRE_THROWS_AS(ema_consistency_loss(VecX::Zero(3), z), NumericError);
}

TEST_CASE("ema consistency: both algebraic forms agree", "[learn]") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    VecX a = random_vec(8, rng), b = random_vec(8, rng);
    double direct = ema_consistency_loss(a, b).value;
    VecX na = a / a.norm(), nb = b / b.norm();
    double squared_form = (na - nb).squaredNorm();
    REQUIRE(std::abs(direct - squared_form) < 1e-10);
    REQUIRE(direct >= -1e-12);
    REQUIRE(direct <= 4.0 + 1e-12);
  }
}

TEST_CASE("ema consistency is invariant to positive rescaling", "[learn]") {
  Rng rng(19);
  for (int i = 0; i < 100; ++i) {
    VecX a = random_vec(6, rng), b = random_vec(6, rng);
    double base = ema_consistency_loss(a, b).value;
    double lambda = rng.uniform(0.01, 50.0);
    REQUIRE(std::abs(ema_consistency_loss(lambda * a, b).value - base) < 1e-10);
    REQUIRE(std::abs(ema_consistency_loss(a, lambda * b).value - base) < 1e-10);
  }
}

TEST_CASE("ema consistency gradients match finite differences", "[learn]") {
  Rng rng(23);
  for (int i = 0; i < 20; ++i) {
    VecX a = random_vec(7, rng), b = random_vec(7, rng);
    auto r = ema_consistency_loss(a, b);
    VecX fda = finite_difference_gradient(
        [&](const VecX& v) { return ema_consistency_loss(v, b).value; }, a, 1e-6);
    VecX fdb = finite_difference_gradient(
        [&](const VecX& v) { return ema_consistency_loss(a, v).value; }, b, 1e-6);
    REQUIRE(norm_rel_error(r.grad_a, fda) < 1e-4);
    REQUIRE(norm_rel_error(r.grad_b, fdb) < 1e-4);
  }
}

TEST_CASE("adam: zero gradient leaves fresh state unchanged", "[learn]") {
  VecX w(3);
  w << 1, -2, 3;
  VecX w0 = w;
  AdamMoments mom = AdamMoments::zero(3);
  adam_step(w, VecX::Zero(3), mom, 0.1);
  REQUIRE((w - w0).norm() == 0.0);
  REQUIRE(mom.m.norm() == 0.0);
  REQUIRE(mom.v.norm() == 0.0);
}

TEST_CASE("adam descends on w^2", "[learn]") {
  VecX w(1);
  w << 1.0;
  AdamMoments mom = AdamMoments::zero(1);
  VecX grad(1);
  grad << 2.0 * w[0];
  adam_step(w, grad, mom, 0.01);
  REQUIRE(w[0] < 1.0);
  REQUIRE(w[0] > 0.9);
}

TEST_CASE("adam converges on a 5-d convex quadratic", "[learn]") {
  Rng rng(29);
  VecX a(5), b(5);
  for (int i = 0; i < 5; ++i) {
    a[i] = 0.5 + 1.5 * rng.uniform();
    b[i] = rng.normal();
  }
  VecX w = b + 0.3 * random_vec(5, rng);
  AdamMoments mom = AdamMoments::zero(5);
  for (int step = 0; step < 200; ++step) {
    VecX grad = 2.0 * a.cwiseProduct(w - b);
    // Step-decayed learning rate and a short second-moment memory keep the
    // late-phase limit cycle far below the target gradient norm.
    double lr = 0.05 * std::pow(0.96, step);
    adam_step(w, grad, mom, lr, 0.9, 0.9);
  }
  VecX final_grad = 2.0 * a.cwiseProduct(w - b);
  REQUIRE(final_grad.norm() < 1e-3);
}

TEST_CASE("adam refuses non-finite gradients", "[learn]") {
  VecX w(2);
  w << 1, 2;
  VecX w0 = w;
  AdamMoments mom = AdamMoments::zero(2);
  VecX bad(2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(adam_step(w, bad, mom, 0.1), NumericError);
  REQUIRE((w - w0).norm() == 0.0);
  REQUIRE(mom.step == 0);
}

TEST_CASE("learning rate schedule drops once at the configured epoch", "[learn]") {
  AdamConfig cfg;
  cfg.learning_rate = 1e-5;
  cfg.lr_drop_epoch = 20;
  cfg.lr_drop_factor = 0.1;
  REQUIRE(scheduled_lr(cfg, 0) == 1e-5);
  REQUIRE(scheduled_lr(cfg, 19) == 1e-5);
  REQUIRE(scheduled_lr(cfg, 20) == Catch::Approx(1e-6));
  REQUIRE(scheduled_lr(cfg, 100) == Catch::Approx(1e-6));
}

TEST_CASE("finite differences are exact on linear and quadratic functionals",
          "[learn]") {
  Rng rng(31);
  VecX c = random_vec(6, rng);
  VecX x = random_vec(6, rng);
  VecX g_lin = finite_difference_gradient(
      [&](const VecX& v) { return c.dot(v); }, x, 1e-3);
  REQUIRE((g_lin - c).norm() < 1e-9);
  VecX g_quad = finite_difference_gradient(
      [&](const VecX& v) { return v.squaredNorm(); }, x, 1e-4);
  REQUIRE((g_quad - 2.0 * x).norm() < 1e-8);
}
