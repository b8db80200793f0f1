#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "furpe/body_model.hpp"
#include "furpe/rng.hpp"

namespace furpe {

// One synthetic subject: ground-truth parameters plus the camera that
// observes it. Regeneration from (seed, dims, scale) is bit-exact.
struct Scene {
  int64_t subject_id = 0;
  FullBodyParams truth;
  Camera camera;
  uint64_t seed = 0;
};

// One detected 2D keypoint. Dropped keypoints carry confidence 0 and a
// non-finite position.
struct KeypointObservation {
  Vec2 position = Vec2::Zero();
  double confidence = 1.0;
  PartClass part = PartClass::Body;
  Side side = Side::None;

  bool missing() const { return confidence <= 0.0 || !position.allFinite(); }
};

// Expert feature dimensions (the distillation targets' widths).
struct FeatureDims {
  int body = 32;
  int face = 16;
  int hand = 16;

  static FeatureDims toy() { return FeatureDims{}; }
  static FeatureDims paper() { return FeatureDims{2048, 512, 512}; }

  int for_part(Part p) const {
    switch (part_class_of(p)) {
      case PartClass::Body: return body;
      case PartClass::Face: return face;
      default: return hand;
    }
  }

  bool operator==(const FeatureDims&) const = default;
};

// One part expert's output. The body expert additionally estimates the
// subject's root translation, which fusion and the reprojection gate need.
struct PartPrediction {
  Part part = Part::Body;
  std::variant<BodyParams, FaceParams, HandParams> params;
  std::optional<Vec3> root_translation;  // body expert only
  VecX feature;
  bool valid = true;
};

// Controls pseudo-label quality: detector jitter/dropout, per-part expert
// parameter noise, outright invalid outputs, and gross (large but in-range)
// errors that only the reprojection gate can catch.
struct NoiseProfile {
  double keypoint_jitter_sigma = 0.0;   // pixels
  double keypoint_dropout_prob = 0.0;
  double param_sigma_body = 0.0;        // radians / unitless
  double param_sigma_face = 0.0;
  double param_sigma_hand = 0.0;
  double param_sigma_translation = 0.0; // meters
  double feature_noise_sigma = 0.0;
  double invalid_output_prob = 0.0;
  double gross_error_prob = 0.0;
  double gross_error_magnitude = 0.0;   // radians added to one pose component

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(keypoint_dropout_prob) || !prob(invalid_output_prob) ||
        !prob(gross_error_prob)) {
      throw ConfigError("NoiseProfile: probabilities must lie in [0,1]");
    }
    if (keypoint_jitter_sigma < 0 || param_sigma_body < 0 || param_sigma_face < 0 ||
        param_sigma_hand < 0 || param_sigma_translation < 0 ||
        feature_noise_sigma < 0 || gross_error_magnitude < 0) {
      throw ConfigError("NoiseProfile: sigmas must be >= 0");
    }
  }
};

namespace detail {

// Relative widths of the per-group truth distributions; generate_scene
// multiplies all of them by pose_prior_scale.
constexpr double kBodyPoseScale = 1.0;
constexpr double kFacePoseScale = 0.3;
constexpr double kHandPoseScale = 0.5;
constexpr double kShapeScale = 1.0;
constexpr double kExpressionScale = 1.0;
constexpr double kTranslationScale = 0.25;  // meters per unit prior scale

inline AxisAngle draw_axis_angle(Rng& rng, double sigma) {
  return canonicalize(AxisAngle(rng.normal(0, sigma), rng.normal(0, sigma),
                                rng.normal(0, sigma)));
}

}  // namespace detail

inline FullBodyParams draw_truth_params(const ModelDims& dims, double scale, Rng& rng) {
  FullBodyParams p = FullBodyParams::zero(dims);
  for (auto& aa : p.body.pose) aa = detail::draw_axis_angle(rng, scale * detail::kBodyPoseScale);
  for (int i = 0; i < dims.body_shape; ++i) {
    p.body.shape[i] = rng.normal(0, scale * detail::kShapeScale);
  }
  p.face.jaw_pose = detail::draw_axis_angle(rng, scale * detail::kFacePoseScale);
  for (auto& aa : p.face.other_poses) {
    aa = detail::draw_axis_angle(rng, scale * detail::kFacePoseScale);
  }
  for (int i = 0; i < dims.expression_dims; ++i) {
    double e = rng.normal(0, scale * detail::kExpressionScale);
    p.face.expression[i] = std::min(3.0, std::max(-3.0, e));
  }
  for (auto* hand : {&p.left_hand, &p.right_hand}) {
    for (auto& aa : hand->pose) aa = detail::draw_axis_angle(rng, scale * detail::kHandPoseScale);
    for (int i = 0; i < dims.hand_shape; ++i) {
      hand->shape[i] = rng.normal(0, scale * detail::kShapeScale);
    }
  }
  for (int i = 0; i < 3; ++i) {
    p.root_translation[i] = rng.normal(0, scale * detail::kTranslationScale);
  }
  return p;
}

inline Scene generate_scene(uint64_t seed, const ModelDims& dims,
                            double pose_prior_scale,
                            const Camera& camera = Camera{},
                            int64_t subject_id = 0) {
  if (pose_prior_scale < 0) {
    throw std::invalid_argument("generate_scene: pose_prior_scale must be >= 0");
  }
  camera.validate();
  Rng rng(derive_seed(seed, 1));
  Scene s;
  s.subject_id = subject_id;
  s.seed = seed;
  s.camera = camera;
  s.truth = draw_truth_params(dims, pose_prior_scale, rng);
  return s;
}

// 2D keypoint detector stand-in: projects the true markers, jitters them,
// drops some, and scores confidence so it decreases with the jitter that
// was actually applied (clamp(1 - |jitter| / (4 sigma), 0, 1)).
inline std::vector<KeypointObservation> detect_keypoints(const Scene& scene,
                                                         const SkeletonTemplate& tpl,
                                                         const NoiseProfile& noise,
                                                         uint64_t seed) {
  noise.validate();
  FkResult fk = forward_kinematics(scene.truth, tpl);
  Rng rng(derive_seed(seed, 2));
  std::vector<KeypointObservation> out(tpl.markers.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (size_t m = 0; m < tpl.markers.size(); ++m) {
    KeypointObservation& kp = out[m];
    kp.part = tpl.markers[m].part;
    kp.side = tpl.markers[m].side;
    Vec2 exact = project_point(fk.markers[m], scene.camera);
    Vec2 jitter(rng.normal(0, noise.keypoint_jitter_sigma),
                rng.normal(0, noise.keypoint_jitter_sigma));
    bool dropped = rng.bernoulli(noise.keypoint_dropout_prob);
    if (dropped) {
      kp.position = Vec2(nan, nan);
      kp.confidence = 0.0;
    } else {
      kp.position = exact + jitter;
      kp.confidence = std::min(
          1.0, std::max(0.0, 1.0 - jitter.norm() /
                                       (4.0 * noise.keypoint_jitter_sigma + 1e-9)));
    }
  }
  return out;
}

namespace detail {

inline VecX pack_part_params(const PartPrediction& pred, const ModelDims& dims) {
  if (std::holds_alternative<BodyParams>(pred.params)) {
    const auto& b = std::get<BodyParams>(pred.params);
    VecX v(3 * dims.body_joints + dims.body_shape);
    int k = 0;
    for (const auto& aa : b.pose) { v.segment<3>(k) = aa; k += 3; }
    v.segment(k, dims.body_shape) = b.shape;
    return v;
  }
  if (std::holds_alternative<FaceParams>(pred.params)) {
    const auto& f = std::get<FaceParams>(pred.params);
    VecX v(3 * dims.face_joints + dims.expression_dims);
    int k = 0;
    v.segment<3>(k) = f.jaw_pose; k += 3;
    for (const auto& aa : f.other_poses) { v.segment<3>(k) = aa; k += 3; }
    v.segment(k, dims.expression_dims) = f.expression;
    return v;
  }
  const auto& h = std::get<HandParams>(pred.params);
  VecX v(3 * dims.hand_joints + dims.hand_shape);
  int k = 0;
  for (const auto& aa : h.pose) { v.segment<3>(k) = aa; k += 3; }
  v.segment(k, dims.hand_shape) = h.shape;
  return v;
}

// Fixed random affine map used by the expert feature simulator; seeded by
// (part, in, out) only, so every scene shares the same map.
inline void feature_map(Part part, int in_dim, int out_dim, MatX& w, VecX& b) {
  uint64_t s = derive_seed(0xFEA7000DULL + static_cast<uint64_t>(part) * 7919ULL,
                           static_cast<uint64_t>(in_dim) * 131071ULL +
                               static_cast<uint64_t>(out_dim));
  Rng rng(s);
  w.resize(out_dim, in_dim);
  b.resize(out_dim);
  double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (int i = 0; i < out_dim; ++i) {
    for (int j = 0; j < in_dim; ++j) w(i, j) = scale * rng.normal();
    b[i] = 0.1 * rng.normal();
  }
}

}  // namespace detail

// Deterministic feature an ideal expert would emit for these part params.
inline VecX expert_feature(Part part, const VecX& part_params, int feature_dim) {
  MatX w;
  VecX b;
  detail::feature_map(part, static_cast<int>(part_params.size()), feature_dim, w, b);
  return ((w * part_params + b).array().tanh()).matrix();
}

// Simulates one part expert: truth params plus Gaussian noise, an optional
// gross error on one pose component, or an invalid (NaN / out-of-range)
// output. The feature is a fixed nonlinear map of the *true* params plus
// noise, so distillation has recoverable signal.
inline PartPrediction run_expert(Part part, const Scene& scene,
                                 const ModelDims& dims, const FeatureDims& fdims,
                                 const NoiseProfile& noise, uint64_t seed) {
  noise.validate();
  Rng rng(derive_seed(seed, 0x1000 + static_cast<uint64_t>(part)));
  PartPrediction pred;
  pred.part = part;

  auto noisy_aa = [&](const AxisAngle& aa, double sigma) {
    return AxisAngle(aa.x() + rng.normal(0, sigma), aa.y() + rng.normal(0, sigma),
                     aa.z() + rng.normal(0, sigma));
  };

  switch (part) {
    case Part::Body: {
      BodyParams b = scene.truth.body;
      for (auto& aa : b.pose) aa = noisy_aa(aa, noise.param_sigma_body);
      for (int i = 0; i < b.shape.size(); ++i) {
        b.shape[i] += rng.normal(0, noise.param_sigma_body);
      }
      pred.params = std::move(b);
      Vec3 t = scene.truth.root_translation;
      for (int i = 0; i < 3; ++i) t[i] += rng.normal(0, noise.param_sigma_translation);
      pred.root_translation = t;
      break;
    }
    case Part::Face: {
      FaceParams f = scene.truth.face;
      f.jaw_pose = noisy_aa(f.jaw_pose, noise.param_sigma_face);
      for (auto& aa : f.other_poses) aa = noisy_aa(aa, noise.param_sigma_face);
      for (int i = 0; i < f.expression.size(); ++i) {
        f.expression[i] += rng.normal(0, noise.param_sigma_face);
      }
      pred.params = std::move(f);
      break;
    }
    case Part::LeftHand:
    case Part::RightHand: {
      HandParams h = part == Part::LeftHand ? scene.truth.left_hand
                                            : scene.truth.right_hand;
      for (auto& aa : h.pose) aa = noisy_aa(aa, noise.param_sigma_hand);
      for (int i = 0; i < h.shape.size(); ++i) {
        h.shape[i] += rng.normal(0, noise.param_sigma_hand);
      }
      pred.params = std::move(h);
      break;
    }
    default:
      throw std::invalid_argument("run_expert: unknown part tag");
  }

  // Gross error: the expert fails on this part as a whole and emits a
  // systematically wrong articulation. Every joint rotation is scaled by
  // (1 - magnitude): magnitude 2 negates the pose (a depth-flip style
  // failure), magnitude 1 collapses it to rest. Values stay finite and
  // in-range, so only the reprojection gate can catch them. The body's
  // global root is spared: Procrustes-aligned metrics would largely forgive
  // a wrong global orientation, a flipped articulation they cannot.
  if (rng.bernoulli(noise.gross_error_prob) && noise.gross_error_magnitude > 0) {
    double s = 1.0 - noise.gross_error_magnitude;
    std::visit(
        [&](auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, BodyParams>) {
            for (size_t j = 1; j < p.pose.size(); ++j) p.pose[j] *= s;
          } else if constexpr (std::is_same_v<T, HandParams>) {
            for (auto& aa : p.pose) aa *= s;
          } else {
            p.jaw_pose *= s;
            for (auto& aa : p.other_poses) aa *= s;
          }
        },
        pred.params);
  }

  // Invalid output: NaN poisoning or an out-of-range component.
  if (rng.bernoulli(noise.invalid_output_prob)) {
    pred.valid = false;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    bool poison = rng.bernoulli(0.5);
    std::visit(
        [&](auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, FaceParams>) {
            if (poison) {
              p.jaw_pose[static_cast<int>(rng.below(3))] = nan;
            } else {
              p.jaw_pose[static_cast<int>(rng.below(3))] = 3.0 * M_PI;
            }
          } else {
            int j = static_cast<int>(rng.below(p.pose.size()));
            if (poison) {
              p.pose[j][static_cast<int>(rng.below(3))] = nan;
            } else if (p.shape.size() > 0 && rng.bernoulli(0.5)) {
              p.shape[static_cast<int>(rng.below(p.shape.size()))] = 100.0;
            } else {
              p.pose[j][static_cast<int>(rng.below(3))] = 3.0 * M_PI;
            }
          }
        },
        pred.params);
  }

  // Feature: fixed map of the params the expert actually believes in, plus
  // noise. For honest predictions these sit close to the truth, so
  // distillation has recoverable signal; a failed expert's feature encodes
  // its failure (NaN poisoning included).
  VecX believed = detail::pack_part_params(pred, dims);
  pred.feature = expert_feature(part, believed, fdims.for_part(part));
  for (int i = 0; i < pred.feature.size(); ++i) {
    pred.feature[i] += rng.normal(0, noise.feature_noise_sigma);
  }
  return pred;
}

}  // namespace furpe
