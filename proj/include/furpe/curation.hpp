#pragma once

#include <map>
#include <vector>

#include "furpe/synth.hpp"

namespace furpe {

// Thresholds and bounds for the three-step pseudo ground-truth selection.
struct SelectionConfig {
  ConfThresholds thresholds;            // body 0.1 / hand 0.2 / face 0.4
  int min_confident_keypoints = 12;
  double reprojection_gate_cm = 1.5;    // RMSE at the subject plane
  double axis_angle_bound = 2.0 * M_PI;
  double shape_bound = 5.0;

  void validate() const {
    auto in01 = [](double t) { return t > 0.0 && t < 1.0; };
    if (!in01(thresholds.body) || !in01(thresholds.hand) || !in01(thresholds.face)) {
      throw ConfigError("SelectionConfig: confidence thresholds must lie in (0,1)");
    }
    if (!(reprojection_gate_cm > 0)) {
      throw ConfigError("SelectionConfig: reprojection gate must be > 0");
    }
    if (min_confident_keypoints < 0) {
      throw ConfigError("SelectionConfig: min keypoint count must be >= 0");
    }
  }
};

struct Step1Result {
  bool pass = false;
  int count = 0;
};

struct Step2Result {
  bool pass = true;
  std::vector<Part> offending;
};

struct Step3Result {
  bool pass = false;
  double rmse_cm = 0.0;
};

// Raised by the reprojection gate when no keypoint clears its confidence
// threshold; such samples are discarded and reported separately.
class GateUndefinedError : public Error {
 public:
  using Error::Error;
};

class FusionError : public Error {
 public:
  using Error::Error;
};

// Step 1: count keypoints whose confidence strictly exceeds their part's
// threshold; pass iff the pooled count reaches the minimum.
inline Step1Result step1_confidence_gate(const std::vector<KeypointObservation>& obs,
                                         const SelectionConfig& cfg) {
  Step1Result r;
  for (const auto& kp : obs) {
    if (kp.confidence > cfg.thresholds.for_class(kp.part)) ++r.count;
  }
  r.pass = r.count >= cfg.min_confident_keypoints;
  return r;
}

namespace detail {

inline bool part_values_valid(const PartPrediction& pred, const SelectionConfig& cfg) {
  bool ok = true;
  auto check_aa = [&](const AxisAngle& aa) {
    if (!aa.allFinite()) { ok = false; return; }
    for (int c = 0; c < 3; ++c) {
      if (std::abs(aa[c]) > cfg.axis_angle_bound) ok = false;
    }
  };
  auto check_vec = [&](const VecX& v, double bound) {
    if (!v.allFinite()) { ok = false; return; }
    for (int i = 0; i < v.size(); ++i) {
      if (bound > 0 && std::abs(v[i]) > bound) ok = false;
    }
  };
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, BodyParams>) {
          for (const auto& aa : p.pose) check_aa(aa);
          check_vec(p.shape, cfg.shape_bound);
        } else if constexpr (std::is_same_v<T, FaceParams>) {
          check_aa(p.jaw_pose);
          for (const auto& aa : p.other_poses) check_aa(aa);
          check_vec(p.expression, 0.0);  // finiteness only
        } else {
          for (const auto& aa : p.pose) check_aa(aa);
          check_vec(p.shape, cfg.shape_bound);
        }
      },
      pred.params);
  if (pred.root_translation && !pred.root_translation->allFinite()) ok = false;
  if (!pred.feature.allFinite()) ok = false;
  return ok;
}

}  // namespace detail

// Step 2: reject predictions with non-finite values, axis-angle components
// beyond the bound, or shape coefficients beyond the bound.
inline Step2Result step2_validity_gate(const std::vector<PartPrediction>& preds,
                                       const SelectionConfig& cfg) {
  Step2Result r;
  for (const auto& pred : preds) {
    if (!detail::part_values_valid(pred, cfg)) {
      r.pass = false;
      r.offending.push_back(pred.part);
    }
  }
  return r;
}

// Pixel error converted to centimeters at the subject plane.
inline double pixels_to_cm(double px, const Camera& cam) {
  return px * cam.subject_depth / cam.focal_length * 100.0;
}

// Step 3: reproject the fused label and compare against the detected
// keypoints that cleared their confidence threshold. RMSE in centimeters at
// the subject plane; the gate is inclusive.
inline Step3Result step3_reprojection_gate(const FullBodyParams& fused,
                                           const std::vector<KeypointObservation>& obs,
                                           const Camera& camera,
                                           const SkeletonTemplate& tpl,
                                           const SelectionConfig& cfg) {
  if (obs.size() != tpl.markers.size()) {
    throw ConfigError("step3: observation count does not match template markers");
  }
  FkResult fk = forward_kinematics(fused, tpl);
  double sum_sq = 0.0;
  int n = 0;
  for (size_t m = 0; m < obs.size(); ++m) {
    const auto& kp = obs[m];
    if (kp.missing()) continue;
    if (!(kp.confidence > cfg.thresholds.for_class(kp.part))) continue;
    Vec2 proj = project_point(fk.markers[m], camera);
    double err_cm = pixels_to_cm((proj - kp.position).norm(), camera);
    sum_sq += err_cm * err_cm;
    ++n;
  }
  if (n == 0) {
    throw GateUndefinedError("step3: no keypoint clears its confidence threshold");
  }
  Step3Result r;
  r.rmse_cm = std::sqrt(sum_sq / n);
  r.pass = r.rmse_cm <= cfg.reprojection_gate_cm;
  return r;
}

// Fuses surviving part predictions into one full-body pseudo label. Body
// pose/shape come from the body expert (so the body's wrist and neck joint
// rotations win at the seams); face and hand sub-parameters are kept as-is.
inline FullBodyParams fuse(const PartPrediction& body, const PartPrediction& face,
                           const PartPrediction& lhand, const PartPrediction& rhand) {
  if (!std::holds_alternative<BodyParams>(body.params) ||
      !std::holds_alternative<FaceParams>(face.params) ||
      !std::holds_alternative<HandParams>(lhand.params) ||
      !std::holds_alternative<HandParams>(rhand.params)) {
    throw FusionError("fuse: missing or mistyped part prediction");
  }
  if (!body.root_translation) {
    throw FusionError("fuse: body prediction carries no root translation");
  }
  const auto& lh = std::get<HandParams>(lhand.params);
  const auto& rh = std::get<HandParams>(rhand.params);
  return merge(std::get<BodyParams>(body.params), std::get<FaceParams>(face.params),
               lh, rh, *body.root_translation);
}

struct Provenance {
  int step1_count = 0;
  bool step1_evaluated = false, step2_evaluated = false, step3_evaluated = false;
  double step3_rmse_cm = 0.0;
};

// A sample that survived all three selection steps.
struct CuratedSample {
  int64_t subject_id = 0;
  uint64_t scene_seed = 0;
  Camera camera;
  FullBodyParams fused;
  VecX feature_body, feature_face, feature_lhand, feature_rhand;
  std::vector<KeypointObservation> keypoints;
  Provenance provenance;
};

struct CurationReport {
  int input = 0;
  int discarded_step1 = 0;
  int discarded_step2 = 0;
  int discarded_step3 = 0;
  int discarded_gate_undefined = 0;
  int kept = 0;
  std::vector<int> step1_counts;      // per evaluated sample
  std::vector<double> step3_rmse_cm;  // per sample that reached step 3

  bool counts_consistent() const {
    return input == discarded_step1 + discarded_step2 + discarded_step3 +
                        discarded_gate_undefined + kept;
  }
};

struct SceneRecord {
  Scene scene;
  std::vector<KeypointObservation> observations;
  std::vector<PartPrediction> predictions;  // body, face, left hand, right hand

  const PartPrediction& prediction(Part p) const {
    for (const auto& pred : predictions) {
      if (pred.part == p) return pred;
    }
    throw FusionError(std::string("missing prediction for part ") + to_string(p));
  }
};

// Runs steps 1 -> 2 -> 3 with short-circuit discard over a dataset.
inline std::pair<std::vector<CuratedSample>, CurationReport> curate(
    const std::vector<SceneRecord>& records, const SkeletonTemplate& tpl,
    const SelectionConfig& cfg) {
  cfg.validate();
  std::vector<CuratedSample> kept;
  CurationReport report;
  report.input = static_cast<int>(records.size());

  for (const auto& rec : records) {
    Step1Result s1 = step1_confidence_gate(rec.observations, cfg);
    report.step1_counts.push_back(s1.count);
    if (!s1.pass) {
      ++report.discarded_step1;
      continue;
    }
    Step2Result s2 = step2_validity_gate(rec.predictions, cfg);
    if (!s2.pass) {
      ++report.discarded_step2;
      continue;
    }
    FullBodyParams fused =
        fuse(rec.prediction(Part::Body), rec.prediction(Part::Face),
             rec.prediction(Part::LeftHand), rec.prediction(Part::RightHand));
    Step3Result s3;
    try {
      s3 = step3_reprojection_gate(fused, rec.observations, rec.scene.camera, tpl, cfg);
    } catch (const GateUndefinedError&) {
      ++report.discarded_gate_undefined;
      continue;
    }
    report.step3_rmse_cm.push_back(s3.rmse_cm);
    if (!s3.pass) {
      ++report.discarded_step3;
      continue;
    }

    CuratedSample sample;
    sample.subject_id = rec.scene.subject_id;
    sample.scene_seed = rec.scene.seed;
    sample.camera = rec.scene.camera;
    sample.fused = std::move(fused);
    sample.feature_body = rec.prediction(Part::Body).feature;
    sample.feature_face = rec.prediction(Part::Face).feature;
    sample.feature_lhand = rec.prediction(Part::LeftHand).feature;
    sample.feature_rhand = rec.prediction(Part::RightHand).feature;
    sample.keypoints = rec.observations;
    sample.provenance.step1_count = s1.count;
    sample.provenance.step1_evaluated = true;
    sample.provenance.step2_evaluated = true;
    sample.provenance.step3_evaluated = true;
    sample.provenance.step3_rmse_cm = s3.rmse_cm;
    kept.push_back(std::move(sample));
    ++report.kept;
  }
  return {std::move(kept), report};
}

}  // namespace furpe
