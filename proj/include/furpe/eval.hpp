#pragma once

#include <algorithm>
#include <vector>

#include "furpe/learn.hpp"

namespace furpe {

enum class Alignment { None, Pelvis, Procrustes };

namespace detail {

inline MatX to_matrix(const std::vector<Vec3>& pts) {
  MatX m(pts.size(), 3);
  for (size_t i = 0; i < pts.size(); ++i) m.row(i) = pts[i].transpose();
  return m;
}

inline MatX select_rows(const MatX& m, const std::vector<int>& idx) {
  MatX out(idx.size(), 3);
  for (size_t i = 0; i < idx.size(); ++i) out.row(i) = m.row(idx[i]);
  return out;
}

inline double mean_row_distance(const MatX& a, const MatX& b) {
  return (a - b).rowwise().norm().mean();
}

}  // namespace detail

constexpr double kMetersToMm = 1000.0;

// Mean per-joint position error in millimeters. Pelvis alignment subtracts
// the root joint from both sets; Procrustes applies a similarity fit
// (with scale) to the predictions first.
inline double mpjpe(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                    Alignment alignment) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw std::invalid_argument("mpjpe: joint count mismatch");
  }
  MatX p = detail::to_matrix(pred);
  MatX g = detail::to_matrix(gt);
  switch (alignment) {
    case Alignment::None:
      break;
    case Alignment::Pelvis:
      p.rowwise() -= p.row(0);
      g.rowwise() -= g.row(0);
      break;
    case Alignment::Procrustes: {
      SimilarityTransform t = umeyama_align(p, g, /*with_scale=*/true);
      p = t.apply(p);
      break;
    }
  }
  return detail::mean_row_distance(p, g) * kMetersToMm;
}

// Marker-to-marker error in millimeters over an index mask; with Procrustes
// alignment the similarity fit uses only the masked markers.
inline double v2v(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                  Alignment alignment, const std::vector<int>& mask) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw std::invalid_argument("v2v: marker count mismatch");
  }
  if (mask.empty()) throw std::invalid_argument("v2v: empty part mask");
  MatX p = detail::select_rows(detail::to_matrix(pred), mask);
  MatX g = detail::select_rows(detail::to_matrix(gt), mask);
  switch (alignment) {
    case Alignment::None:
      break;
    case Alignment::Pelvis: {
      p.rowwise() -= p.row(0);
      g.rowwise() -= g.row(0);
      break;
    }
    case Alignment::Procrustes: {
      SimilarityTransform t = umeyama_align(p, g, true);
      p = t.apply(p);
      break;
    }
  }
  return detail::mean_row_distance(p, g) * kMetersToMm;
}

// Procrustes-aligned distances from each predicted face marker to the
// nearest ground-truth face marker (point-to-surface surrogate), in mm.
inline std::vector<double> pa_p2s_distances(const std::vector<Vec3>& pred_face,
                                            const std::vector<Vec3>& gt_face) {
  if (pred_face.size() != gt_face.size() || pred_face.size() < 3) {
    throw std::invalid_argument("pa_p2s: need >= 3 corresponded face markers");
  }
  MatX p = detail::to_matrix(pred_face);
  MatX g = detail::to_matrix(gt_face);
  SimilarityTransform t = umeyama_align(p, g, true);
  p = t.apply(p);
  std::vector<double> out(pred_face.size());
  for (long i = 0; i < p.rows(); ++i) {
    double best = (g.row(0) - p.row(i)).norm();
    for (long j = 1; j < g.rows(); ++j) {
      best = std::min(best, (g.row(j) - p.row(i)).norm());
    }
    out[i] = best * kMetersToMm;
  }
  return out;
}

struct P2sStats {
  double median = 0, mean = 0, stddev = 0;
};

inline P2sStats p2s_stats(std::vector<double> d) {
  P2sStats s;
  if (d.empty()) return s;
  std::sort(d.begin(), d.end());
  size_t n = d.size();
  s.median = n % 2 == 1 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
  double sum = 0, sum2 = 0;
  for (double v : d) { sum += v; sum2 += v * v; }
  s.mean = sum / n;
  s.stddev = std::sqrt(std::max(0.0, sum2 / n - s.mean * s.mean));
  return s;
}

inline P2sStats pa_p2s(const std::vector<Vec3>& pred_face,
                       const std::vector<Vec3>& gt_face) {
  return p2s_stats(pa_p2s_distances(pred_face, gt_face));
}

// Fraction of corresponded marker pairs within the distance threshold after
// Procrustes alignment (inclusive). Correspondence is fixed, so precision
// equals recall and the F-score reduces to this fraction.
inline double f_score(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                      double threshold_mm) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw std::invalid_argument("f_score: marker count mismatch");
  }
  MatX p = detail::to_matrix(pred);
  MatX g = detail::to_matrix(gt);
  SimilarityTransform t = umeyama_align(p, g, true);
  p = t.apply(p);
  int hit = 0;
  for (long i = 0; i < p.rows(); ++i) {
    if ((p.row(i) - g.row(i)).norm() * kMetersToMm <= threshold_mm) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(p.rows());
}

// Per-part and full-body alignment metrics for one evaluation run.
struct MetricReport {
  double mpjpe_mm = 0;
  double pelvis_mpjpe_mm = 0;
  double pa_mpjpe_mm = 0;
  double v2v_mm = 0;
  double pa_v2v_body_mm = 0;
  double pa_v2v_left_hand_mm = 0;
  double pa_v2v_right_hand_mm = 0;
  double pa_v2v_face_mm = 0;
  P2sStats pa_p2s_mm;
  std::vector<double> f_thresholds_mm{5.0, 15.0};
  std::vector<double> f_at;
  int sample_count = 0;
};

struct EvalSample {
  FullBodyParams truth;
  std::vector<KeypointObservation> observations;
  Camera camera;
};

using EvalDataset = std::vector<EvalSample>;

namespace detail {

struct MarkerMasks {
  std::vector<int> all, body, face, lhand, rhand;
};

inline MarkerMasks marker_masks(const SkeletonTemplate& tpl) {
  MarkerMasks m;
  for (size_t i = 0; i < tpl.markers.size(); ++i) {
    int idx = static_cast<int>(i);
    m.all.push_back(idx);
    const Marker& mk = tpl.markers[i];
    if (mk.part == PartClass::Body) m.body.push_back(idx);
    else if (mk.part == PartClass::Face) m.face.push_back(idx);
    else if (mk.side == Side::Left) m.lhand.push_back(idx);
    else m.rhand.push_back(idx);
  }
  return m;
}

}  // namespace detail

struct SampleMetrics {
  double mpjpe_mm, pelvis_mpjpe_mm, pa_mpjpe_mm;
  double v2v_mm, pa_v2v_body_mm, pa_v2v_left_hand_mm, pa_v2v_right_hand_mm,
      pa_v2v_face_mm;
  std::vector<double> p2s_distances_mm;
  std::vector<double> f_at;
};

inline SampleMetrics sample_metrics(const FullBodyParams& pred,
                                    const FullBodyParams& truth,
                                    const SkeletonTemplate& tpl,
                                    const std::vector<double>& f_thresholds) {
  FkResult fp = forward_kinematics(pred, tpl);
  FkResult ft = forward_kinematics(truth, tpl);
  auto masks = detail::marker_masks(tpl);

  SampleMetrics s;
  s.mpjpe_mm = mpjpe(fp.joints, ft.joints, Alignment::None);
  s.pelvis_mpjpe_mm = mpjpe(fp.joints, ft.joints, Alignment::Pelvis);
  s.pa_mpjpe_mm = mpjpe(fp.joints, ft.joints, Alignment::Procrustes);
  s.v2v_mm = v2v(fp.markers, ft.markers, Alignment::None, masks.all);
  s.pa_v2v_body_mm = v2v(fp.markers, ft.markers, Alignment::Procrustes, masks.body);
  s.pa_v2v_left_hand_mm = v2v(fp.markers, ft.markers, Alignment::Procrustes, masks.lhand);
  s.pa_v2v_right_hand_mm = v2v(fp.markers, ft.markers, Alignment::Procrustes, masks.rhand);
  s.pa_v2v_face_mm = v2v(fp.markers, ft.markers, Alignment::Procrustes, masks.face);

  std::vector<Vec3> pf, tf;
  for (int i : masks.face) { pf.push_back(fp.markers[i]); tf.push_back(ft.markers[i]); }
  s.p2s_distances_mm = pa_p2s_distances(pf, tf);

  for (double th : f_thresholds) s.f_at.push_back(f_score(fp.markers, ft.markers, th));
  return s;
}

// Aggregates metrics over explicit per-sample predictions. Distance metrics
// and F-scores are means of the per-sample values; point-to-surface stats
// pool the per-marker distances across samples.
inline MetricReport evaluate_predictions(const std::vector<FullBodyParams>& preds,
                                         const EvalDataset& data,
                                         const SkeletonTemplate& tpl,
                                         std::vector<double> f_thresholds = {5.0, 15.0}) {
  if (preds.size() != data.size() || preds.empty()) {
    throw ConfigError("evaluate_predictions: prediction/dataset size mismatch");
  }
  MetricReport r;
  r.f_thresholds_mm = f_thresholds;
  r.f_at.assign(f_thresholds.size(), 0.0);
  std::vector<double> pooled_p2s;
  for (size_t i = 0; i < preds.size(); ++i) {
    SampleMetrics s = sample_metrics(preds[i], data[i].truth, tpl, f_thresholds);
    r.mpjpe_mm += s.mpjpe_mm;
    r.pelvis_mpjpe_mm += s.pelvis_mpjpe_mm;
    r.pa_mpjpe_mm += s.pa_mpjpe_mm;
    r.v2v_mm += s.v2v_mm;
    r.pa_v2v_body_mm += s.pa_v2v_body_mm;
    r.pa_v2v_left_hand_mm += s.pa_v2v_left_hand_mm;
    r.pa_v2v_right_hand_mm += s.pa_v2v_right_hand_mm;
    r.pa_v2v_face_mm += s.pa_v2v_face_mm;
    for (size_t t = 0; t < f_thresholds.size(); ++t) r.f_at[t] += s.f_at[t];
    pooled_p2s.insert(pooled_p2s.end(), s.p2s_distances_mm.begin(),
                      s.p2s_distances_mm.end());
  }
  double n = static_cast<double>(preds.size());
  r.mpjpe_mm /= n;
  r.pelvis_mpjpe_mm /= n;
  r.pa_mpjpe_mm /= n;
  r.v2v_mm /= n;
  r.pa_v2v_body_mm /= n;
  r.pa_v2v_left_hand_mm /= n;
  r.pa_v2v_right_hand_mm /= n;
  r.pa_v2v_face_mm /= n;
  for (auto& f : r.f_at) f /= n;
  r.pa_p2s_mm = p2s_stats(std::move(pooled_p2s));
  r.sample_count = static_cast<int>(preds.size());
  return r;
}

// Runs the model on every sample's observations, then aggregates.
inline MetricReport evaluate(const ModelState& state, const EvalDataset& data,
                             const SkeletonTemplate& tpl,
                             std::vector<double> f_thresholds = {5.0, 15.0}) {
  if (state.cfg.param_dim != tpl.dims.param_count() ||
      state.cfg.input_dim != 3 * tpl.dims.marker_total()) {
    throw ConfigError("evaluate: checkpoint dims do not match dataset dims");
  }
  std::vector<FullBodyParams> preds;
  preds.reserve(data.size());
  for (const auto& sample : data) {
    VecX input = input_from_observations(sample.observations, sample.camera);
    preds.push_back(forward(state, input, tpl.dims).params);
  }
  return evaluate_predictions(preds, data, tpl, std::move(f_thresholds));
}

}  // namespace furpe
