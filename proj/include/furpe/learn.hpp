#pragma once

#include <functional>
#include <optional>

#include "furpe/body_model.hpp"
#include "furpe/curation.hpp"
#include "furpe/synth.hpp"

namespace furpe {

// Architecture of the keypoint-to-parameters regressor: a tanh MLP trunk,
// a linear full-body parameter head, and per-part feature heads followed by
// affine adapters that match the expert feature dimensions.
struct NetConfig {
  int input_dim = 0;               // 3 * marker count (u, v, confidence)
  std::vector<int> hidden{64, 64};
  int param_dim = 0;               // packed FullBodyParams length
  int native_feature_dim = 16;
  FeatureDims adapter_dims;        // expert feature dims (adapter outputs)

  static NetConfig for_model(const ModelDims& dims, const FeatureDims& fdims,
                             const std::vector<int>& hidden_dims = {64, 64},
                             int native_dim = 16) {
    NetConfig c;
    c.input_dim = 3 * dims.marker_total();
    c.hidden = hidden_dims;
    c.param_dim = dims.param_count();
    c.native_feature_dim = native_dim;
    c.adapter_dims = fdims;
    return c;
  }

  void validate() const {
    if (input_dim < 1 || param_dim < 1 || native_feature_dim < 1 || hidden.empty()) {
      throw ConfigError("NetConfig: dimensions must be >= 1");
    }
    for (int h : hidden) {
      if (h < 1) throw ConfigError("NetConfig: hidden dims must be >= 1");
    }
    if (adapter_dims.body < 1 || adapter_dims.face < 1 || adapter_dims.hand < 1) {
      throw ConfigError("NetConfig: adapter dims must be >= 1");
    }
  }

  bool operator==(const NetConfig&) const = default;
};

// All trainable parameters in one flat vector, with named views per tensor.
// flatten/unflatten is the identity by construction.
struct ModelState {
  NetConfig cfg;
  VecX params;

  struct TensorInfo {
    int rows = 0, cols = 0;
    long offset = 0;
  };
  std::vector<TensorInfo> tensors;

  ModelState() = default;

  explicit ModelState(const NetConfig& c) : cfg(c) {
    cfg.validate();
    long off = 0;
    auto add = [&](int rows, int cols) {
      tensors.push_back({rows, cols, off});
      off += static_cast<long>(rows) * cols;
    };
    int prev = cfg.input_dim;
    for (int h : cfg.hidden) {
      add(h, prev);  // W
      add(h, 1);     // b
      prev = h;
    }
    add(cfg.param_dim, prev);
    add(cfg.param_dim, 1);
    const int fd[3] = {cfg.adapter_dims.body, cfg.adapter_dims.face, cfg.adapter_dims.hand};
    for (int p = 0; p < 3; ++p) {
      add(cfg.native_feature_dim, prev);
      add(cfg.native_feature_dim, 1);
      add(fd[p], cfg.native_feature_dim);
      add(fd[p], 1);
    }
    params = VecX::Zero(off);
  }

  static ModelState zero(const NetConfig& cfg) { return ModelState(cfg); }

  static ModelState random_init(const NetConfig& cfg, uint64_t seed) {
    ModelState s(cfg);
    Rng rng(derive_seed(seed, 0xA11CEULL));
    for (const auto& t : s.tensors) {
      if (t.cols == 1) continue;  // biases stay exactly zero
      double scale = 1.0 / std::sqrt(static_cast<double>(t.cols));
      for (long i = 0; i < static_cast<long>(t.rows) * t.cols; ++i) {
        s.params[t.offset + i] = scale * rng.normal();
      }
    }
    return s;
  }

  long size() const { return params.size(); }

  Eigen::Map<const MatX> tensor(int idx) const {
    const auto& t = tensors[idx];
    return Eigen::Map<const MatX>(params.data() + t.offset, t.rows, t.cols);
  }

  // Tensor indices.
  int trunk_w(int layer) const { return 2 * layer; }
  int trunk_b(int layer) const { return 2 * layer + 1; }
  int param_w() const { return 2 * static_cast<int>(cfg.hidden.size()); }
  int param_b() const { return param_w() + 1; }
  int feat_w(int part) const { return param_w() + 2 + 4 * part; }
  int feat_b(int part) const { return feat_w(part) + 1; }
  int adapter_w(int part) const { return feat_w(part) + 2; }
  int adapter_b(int part) const { return feat_w(part) + 3; }

  VecX flatten() const { return params; }

  void unflatten(const VecX& v) {
    if (v.size() != params.size()) throw ConfigError("ModelState: flat size mismatch");
    params = v;
  }
};

// Network input: per keypoint, principal-point-centered coordinates in
// focal-length units plus the confidence; missing keypoints map to zeros.
inline VecX input_from_observations(const std::vector<KeypointObservation>& obs,
                                    const Camera& cam) {
  VecX x = VecX::Zero(3 * static_cast<long>(obs.size()));
  for (size_t i = 0; i < obs.size(); ++i) {
    const auto& kp = obs[i];
    if (kp.missing()) continue;
    x[3 * i + 0] = (kp.position.x() - cam.principal_point.x()) / cam.focal_length;
    x[3 * i + 1] = (kp.position.y() - cam.principal_point.y()) / cam.focal_length;
    x[3 * i + 2] = kp.confidence;
  }
  return x;
}

struct ForwardCache {
  std::vector<VecX> activations;  // a_0 = input, then per trunk layer
  VecX param_out;
  VecX feat_act[3];     // tanh feature-head outputs
  VecX adapted[3];      // adapter outputs (predicted features)
};

struct ForwardResult {
  FullBodyParams params;
  VecX param_vector;
  VecX feature[3];  // body, face, hand predicted features
};

inline ForwardResult forward(const ModelState& state, const VecX& input,
                             const ModelDims& dims, ForwardCache* cache = nullptr) {
  if (input.size() != state.cfg.input_dim) {
    throw ConfigError("forward: input length does not match configured layout");
  }
  if (state.cfg.param_dim != dims.param_count()) {
    throw ConfigError("forward: parameter head does not match model dims");
  }
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.activations.clear();
  c.activations.push_back(input);
  VecX a = input;
  for (size_t l = 0; l < state.cfg.hidden.size(); ++l) {
    a = (state.tensor(state.trunk_w(l)) * a + state.tensor(state.trunk_b(l)).col(0))
            .array()
            .tanh()
            .matrix();
    c.activations.push_back(a);
  }
  c.param_out = state.tensor(state.param_w()) * a + state.tensor(state.param_b()).col(0);
  for (int p = 0; p < 3; ++p) {
    c.feat_act[p] =
        (state.tensor(state.feat_w(p)) * a + state.tensor(state.feat_b(p)).col(0))
            .array()
            .tanh()
            .matrix();
    c.adapted[p] = state.tensor(state.adapter_w(p)) * c.feat_act[p] +
                   state.tensor(state.adapter_b(p)).col(0);
  }

  ForwardResult out;
  out.param_vector = c.param_out;
  out.params = FullBodyParams::unpack(c.param_out, dims);
  for (int p = 0; p < 3; ++p) out.feature[p] = c.adapted[p];
  return out;
}

// Backpropagates cotangents of the parameter head and the adapted features
// into a flat gradient over the full ModelState, accumulating into `grad`
// (sized to the state, zeroed by the caller).
inline void network_backward_into(const ModelState& state, const ForwardCache& cache,
                                  const VecX& dparam, const VecX dadapted[3],
                                  VecX& grad) {
  auto g = [&](int idx) {
    const auto& t = state.tensors[idx];
    return Eigen::Map<MatX>(grad.data() + t.offset, t.rows, t.cols);
  };
  const VecX& alast = cache.activations.back();

  VecX da = VecX::Zero(alast.size());
  if (dparam.size() != 0) {
    g(state.param_w()) += dparam * alast.transpose();
    g(state.param_b()).col(0) += dparam;
    da += state.tensor(state.param_w()).transpose() * dparam;
  }
  for (int p = 0; p < 3; ++p) {
    if (dadapted[p].size() == 0) continue;
    g(state.adapter_w(p)) += dadapted[p] * cache.feat_act[p].transpose();
    g(state.adapter_b(p)).col(0) += dadapted[p];
    VecX dfeat_act = state.tensor(state.adapter_w(p)).transpose() * dadapted[p];
    VecX dfeat_pre =
        (dfeat_act.array() * (1.0 - cache.feat_act[p].array().square())).matrix();
    g(state.feat_w(p)) += dfeat_pre * alast.transpose();
    g(state.feat_b(p)).col(0) += dfeat_pre;
    da += state.tensor(state.feat_w(p)).transpose() * dfeat_pre;
  }
  for (int l = static_cast<int>(state.cfg.hidden.size()) - 1; l >= 0; --l) {
    const VecX& a = cache.activations[l + 1];
    VecX dz = (da.array() * (1.0 - a.array().square())).matrix();
    g(state.trunk_w(l)) += dz * cache.activations[l].transpose();
    g(state.trunk_b(l)).col(0) += dz;
    da = state.tensor(state.trunk_w(l)).transpose() * dz;
  }
}

inline VecX network_backward(const ModelState& state, const ForwardCache& cache,
                             const VecX& dparam, const VecX dadapted[3]) {
  VecX grad = VecX::Zero(state.size());
  network_backward_into(state, cache, dparam, dadapted, grad);
  return grad;
}

struct ScalarGrad {
  double value = 0.0;
  VecX grad;
};

// Squared L2 between two equal-length vectors; gradient w.r.t. the first.
inline ScalarGrad loss_pose(const VecX& pred, const VecX& pseudo) {
  if (pred.size() != pseudo.size()) {
    throw std::invalid_argument("loss_pose: length mismatch");
  }
  ScalarGrad r;
  VecX d = pred - pseudo;
  r.value = d.squaredNorm();
  r.grad = 2.0 * d;
  return r;
}

inline ScalarGrad loss_expression(const VecX& pred, const VecX& pseudo) {
  return loss_pose(pred, pseudo);
}

// Visibility-masked L1 reprojection loss over the detected keypoints, with
// the gradient flowing through projection and forward kinematics back to
// the packed parameter vector. v_j is the binary pass of the keypoint's
// part confidence threshold. An optional part filter restricts the sum.
inline ScalarGrad loss_2d_joint(const FullBodyParams& pred_params,
                                const SkeletonTemplate& tpl, const Camera& camera,
                                const std::vector<KeypointObservation>& obs,
                                const ConfThresholds& thresholds,
                                std::optional<PartClass> part_filter = std::nullopt) {
  if (obs.empty()) throw std::invalid_argument("loss_2d_joint: empty observations");
  if (obs.size() != tpl.markers.size()) {
    throw ConfigError("loss_2d_joint: observation count mismatch");
  }
  FkCache cache;
  FkResult fk = forward_kinematics(pred_params, tpl, &cache);

  auto sign = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
  ScalarGrad r;
  std::vector<Vec3> marker_cot(tpl.markers.size(), Vec3::Zero());
  bool any = false;
  for (size_t m = 0; m < obs.size(); ++m) {
    const auto& kp = obs[m];
    if (part_filter && kp.part != *part_filter) continue;
    if (kp.missing()) continue;
    if (!(kp.confidence > thresholds.for_class(kp.part))) continue;
    any = true;
    Vec2 proj = project_point(fk.markers[m], camera);
    Vec2 e = proj - kp.position;
    r.value += std::abs(e.x()) + std::abs(e.y());
    Vec2 dpix(sign(e.x()), sign(e.y()));
    marker_cot[m] = project_jacobian(fk.markers[m], camera).transpose() * dpix;
  }
  if (!any) {
    r.grad = VecX::Zero(tpl.dims.param_count());
    return r;
  }
  r.grad = fk_backward(cache, tpl, {}, marker_cot);
  return r;
}

inline VecX softmax(const VecX& v, double temperature) {
  VecX z = v / temperature;
  double m = z.maxCoeff();
  VecX e = (z.array() - m).exp();
  return e / e.sum();
}

// Amplified KL divergence between softmax-normalized feature vectors,
// KL(pseudo || predicted), with the gradient w.r.t. the predicted features.
inline ScalarGrad loss_feature(const VecX& pred, const VecX& pseudo,
                               double amplification, double temperature = 1.0) {
  if (pred.size() != pseudo.size()) {
    throw std::invalid_argument("loss_feature: feature lengths differ");
  }
  VecX p = softmax(pred, temperature);
  VecX phat = softmax(pseudo, temperature);
  ScalarGrad r;
  r.value = amplification *
            (phat.array() * (phat.array().log() - p.array().log())).sum();
  r.grad = (amplification / temperature) * (p - phat);
  return r;
}

struct ConsistencyLoss {
  double value = 0.0;
  VecX grad_a, grad_b;
};

// Normalized cosine consistency: ||z_a/|z_a| - z_b/|z_b|||^2, identically
// 2 - 2 <z_a, z_b> / (|z_a| |z_b|). Value lies in [0, 4].
inline ConsistencyLoss ema_consistency_loss(const VecX& za, const VecX& zb) {
  if (za.size() != zb.size()) {
    throw std::invalid_argument("ema_consistency_loss: length mismatch");
  }
  double na = za.norm(), nb = zb.norm();
  if (na <= 0.0 || nb <= 0.0) {
    throw NumericError("ema_consistency_loss: zero-norm input");
  }
  double c = za.dot(zb) / (na * nb);
  ConsistencyLoss r;
  r.value = 2.0 - 2.0 * c;
  r.grad_a = (-2.0 / na) * (zb / nb - c * za / na);
  r.grad_b = (-2.0 / nb) * (za / na - c * zb / nb);
  return r;
}

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int lr_drop_epoch = 20;
  double lr_drop_factor = 0.1;
};

inline double scheduled_lr(const AdamConfig& cfg, int epoch) {
  return epoch >= cfg.lr_drop_epoch ? cfg.learning_rate * cfg.lr_drop_factor
                                    : cfg.learning_rate;
}

struct AdamMoments {
  VecX m, v;
  long step = 0;

  static AdamMoments zero(long n) { return {VecX::Zero(n), VecX::Zero(n), 0}; }
};

// One bias-corrected Adam update on a flat parameter vector. A non-finite
// gradient refuses the update and leaves parameters and moments untouched.
inline void adam_step(VecX& w, const VecX& grad, AdamMoments& mom, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (w.size() != grad.size() || mom.m.size() != w.size() || mom.v.size() != w.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!grad.allFinite()) {
    throw NumericError("adam_step: non-finite gradient, update refused");
  }
  mom.step += 1;
  mom.m = beta1 * mom.m + (1.0 - beta1) * grad;
  mom.v = beta2 * mom.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(mom.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(mom.step));
  w.array() -= lr * (mom.m.array() / bc1) /
               ((mom.v.array() / bc2).sqrt() + eps);
}

inline void adam_step(ModelState& state, const VecX& grad, AdamMoments& mom,
                      double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  adam_step(state.params, grad, mom, lr, beta1, beta2, eps);
}

// Central-difference gradient oracle (test support).
inline VecX finite_difference_gradient(const std::function<double(const VecX&)>& f,
                                       const VecX& x, double h = 1e-5) {
  if (!(h > 0)) throw std::invalid_argument("finite_difference_gradient: h must be > 0");
  VecX g(x.size());
  VecX xp = x;
  for (long i = 0; i < x.size(); ++i) {
    double orig = x[i];
    xp[i] = orig + h;
    double fp = f(xp);
    xp[i] = orig - h;
    double fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Per-term loss scalars; the totals reproduce the additive structure
// body + face + hand exactly.
struct LossBreakdown {
  double joint2d_body = 0, pose = 0;
  double joint2d_face = 0, expression = 0, jaw_pose = 0;
  double joint2d_hand = 0, hand_pose = 0;
  double feature_body = 0, feature_face = 0, feature_hand = 0;
  double body_total = 0, face_total = 0, hand_total = 0, total = 0;

  void finalize() {
    body_total = joint2d_body + pose + feature_body;
    face_total = joint2d_face + expression + jaw_pose + feature_face;
    hand_total = joint2d_hand + hand_pose + feature_hand;
    total = body_total + face_total + hand_total;
  }
};

struct LossWeights {
  double joint2d = 1.0;
  double pose = 1.0;
  double expression = 1.0;
  double jaw_pose = 1.0;
  double hand_pose = 1.0;
  double feature = 1.0;
};

struct LossConfig {
  double amplification = std::exp(5.0);
  double softmax_temperature = 1.0;
  FeatureDims adapter_dims;
  LossWeights weights;
  ConfThresholds thresholds;
};

struct TotalLossResult {
  LossBreakdown breakdown;
  VecX grad_state;  // d(total)/d(flat model parameters)
};

// Full distillation objective over one curated sample, with complete manual
// backpropagation through the network, forward kinematics, and projection.
// The gradient is accumulated into grad_accum (so batch workers can reuse a
// hot buffer). The forward cache can be kept (cache_out) so callers may
// backpropagate additional cotangents, e.g. the EMA consistency terms.
inline LossBreakdown loss_total_into(const ModelState& state,
                                     const CuratedSample& sample,
                                     const SkeletonTemplate& tpl, const LossConfig& cfg,
                                     VecX& grad_accum,
                                     ForwardCache* cache_out = nullptr,
                                     const VecX* precomputed_input = nullptr) {
  const ModelDims& dims = tpl.dims;
  VecX input = precomputed_input ? *precomputed_input
                                 : input_from_observations(sample.keypoints, sample.camera);
  ForwardCache cache;
  ForwardResult fwd = forward(state, input, dims, &cache);

  LossBreakdown bd;
  const LossWeights& w = cfg.weights;
  VecX dparam = VecX::Zero(dims.param_count());

  // 2D reprojection terms: one FK pass, per-part L1 sums, shared backward.
  {
    FkCache fkc;
    FkResult fk = forward_kinematics(fwd.params, tpl, &fkc);
    auto sign = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
    std::vector<Vec3> marker_cot(tpl.markers.size(), Vec3::Zero());
    bool any = false;
    for (size_t m = 0; m < sample.keypoints.size(); ++m) {
      const auto& kp = sample.keypoints[m];
      if (kp.missing()) continue;
      if (!(kp.confidence > cfg.thresholds.for_class(kp.part))) continue;
      any = true;
      Vec2 proj = project_point(fk.markers[m], sample.camera);
      Vec2 e = proj - kp.position;
      double l1 = std::abs(e.x()) + std::abs(e.y());
      switch (kp.part) {
        case PartClass::Body: bd.joint2d_body += w.joint2d * l1; break;
        case PartClass::Face: bd.joint2d_face += w.joint2d * l1; break;
        case PartClass::Hand: bd.joint2d_hand += w.joint2d * l1; break;
      }
      Vec2 dpix(w.joint2d * sign(e.x()), w.joint2d * sign(e.y()));
      marker_cot[m] = project_jacobian(fk.markers[m], sample.camera).transpose() * dpix;
    }
    if (any) dparam += fk_backward(fkc, tpl, {}, marker_cot);
  }

  // Zero-weighted terms are skipped outright, so configurations without
  // pseudo labels never touch (or require) the label/feature fields.
  VecX pseudo;
  auto add_sq_term = [&](int offset, int len, double weight, double& slot) {
    if (weight == 0.0) return;
    if (pseudo.size() == 0) pseudo = sample.fused.pack(dims);
    ScalarGrad g = loss_pose(fwd.param_vector.segment(offset, len),
                             pseudo.segment(offset, len));
    slot += weight * g.value;
    dparam.segment(offset, len) += weight * g.grad;
  };
  add_sq_term(dims.body_pose_offset(), 3 * dims.body_joints, w.pose, bd.pose);
  add_sq_term(dims.jaw_pose_offset(), 3, w.jaw_pose, bd.jaw_pose);
  add_sq_term(dims.expression_offset(), dims.expression_dims, w.expression,
              bd.expression);
  add_sq_term(dims.lhand_pose_offset(), 3 * dims.hand_joints, w.hand_pose,
              bd.hand_pose);
  add_sq_term(dims.rhand_pose_offset(), 3 * dims.hand_joints, w.hand_pose,
              bd.hand_pose);

  // Feature distillation; the hand head serves both hands. Samples without
  // a stored pseudo feature (e.g. directly annotated ones) skip the term.
  VecX dadapted[3];
  auto add_feature = [&](int head, const VecX& pseudo_f, double& slot) {
    if (w.feature == 0.0 || pseudo_f.size() == 0) return;
    ScalarGrad g = loss_feature(cache.adapted[head], pseudo_f, cfg.amplification,
                                cfg.softmax_temperature);
    slot += w.feature * g.value;
    if (dadapted[head].size() == 0) dadapted[head] = VecX::Zero(cache.adapted[head].size());
    dadapted[head] += w.feature * g.grad;
  };
  add_feature(0, sample.feature_body, bd.feature_body);
  add_feature(1, sample.feature_face, bd.feature_face);
  add_feature(2, sample.feature_lhand, bd.feature_hand);
  add_feature(2, sample.feature_rhand, bd.feature_hand);

  bd.finalize();
  network_backward_into(state, cache, dparam, dadapted, grad_accum);
  if (cache_out) *cache_out = cache;
  return bd;
}

inline TotalLossResult loss_total(const ModelState& state, const CuratedSample& sample,
                                  const SkeletonTemplate& tpl, const LossConfig& cfg,
                                  ForwardCache* cache_out = nullptr,
                                  const VecX* precomputed_input = nullptr) {
  TotalLossResult out;
  out.grad_state = VecX::Zero(state.size());
  out.breakdown = loss_total_into(state, sample, tpl, cfg, out.grad_state, cache_out,
                                  precomputed_input);
  return out;
}

}  // namespace furpe
