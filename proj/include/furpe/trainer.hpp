#pragma once

#include <optional>
#include <thread>

#include "furpe/eval.hpp"
#include "furpe/learn.hpp"

namespace furpe {

// Teacher-student EMA configuration. paper_text keeps the teacher as the
// gradient-updated network and the student as the moving average; the
// conventional direction swaps them. Either way the student is the
// inference model.
enum class EmaDirection { PaperText, Conventional };

struct EmaConfig {
  bool enabled = false;
  double decay = 0.99;  // tau
  EmaDirection direction = EmaDirection::PaperText;
  int start_epoch = 0;

  void validate() const {
    if (decay < 0.0 || decay > 1.0) throw ConfigError("EmaConfig: decay must lie in [0,1]");
    if (start_epoch < 0) throw ConfigError("EmaConfig: start_epoch must be >= 0");
  }
};

struct AugmentationConfig {
  double jitter_sigma = 0.0;     // pixels
  double rotation_range = 0.0;   // radians, in-plane, about the principal point
  double dropout_prob = 0.0;

  void validate() const {
    if (jitter_sigma < 0 || rotation_range < 0 || dropout_prob < 0 || dropout_prob > 1) {
      throw ConfigError("AugmentationConfig: magnitudes must be nonnegative");
    }
  }
};

struct AugmentResult {
  std::vector<KeypointObservation> observations;
  double angle = 0.0;  // the in-plane rotation that was applied
};

// In-plane rotation about the principal point, then jitter and dropout.
// Dropped keypoints get confidence 0.
inline AugmentResult augment_with_info(const std::vector<KeypointObservation>& obs,
                                       const Camera& camera,
                                       const AugmentationConfig& cfg, Rng& rng) {
  cfg.validate();
  AugmentResult out;
  out.angle = cfg.rotation_range > 0 ? rng.uniform(-cfg.rotation_range, cfg.rotation_range)
                                     : 0.0;
  double c = std::cos(out.angle), s = std::sin(out.angle);
  out.observations = obs;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto& kp : out.observations) {
    double jx = rng.normal(0, cfg.jitter_sigma);
    double jy = rng.normal(0, cfg.jitter_sigma);
    bool drop = rng.bernoulli(cfg.dropout_prob);
    if (kp.missing()) continue;
    if (drop) {
      kp.position = Vec2(nan, nan);
      kp.confidence = 0.0;
      continue;
    }
    Vec2 centered = kp.position - camera.principal_point;
    kp.position = camera.principal_point +
                  Vec2(c * centered.x() - s * centered.y(),
                       s * centered.x() + c * centered.y()) +
                  Vec2(jx, jy);
  }
  return out;
}

inline std::vector<KeypointObservation> augment(
    const std::vector<KeypointObservation>& obs, const Camera& camera,
    const AugmentationConfig& cfg, uint64_t seed) {
  Rng rng(derive_seed(seed, 0xA06ULL));
  return augment_with_info(obs, camera, cfg, rng).observations;
}

// Rotating all keypoints by `angle` about the principal point corresponds
// to rotating the subject about the optical axis: pre-compose the global
// root rotation and rotate the translation.
inline FullBodyParams rotate_params_in_plane(const FullBodyParams& params, double angle) {
  if (angle == 0.0) return params;
  double c = std::cos(angle), s = std::sin(angle);
  Mat3 rz;
  rz << c, -s, 0, s, c, 0, 0, 0, 1;
  FullBodyParams out = params;
  out.body.pose[0] = rotation_log(rz * rodrigues(params.body.pose[0]));
  out.root_translation = rz * params.root_translation;
  return out;
}

// phi -> tau * phi + (1 - tau) * sigma, coordinate-wise on the flat vector.
inline void ema_update(VecX& receiver, const VecX& source, double tau) {
  if (receiver.size() != source.size()) {
    throw std::invalid_argument("ema_update: shape mismatch");
  }
  receiver = tau * receiver + (1.0 - tau) * source;
}

inline void ema_update(ModelState& receiver, const ModelState& source, double tau) {
  if (!(receiver.cfg == source.cfg)) {
    throw std::invalid_argument("ema_update: model configurations differ");
  }
  ema_update(receiver.params, source.params, tau);
}

struct TrainHyper {
  AdamConfig adam;
  int epochs = 10;
  int batch_size = 32;
  uint64_t seed = 0;
  LossConfig loss;
  int threads = 1;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown mean_loss;
  double consistency_o2t = 0.0, consistency_t2o = 0.0;
  bool has_eval = false;
  MetricReport eval;
};

struct TrainRun {
  std::vector<EpochStats> epochs;
  ModelState student;
  std::optional<ModelState> teacher;
  uint64_t seed = 0;
};

namespace detail {

inline void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.joint2d_body += b.joint2d_body;
  acc.pose += b.pose;
  acc.joint2d_face += b.joint2d_face;
  acc.expression += b.expression;
  acc.jaw_pose += b.jaw_pose;
  acc.joint2d_hand += b.joint2d_hand;
  acc.hand_pose += b.hand_pose;
  acc.feature_body += b.feature_body;
  acc.feature_face += b.feature_face;
  acc.feature_hand += b.feature_hand;
  acc.body_total += b.body_total;
  acc.face_total += b.face_total;
  acc.hand_total += b.hand_total;
  acc.total += b.total;
}

inline void scale(LossBreakdown& b, double f) {
  b.joint2d_body *= f;
  b.pose *= f;
  b.joint2d_face *= f;
  b.expression *= f;
  b.jaw_pose *= f;
  b.joint2d_hand *= f;
  b.hand_pose *= f;
  b.feature_body *= f;
  b.feature_face *= f;
  b.feature_hand *= f;
  b.body_total *= f;
  b.face_total *= f;
  b.hand_total *= f;
  b.total *= f;
}

inline std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  for (size_t i = n; i > 1; --i) {
    size_t j = rng.below(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// Strided parallel map. Work item i runs on worker i % workers, and
// per-worker partial results merged in worker order are deterministic for a
// fixed thread count.
template <typename Fn>
inline void parallel_for_workers(size_t n, int threads, Fn&& fn) {
  int workers = static_cast<int>(std::min<size_t>(std::max(threads, 1), n));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (size_t i = w; i < n; i += workers) fn(i, w);
    });
  }
  for (auto& t : pool) t.join();
}

template <typename Fn>
inline void parallel_for(size_t n, int threads, Fn&& fn) {
  parallel_for_workers(n, threads, [&](size_t i, int) { fn(i); });
}

}  // namespace detail

// Distillation training over curated pseudo-labeled samples: mini-batch
// Adam on loss_total with the step learning-rate schedule.
inline TrainRun train_distill(const std::vector<CuratedSample>& dataset,
                              const EvalDataset& eval_data, const ModelState& init,
                              const SkeletonTemplate& tpl, const TrainHyper& hyper) {
  if (dataset.empty()) throw ConfigError("train_distill: empty dataset");
  TrainRun run;
  run.seed = hyper.seed;
  ModelState state = init;
  AdamMoments moments = AdamMoments::zero(state.size());

  std::vector<VecX> inputs(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    inputs[i] = input_from_observations(dataset[i].keypoints, dataset[i].camera);
  }

  const int workers = std::max(1, hyper.threads);
  std::vector<VecX> wgrad(workers, VecX::Zero(state.size()));
  std::vector<LossBreakdown> wloss(workers);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    double lr = scheduled_lr(hyper.adam, epoch);
    Rng shuffle_rng(derive_seed(hyper.seed, 0xE60C0000ULL + epoch));
    auto order = detail::shuffled_indices(dataset.size(), shuffle_rng);

    LossBreakdown epoch_loss;
    for (size_t start = 0; start < order.size(); start += hyper.batch_size) {
      size_t count = std::min<size_t>(hyper.batch_size, order.size() - start);
      for (int w = 0; w < workers; ++w) {
        wgrad[w].setZero();
        wloss[w] = LossBreakdown{};
      }
      detail::parallel_for_workers(count, hyper.threads, [&](size_t k, int w) {
        size_t idx = order[start + k];
        LossBreakdown bd = loss_total_into(state, dataset[idx], tpl, hyper.loss,
                                           wgrad[w], nullptr, &inputs[idx]);
        detail::accumulate(wloss[w], bd);
      });
      for (int w = 1; w < workers; ++w) wgrad[0] += wgrad[w];
      for (int w = 0; w < workers; ++w) detail::accumulate(epoch_loss, wloss[w]);
      wgrad[0] /= static_cast<double>(count);
      adam_step(state, wgrad[0], moments, lr, hyper.adam.beta1, hyper.adam.beta2,
                hyper.adam.epsilon);
    }
    detail::scale(epoch_loss, 1.0 / static_cast<double>(dataset.size()));

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.mean_loss = epoch_loss;
    if (!eval_data.empty()) {
      stats.eval = evaluate(state, eval_data, tpl);
      stats.has_eval = true;
    }
    run.epochs.push_back(std::move(stats));
  }
  run.student = std::move(state);
  return run;
}

// EMA teacher-student self-supervision. Each sample is augmented twice; the
// first view feeds the teacher, the second the student. The gradient-updated
// network (per EmaConfig::direction) minimizes
// L_total + L_{o->t} + L_{t->o} with the counterpart's output held fixed;
// the other network follows by exponential moving average once per step.
inline TrainRun train_ema(const std::vector<CuratedSample>& dataset,
                          const EvalDataset& eval_data, const ModelState& student_init,
                          const ModelState& teacher_init, const SkeletonTemplate& tpl,
                          const TrainHyper& hyper, const EmaConfig& ema,
                          const AugmentationConfig& aug) {
  ema.validate();
  aug.validate();
  if (!ema.enabled) {
    // Degenerates exactly to plain distillation of the student.
    return train_distill(dataset, eval_data, student_init, tpl, hyper);
  }
  if (dataset.empty()) throw ConfigError("train_ema: empty dataset");

  TrainRun run;
  run.seed = hyper.seed;
  ModelState student = student_init;
  ModelState teacher = teacher_init;
  const bool teacher_grads = ema.direction == EmaDirection::PaperText;
  ModelState& grad_net = teacher_grads ? teacher : student;
  ModelState& ema_net = teacher_grads ? student : teacher;
  AdamMoments moments = AdamMoments::zero(grad_net.size());

  const int workers = std::max(1, hyper.threads);
  std::vector<VecX> wgrad(workers, VecX::Zero(grad_net.size()));
  std::vector<LossBreakdown> wloss(workers);
  std::vector<double> wcons(workers);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    double lr = scheduled_lr(hyper.adam, epoch);
    bool ema_active = epoch >= ema.start_epoch;
    Rng shuffle_rng(derive_seed(hyper.seed, 0xE60C0000ULL + epoch));
    auto order = detail::shuffled_indices(dataset.size(), shuffle_rng);

    LossBreakdown epoch_loss;
    double epoch_consistency = 0.0;
    for (size_t start = 0; start < order.size(); start += hyper.batch_size) {
      size_t count = std::min<size_t>(hyper.batch_size, order.size() - start);
      for (int w = 0; w < workers; ++w) {
        wgrad[w].setZero();
        wloss[w] = LossBreakdown{};
        wcons[w] = 0.0;
      }
      detail::parallel_for_workers(count, hyper.threads, [&](size_t k, int w) {
        size_t idx = order[start + k];
        const CuratedSample& sample = dataset[idx];
        uint64_t tag = (static_cast<uint64_t>(epoch) << 32) ^
                       static_cast<uint64_t>(start + k);
        Rng rng(derive_seed(hyper.seed ^ 0xEA70ULL, tag));
        AugmentResult teacher_view =
            augment_with_info(sample.keypoints, sample.camera, aug, rng);
        AugmentResult student_view =
            augment_with_info(sample.keypoints, sample.camera, aug, rng);
        const AugmentResult& g_view = teacher_grads ? teacher_view : student_view;
        const AugmentResult& o_view = teacher_grads ? student_view : teacher_view;

        CuratedSample aug_sample = sample;
        aug_sample.keypoints = g_view.observations;
        aug_sample.fused = rotate_params_in_plane(sample.fused, g_view.angle);

        ForwardCache cache;
        detail::accumulate(wloss[w], loss_total_into(grad_net, aug_sample, tpl,
                                                     hyper.loss, wgrad[w], &cache));
        if (ema_active) {
          VecX o_input = input_from_observations(o_view.observations, sample.camera);
          VecX z_other = forward(ema_net, o_input, tpl.dims).param_vector;
          if (cache.param_out.norm() > 0 && z_other.norm() > 0) {
            ConsistencyLoss cons = ema_consistency_loss(cache.param_out, z_other);
            wcons[w] += cons.value;
            // L_{o->t} and L_{t->o} share the value; both push the
            // gradient-updated network (stop-gradient on the counterpart).
            VecX dz = 2.0 * cons.grad_a;
            VecX no_feat[3];
            network_backward_into(grad_net, cache, dz, no_feat, wgrad[w]);
          }
        }
      });

      for (int w = 1; w < workers; ++w) wgrad[0] += wgrad[w];
      for (int w = 0; w < workers; ++w) {
        detail::accumulate(epoch_loss, wloss[w]);
        epoch_consistency += wcons[w];
      }
      wgrad[0] /= static_cast<double>(count);
      adam_step(grad_net, wgrad[0], moments, lr, hyper.adam.beta1, hyper.adam.beta2,
                hyper.adam.epsilon);
      if (ema_active) ema_update(ema_net, grad_net, ema.decay);
    }
    detail::scale(epoch_loss, 1.0 / static_cast<double>(dataset.size()));
    epoch_consistency /= static_cast<double>(dataset.size());

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.mean_loss = epoch_loss;
    stats.consistency_o2t = epoch_consistency;
    stats.consistency_t2o = epoch_consistency;
    if (!eval_data.empty()) {
      stats.eval = evaluate(student, eval_data, tpl);  // the inference model
      stats.has_eval = true;
    }
    run.epochs.push_back(std::move(stats));
  }
  run.student = std::move(student);
  run.teacher = std::move(teacher);
  return run;
}

}  // namespace furpe
