#pragma once

#include <set>
#include <string>

#include "furpe/serialize.hpp"
#include "furpe/trainer.hpp"

namespace furpe {

// Full pipeline configuration. Loading is strict: the version field is
// mandatory and unknown keys are rejected so typos cannot silently change a
// run.
struct PipelineConfig {
  std::string preset = "toy";
  ModelDims dims = ModelDims::toy();
  FeatureDims feature_dims = FeatureDims::toy();
  uint64_t template_seed = 42;
  Camera camera;
  double pose_prior_scale = 0.2;
  NoiseProfile noise;
  SelectionConfig selection;

  double amplification = std::exp(5.0);
  double softmax_temperature = 1.0;
  LossWeights loss_weights;

  std::vector<int> hidden{64, 64};
  int native_feature_dim = 16;
  uint64_t init_seed = 1;

  AdamConfig adam;
  int batch_size = 32;
  int epochs = 10;

  EmaConfig ema;
  AugmentationConfig augmentation;

  uint64_t seed = 7;
  int threads = 1;

  std::string train_data, eval_data, out_dir;  // optional path defaults

  LossConfig loss_config() const {
    LossConfig c;
    c.amplification = amplification;
    c.softmax_temperature = softmax_temperature;
    c.adapter_dims = feature_dims;
    c.weights = loss_weights;
    c.thresholds = selection.thresholds;
    return c;
  }

  TrainHyper hyper() const {
    TrainHyper h;
    h.adam = adam;
    h.epochs = epochs;
    h.batch_size = batch_size;
    h.seed = seed;
    h.loss = loss_config();
    h.threads = threads;
    return h;
  }

  NetConfig net_config() const {
    return NetConfig::for_model(dims, feature_dims, hidden, native_feature_dim);
  }

  void validate() const {
    dims.validate();
    camera.validate();
    noise.validate();
    selection.validate();
    ema.validate();
    augmentation.validate();
    if (pose_prior_scale < 0) throw ConfigError("config: pose_prior_scale must be >= 0");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
    if (amplification <= 0) throw ConfigError("config: amplification must be > 0");
    if (softmax_temperature <= 0) throw ConfigError("config: temperature must be > 0");
    if (feature_dims.body < 1 || feature_dims.face < 1 || feature_dims.hand < 1) {
      throw ConfigError("config: feature dims must be >= 1");
    }
  }
};

namespace detail {

inline void expect_keys(const json& j, const std::set<std::string>& allowed,
                        const std::string& context) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ValidationError("config: unknown key \"" + it.key() + "\" in " + context);
    }
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace detail

inline PipelineConfig config_from_json(const json& j) {
  check_schema_version(j, "config");
  detail::expect_keys(
      j,
      {"schema_version", "preset", "dims", "feature_dims", "template_seed", "camera",
       "pose_prior_scale", "noise", "selection", "loss", "model", "optimizer", "ema",
       "augmentation", "seed", "threads", "paths"},
      "top level");

  PipelineConfig c;
  c.preset = detail::get_or<std::string>(j, "preset", "toy");
  if (c.preset == "toy") {
    c.dims = ModelDims::toy();
    c.feature_dims = FeatureDims::toy();
  } else if (c.preset == "paper") {
    c.dims = ModelDims::paper();
    c.feature_dims = FeatureDims::paper();
  } else if (c.preset == "custom") {
    if (!j.contains("dims")) {
      throw ValidationError("config: preset \"custom\" requires a dims object");
    }
  } else {
    throw ValidationError("config: preset must be toy, paper, or custom");
  }
  if (j.contains("dims")) c.dims = j.at("dims").get<ModelDims>();
  if (j.contains("feature_dims")) c.feature_dims = j.at("feature_dims").get<FeatureDims>();
  c.template_seed = detail::get_or<uint64_t>(j, "template_seed", c.template_seed);
  if (j.contains("camera")) {
    detail::expect_keys(j.at("camera"), {"focal_length", "principal_point", "subject_depth"},
                        "camera");
    c.camera = j.at("camera").get<Camera>();
  }
  c.pose_prior_scale = detail::get_or<double>(j, "pose_prior_scale", c.pose_prior_scale);

  if (j.contains("noise")) {
    const json& n = j.at("noise");
    detail::expect_keys(n,
                        {"keypoint_jitter_sigma", "keypoint_dropout_prob",
                         "param_sigma_body", "param_sigma_face", "param_sigma_hand",
                         "param_sigma_translation", "feature_noise_sigma",
                         "invalid_output_prob", "gross_error_prob", "gross_error_magnitude"},
                        "noise");
    c.noise.keypoint_jitter_sigma = detail::get_or<double>(n, "keypoint_jitter_sigma", 0.0);
    c.noise.keypoint_dropout_prob = detail::get_or<double>(n, "keypoint_dropout_prob", 0.0);
    c.noise.param_sigma_body = detail::get_or<double>(n, "param_sigma_body", 0.0);
    c.noise.param_sigma_face = detail::get_or<double>(n, "param_sigma_face", 0.0);
    c.noise.param_sigma_hand = detail::get_or<double>(n, "param_sigma_hand", 0.0);
    c.noise.param_sigma_translation =
        detail::get_or<double>(n, "param_sigma_translation", 0.0);
    c.noise.feature_noise_sigma = detail::get_or<double>(n, "feature_noise_sigma", 0.0);
    c.noise.invalid_output_prob = detail::get_or<double>(n, "invalid_output_prob", 0.0);
    c.noise.gross_error_prob = detail::get_or<double>(n, "gross_error_prob", 0.0);
    c.noise.gross_error_magnitude = detail::get_or<double>(n, "gross_error_magnitude", 0.0);
  }

  if (j.contains("selection")) {
    const json& s = j.at("selection");
    detail::expect_keys(s,
                        {"confidence_threshold_body", "confidence_threshold_hand",
                         "confidence_threshold_face", "min_confident_keypoints",
                         "reprojection_gate_cm", "axis_angle_bound", "shape_bound"},
                        "selection");
    c.selection.thresholds.body = detail::get_or<double>(s, "confidence_threshold_body", 0.1);
    c.selection.thresholds.hand = detail::get_or<double>(s, "confidence_threshold_hand", 0.2);
    c.selection.thresholds.face = detail::get_or<double>(s, "confidence_threshold_face", 0.4);
    c.selection.min_confident_keypoints =
        detail::get_or<int>(s, "min_confident_keypoints", 12);
    c.selection.reprojection_gate_cm = detail::get_or<double>(s, "reprojection_gate_cm", 1.5);
    c.selection.axis_angle_bound =
        detail::get_or<double>(s, "axis_angle_bound", 2.0 * M_PI);
    c.selection.shape_bound = detail::get_or<double>(s, "shape_bound", 5.0);
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    detail::expect_keys(l, {"amplification", "softmax_temperature", "weights"}, "loss");
    c.amplification = detail::get_or<double>(l, "amplification", c.amplification);
    c.softmax_temperature =
        detail::get_or<double>(l, "softmax_temperature", c.softmax_temperature);
    if (l.contains("weights")) {
      const json& w = l.at("weights");
      detail::expect_keys(
          w, {"joint2d", "pose", "expression", "jaw_pose", "hand_pose", "feature"},
          "loss.weights");
      c.loss_weights.joint2d = detail::get_or<double>(w, "joint2d", 1.0);
      c.loss_weights.pose = detail::get_or<double>(w, "pose", 1.0);
      c.loss_weights.expression = detail::get_or<double>(w, "expression", 1.0);
      c.loss_weights.jaw_pose = detail::get_or<double>(w, "jaw_pose", 1.0);
      c.loss_weights.hand_pose = detail::get_or<double>(w, "hand_pose", 1.0);
      c.loss_weights.feature = detail::get_or<double>(w, "feature", 1.0);
    }
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    detail::expect_keys(m, {"hidden", "native_feature_dim", "init_seed"}, "model");
    if (m.contains("hidden")) c.hidden = m.at("hidden").get<std::vector<int>>();
    c.native_feature_dim = detail::get_or<int>(m, "native_feature_dim", c.native_feature_dim);
    c.init_seed = detail::get_or<uint64_t>(m, "init_seed", c.init_seed);
  }

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    detail::expect_keys(o,
                        {"learning_rate", "beta1", "beta2", "epsilon", "lr_drop_epoch",
                         "lr_drop_factor", "batch_size", "epochs"},
                        "optimizer");
    c.adam.learning_rate = detail::get_or<double>(o, "learning_rate", 1e-5);
    c.adam.beta1 = detail::get_or<double>(o, "beta1", 0.9);
    c.adam.beta2 = detail::get_or<double>(o, "beta2", 0.999);
    c.adam.epsilon = detail::get_or<double>(o, "epsilon", 1e-8);
    c.adam.lr_drop_epoch = detail::get_or<int>(o, "lr_drop_epoch", 20);
    c.adam.lr_drop_factor = detail::get_or<double>(o, "lr_drop_factor", 0.1);
    c.batch_size = detail::get_or<int>(o, "batch_size", 32);
    c.epochs = detail::get_or<int>(o, "epochs", 10);
  }

  if (j.contains("ema")) {
    const json& e = j.at("ema");
    detail::expect_keys(e, {"enabled", "decay", "direction", "start_epoch"}, "ema");
    c.ema.enabled = detail::get_or<bool>(e, "enabled", false);
    c.ema.decay = detail::get_or<double>(e, "decay", 0.99);
    std::string dir = detail::get_or<std::string>(e, "direction", "paper_text");
    if (dir == "paper_text") {
      c.ema.direction = EmaDirection::PaperText;
    } else if (dir == "conventional") {
      c.ema.direction = EmaDirection::Conventional;
    } else {
      throw ValidationError("config: ema.direction must be paper_text or conventional");
    }
    c.ema.start_epoch = detail::get_or<int>(e, "start_epoch", 0);
  }

  if (j.contains("augmentation")) {
    const json& a = j.at("augmentation");
    detail::expect_keys(a, {"jitter_sigma", "rotation_range", "dropout_prob"},
                        "augmentation");
    c.augmentation.jitter_sigma = detail::get_or<double>(a, "jitter_sigma", 0.0);
    c.augmentation.rotation_range = detail::get_or<double>(a, "rotation_range", 0.0);
    c.augmentation.dropout_prob = detail::get_or<double>(a, "dropout_prob", 0.0);
  }

  c.seed = detail::get_or<uint64_t>(j, "seed", c.seed);
  c.threads = detail::get_or<int>(j, "threads", c.threads);

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    detail::expect_keys(p, {"train_data", "eval_data", "out_dir"}, "paths");
    c.train_data = detail::get_or<std::string>(p, "train_data", "");
    c.eval_data = detail::get_or<std::string>(p, "eval_data", "");
    c.out_dir = detail::get_or<std::string>(p, "out_dir", "");
  }

  c.validate();
  return c;
}

inline json config_to_json(const PipelineConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["preset"] = c.preset;
  j["dims"] = c.dims;
  j["feature_dims"] = c.feature_dims;
  j["template_seed"] = c.template_seed;
  j["camera"] = c.camera;
  j["pose_prior_scale"] = c.pose_prior_scale;
  j["noise"] = json{{"keypoint_jitter_sigma", c.noise.keypoint_jitter_sigma},
                    {"keypoint_dropout_prob", c.noise.keypoint_dropout_prob},
                    {"param_sigma_body", c.noise.param_sigma_body},
                    {"param_sigma_face", c.noise.param_sigma_face},
                    {"param_sigma_hand", c.noise.param_sigma_hand},
                    {"param_sigma_translation", c.noise.param_sigma_translation},
                    {"feature_noise_sigma", c.noise.feature_noise_sigma},
                    {"invalid_output_prob", c.noise.invalid_output_prob},
                    {"gross_error_prob", c.noise.gross_error_prob},
                    {"gross_error_magnitude", c.noise.gross_error_magnitude}};
  j["selection"] = json{{"confidence_threshold_body", c.selection.thresholds.body},
                        {"confidence_threshold_hand", c.selection.thresholds.hand},
                        {"confidence_threshold_face", c.selection.thresholds.face},
                        {"min_confident_keypoints", c.selection.min_confident_keypoints},
                        {"reprojection_gate_cm", c.selection.reprojection_gate_cm},
                        {"axis_angle_bound", c.selection.axis_angle_bound},
                        {"shape_bound", c.selection.shape_bound}};
  j["loss"] = json{{"amplification", c.amplification},
                   {"softmax_temperature", c.softmax_temperature},
                   {"weights", json{{"joint2d", c.loss_weights.joint2d},
                                    {"pose", c.loss_weights.pose},
                                    {"expression", c.loss_weights.expression},
                                    {"jaw_pose", c.loss_weights.jaw_pose},
                                    {"hand_pose", c.loss_weights.hand_pose},
                                    {"feature", c.loss_weights.feature}}}};
  j["model"] = json{{"hidden", c.hidden},
                    {"native_feature_dim", c.native_feature_dim},
                    {"init_seed", c.init_seed}};
  j["optimizer"] = json{{"learning_rate", c.adam.learning_rate},
                        {"beta1", c.adam.beta1},
                        {"beta2", c.adam.beta2},
                        {"epsilon", c.adam.epsilon},
                        {"lr_drop_epoch", c.adam.lr_drop_epoch},
                        {"lr_drop_factor", c.adam.lr_drop_factor},
                        {"batch_size", c.batch_size},
                        {"epochs", c.epochs}};
  j["ema"] = json{{"enabled", c.ema.enabled},
                  {"decay", c.ema.decay},
                  {"direction", c.ema.direction == EmaDirection::PaperText
                                    ? "paper_text"
                                    : "conventional"},
                  {"start_epoch", c.ema.start_epoch}};
  j["augmentation"] = json{{"jitter_sigma", c.augmentation.jitter_sigma},
                           {"rotation_range", c.augmentation.rotation_range},
                           {"dropout_prob", c.augmentation.dropout_prob}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["paths"] = json{{"train_data", c.train_data},
                    {"eval_data", c.eval_data},
                    {"out_dir", c.out_dir}};
  return j;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace furpe
