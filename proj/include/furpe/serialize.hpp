#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "furpe/curation.hpp"
#include "furpe/eval.hpp"
#include "furpe/learn.hpp"
#include "furpe/synth.hpp"

namespace furpe {

using json = nlohmann::json;

constexpr int kSchemaVersion = 1;

inline void check_schema_version(const json& j, const std::string& what) {
  if (!j.contains("schema_version")) {
    throw ValidationError(what + ": missing schema_version field");
  }
  int v = j.at("schema_version").get<int>();
  if (v != kSchemaVersion) {
    throw ValidationError(what + ": schema_version " + std::to_string(v) +
                          " is not supported; this build reads version " +
                          std::to_string(kSchemaVersion) +
                          " — upgrade the file or the tool");
  }
}

// ---- small vector/matrix helpers ----

inline json vec_to_json(const VecX& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline VecX vec_from_json(const json& a) {
  VecX v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

inline json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const json& a) {
  return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
}

inline json mat3x_to_json(const Eigen::Matrix3Xd& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::Matrix3Xd mat3x_from_json(const json& rows) {
  if (rows.size() != 3) throw ValidationError("matrix: expected 3 rows");
  Eigen::Matrix3Xd m(3, rows.at(0).size());
  for (int r = 0; r < 3; ++r) {
    for (size_t c = 0; c < rows.at(r).size(); ++c) m(r, c) = rows[r][c].get<double>();
  }
  return m;
}

// ---- domain types ----

inline void to_json(json& j, const Camera& c) {
  j = json{{"focal_length", c.focal_length},
           {"principal_point", json::array({c.principal_point.x(), c.principal_point.y()})},
           {"subject_depth", c.subject_depth}};
}

inline void from_json(const json& j, Camera& c) {
  c.focal_length = j.at("focal_length").get<double>();
  c.principal_point =
      Vec2(j.at("principal_point").at(0).get<double>(), j.at("principal_point").at(1).get<double>());
  c.subject_depth = j.at("subject_depth").get<double>();
}

inline void to_json(json& j, const ModelDims& d) {
  j = json{{"body_joints", d.body_joints},     {"body_shape", d.body_shape},
           {"face_joints", d.face_joints},     {"expression_dims", d.expression_dims},
           {"hand_joints", d.hand_joints},     {"hand_shape", d.hand_shape},
           {"body_markers", d.body_markers},   {"face_markers", d.face_markers},
           {"hand_markers", d.hand_markers}};
}

inline void from_json(const json& j, ModelDims& d) {
  d.body_joints = j.at("body_joints").get<int>();
  d.body_shape = j.at("body_shape").get<int>();
  d.face_joints = j.at("face_joints").get<int>();
  d.expression_dims = j.at("expression_dims").get<int>();
  d.hand_joints = j.at("hand_joints").get<int>();
  d.hand_shape = j.at("hand_shape").get<int>();
  d.body_markers = j.at("body_markers").get<int>();
  d.face_markers = j.at("face_markers").get<int>();
  d.hand_markers = j.at("hand_markers").get<int>();
}

inline void to_json(json& j, const FeatureDims& d) {
  j = json{{"body", d.body}, {"face", d.face}, {"hand", d.hand}};
}

inline void from_json(const json& j, FeatureDims& d) {
  d.body = j.at("body").get<int>();
  d.face = j.at("face").get<int>();
  d.hand = j.at("hand").get<int>();
}

inline json axis_angles_to_json(const std::vector<AxisAngle>& aas) {
  json a = json::array();
  for (const auto& aa : aas) a.push_back(vec3_to_json(aa));
  return a;
}

inline std::vector<AxisAngle> axis_angles_from_json(const json& a) {
  std::vector<AxisAngle> out;
  out.reserve(a.size());
  for (const auto& e : a) out.push_back(vec3_from_json(e));
  return out;
}

inline void to_json(json& j, const BodyParams& p) {
  j = json{{"pose", axis_angles_to_json(p.pose)}, {"shape", vec_to_json(p.shape)}};
}

inline void from_json(const json& j, BodyParams& p) {
  p.pose = axis_angles_from_json(j.at("pose"));
  p.shape = vec_from_json(j.at("shape"));
}

inline void to_json(json& j, const FaceParams& p) {
  j = json{{"jaw_pose", vec3_to_json(p.jaw_pose)},
           {"other_poses", axis_angles_to_json(p.other_poses)},
           {"expression", vec_to_json(p.expression)}};
}

inline void from_json(const json& j, FaceParams& p) {
  p.jaw_pose = vec3_from_json(j.at("jaw_pose"));
  p.other_poses = axis_angles_from_json(j.at("other_poses"));
  p.expression = vec_from_json(j.at("expression"));
}

inline void to_json(json& j, const HandParams& p) {
  j = json{{"pose", axis_angles_to_json(p.pose)},
           {"shape", vec_to_json(p.shape)},
           {"side", to_string(p.side)}};
}

inline void from_json(const json& j, HandParams& p) {
  p.pose = axis_angles_from_json(j.at("pose"));
  p.shape = vec_from_json(j.at("shape"));
  p.side = side_from_string(j.at("side").get<std::string>());
}

inline void to_json(json& j, const FullBodyParams& p) {
  j = json{{"body", p.body},
           {"face", p.face},
           {"left_hand", p.left_hand},
           {"right_hand", p.right_hand},
           {"root_translation", vec3_to_json(p.root_translation)}};
}

inline void from_json(const json& j, FullBodyParams& p) {
  j.at("body").get_to(p.body);
  j.at("face").get_to(p.face);
  j.at("left_hand").get_to(p.left_hand);
  j.at("right_hand").get_to(p.right_hand);
  p.root_translation = vec3_from_json(j.at("root_translation"));
}

inline void to_json(json& j, const KeypointObservation& kp) {
  j = json{{"confidence", kp.confidence},
           {"part", to_string(kp.part)},
           {"side", to_string(kp.side)}};
  if (kp.position.allFinite()) {
    j["position"] = json::array({kp.position.x(), kp.position.y()});
  } else {
    j["position"] = nullptr;
  }
}

inline void from_json(const json& j, KeypointObservation& kp) {
  kp.confidence = j.at("confidence").get<double>();
  kp.part = part_class_from_string(j.at("part").get<std::string>());
  kp.side = side_from_string(j.at("side").get<std::string>());
  if (j.at("position").is_null()) {
    double nan = std::numeric_limits<double>::quiet_NaN();
    kp.position = Vec2(nan, nan);
  } else {
    kp.position = Vec2(j.at("position").at(0).get<double>(),
                       j.at("position").at(1).get<double>());
  }
}

inline void to_json(json& j, const Scene& s) {
  j = json{{"schema_version", kSchemaVersion},
           {"kind", "scene"},
           {"subject_id", s.subject_id},
           {"seed", s.seed},
           {"camera", s.camera},
           {"truth", s.truth}};
}

inline void from_json(const json& j, Scene& s) {
  s.subject_id = j.at("subject_id").get<int64_t>();
  s.seed = j.at("seed").get<uint64_t>();
  j.at("camera").get_to(s.camera);
  j.at("truth").get_to(s.truth);
}

inline void to_json(json& j, const PartPrediction& p) {
  j = json{{"schema_version", kSchemaVersion},
           {"kind", "prediction"},
           {"part", to_string(p.part)},
           {"valid", p.valid},
           {"feature", vec_to_json(p.feature)}};
  std::visit([&](const auto& params) { j["params"] = params; }, p.params);
  // NaN-poisoned params cannot ride through JSON numbers; flag them so the
  // reader can restore the poison.
  bool nan_poisoned = false;
  std::visit(
      [&](const auto& params) {
        using T = std::decay_t<decltype(params)>;
        if constexpr (std::is_same_v<T, FaceParams>) {
          nan_poisoned = !params.jaw_pose.allFinite() || !params.expression.allFinite();
          for (const auto& aa : params.other_poses) {
            if (!aa.allFinite()) nan_poisoned = true;
          }
        } else {
          for (const auto& aa : params.pose) {
            if (!aa.allFinite()) nan_poisoned = true;
          }
          if (!params.shape.allFinite()) nan_poisoned = true;
        }
      },
      p.params);
  j["nan_poisoned"] = nan_poisoned;
  if (p.root_translation) j["root_translation"] = vec3_to_json(*p.root_translation);
}

inline void from_json(const json& j, PartPrediction& p) {
  p.part = part_from_string(j.at("part").get<std::string>());
  p.valid = j.at("valid").get<bool>();
  p.feature = vec_from_json(j.at("feature"));
  switch (part_class_of(p.part)) {
    case PartClass::Body: p.params = j.at("params").get<BodyParams>(); break;
    case PartClass::Face: p.params = j.at("params").get<FaceParams>(); break;
    default: p.params = j.at("params").get<HandParams>(); break;
  }
  if (j.contains("root_translation") && !j.at("root_translation").is_null()) {
    p.root_translation = vec3_from_json(j.at("root_translation"));
  } else {
    p.root_translation.reset();
  }
  if (j.value("nan_poisoned", false)) {
    double nan = std::numeric_limits<double>::quiet_NaN();
    std::visit(
        [&](auto& params) {
          using T = std::decay_t<decltype(params)>;
          if constexpr (std::is_same_v<T, FaceParams>) {
            params.jaw_pose[0] = nan;
          } else {
            if (!params.pose.empty()) params.pose[0][0] = nan;
          }
        },
        p.params);
  }
}

inline void to_json(json& j, const Provenance& p) {
  j = json{{"step1_count", p.step1_count},
           {"step1_evaluated", p.step1_evaluated},
           {"step2_evaluated", p.step2_evaluated},
           {"step3_evaluated", p.step3_evaluated},
           {"step3_rmse_cm", p.step3_rmse_cm}};
}

inline void from_json(const json& j, Provenance& p) {
  p.step1_count = j.at("step1_count").get<int>();
  p.step1_evaluated = j.at("step1_evaluated").get<bool>();
  p.step2_evaluated = j.at("step2_evaluated").get<bool>();
  p.step3_evaluated = j.at("step3_evaluated").get<bool>();
  p.step3_rmse_cm = j.at("step3_rmse_cm").get<double>();
}

inline void to_json(json& j, const CuratedSample& s) {
  j = json{{"schema_version", kSchemaVersion},
           {"kind", "curated"},
           {"subject_id", s.subject_id},
           {"scene_seed", s.scene_seed},
           {"camera", s.camera},
           {"fused", s.fused},
           {"features",
            json{{"body", vec_to_json(s.feature_body)},
                 {"face", vec_to_json(s.feature_face)},
                 {"left_hand", vec_to_json(s.feature_lhand)},
                 {"right_hand", vec_to_json(s.feature_rhand)}}},
           {"keypoints", s.keypoints},
           {"provenance", s.provenance}};
}

inline void from_json(const json& j, CuratedSample& s) {
  s.subject_id = j.at("subject_id").get<int64_t>();
  s.scene_seed = j.at("scene_seed").get<uint64_t>();
  j.at("camera").get_to(s.camera);
  j.at("fused").get_to(s.fused);
  s.feature_body = vec_from_json(j.at("features").at("body"));
  s.feature_face = vec_from_json(j.at("features").at("face"));
  s.feature_lhand = vec_from_json(j.at("features").at("left_hand"));
  s.feature_rhand = vec_from_json(j.at("features").at("right_hand"));
  s.keypoints = j.at("keypoints").get<std::vector<KeypointObservation>>();
  j.at("provenance").get_to(s.provenance);
}

inline void to_json(json& j, const CurationReport& r) {
  j = json{{"schema_version", kSchemaVersion},
           {"input", r.input},
           {"discarded_step1", r.discarded_step1},
           {"discarded_step2", r.discarded_step2},
           {"discarded_step3", r.discarded_step3},
           {"discarded_gate_undefined", r.discarded_gate_undefined},
           {"kept", r.kept},
           {"step1_counts", r.step1_counts},
           {"step3_rmse_cm", r.step3_rmse_cm}};
}

inline void from_json(const json& j, CurationReport& r) {
  r.input = j.at("input").get<int>();
  r.discarded_step1 = j.at("discarded_step1").get<int>();
  r.discarded_step2 = j.at("discarded_step2").get<int>();
  r.discarded_step3 = j.at("discarded_step3").get<int>();
  r.discarded_gate_undefined = j.at("discarded_gate_undefined").get<int>();
  r.kept = j.at("kept").get<int>();
  r.step1_counts = j.at("step1_counts").get<std::vector<int>>();
  r.step3_rmse_cm = j.at("step3_rmse_cm").get<std::vector<double>>();
}

inline void to_json(json& j, const P2sStats& s) {
  j = json{{"median", s.median}, {"mean", s.mean}, {"std", s.stddev}};
}

inline void from_json(const json& j, P2sStats& s) {
  s.median = j.at("median").get<double>();
  s.mean = j.at("mean").get<double>();
  s.stddev = j.at("std").get<double>();
}

inline void to_json(json& j, const MetricReport& r) {
  j = json{{"schema_version", kSchemaVersion},
           {"mpjpe_mm", r.mpjpe_mm},
           {"pelvis_mpjpe_mm", r.pelvis_mpjpe_mm},
           {"pa_mpjpe_mm", r.pa_mpjpe_mm},
           {"v2v_mm", r.v2v_mm},
           {"pa_v2v_body_mm", r.pa_v2v_body_mm},
           {"pa_v2v_left_hand_mm", r.pa_v2v_left_hand_mm},
           {"pa_v2v_right_hand_mm", r.pa_v2v_right_hand_mm},
           {"pa_v2v_face_mm", r.pa_v2v_face_mm},
           {"pa_p2s_mm", r.pa_p2s_mm},
           {"f_thresholds_mm", r.f_thresholds_mm},
           {"f_at", r.f_at},
           {"sample_count", r.sample_count}};
}

inline void from_json(const json& j, MetricReport& r) {
  r.mpjpe_mm = j.at("mpjpe_mm").get<double>();
  r.pelvis_mpjpe_mm = j.at("pelvis_mpjpe_mm").get<double>();
  r.pa_mpjpe_mm = j.at("pa_mpjpe_mm").get<double>();
  r.v2v_mm = j.at("v2v_mm").get<double>();
  r.pa_v2v_body_mm = j.at("pa_v2v_body_mm").get<double>();
  r.pa_v2v_left_hand_mm = j.at("pa_v2v_left_hand_mm").get<double>();
  r.pa_v2v_right_hand_mm = j.at("pa_v2v_right_hand_mm").get<double>();
  r.pa_v2v_face_mm = j.at("pa_v2v_face_mm").get<double>();
  j.at("pa_p2s_mm").get_to(r.pa_p2s_mm);
  r.f_thresholds_mm = j.at("f_thresholds_mm").get<std::vector<double>>();
  r.f_at = j.at("f_at").get<std::vector<double>>();
  r.sample_count = j.at("sample_count").get<int>();
}

inline void to_json(json& j, const Marker& m) {
  j = json{{"part", to_string(m.part)},
           {"side", to_string(m.side)},
           {"joints", json::array()},
           {"weights", json::array()},
           {"rest_position", vec3_to_json(m.rest_position)}};
  for (int k = 0; k < m.attach_count; ++k) {
    j["joints"].push_back(m.joints[k]);
    j["weights"].push_back(m.weights[k]);
  }
}

inline void from_json(const json& j, Marker& m) {
  m.part = part_class_from_string(j.at("part").get<std::string>());
  m.side = side_from_string(j.at("side").get<std::string>());
  m.attach_count = static_cast<int>(j.at("joints").size());
  if (m.attach_count < 1 || m.attach_count > 2) {
    throw ValidationError("marker: joints list must have 1 or 2 entries");
  }
  for (int k = 0; k < m.attach_count; ++k) {
    m.joints[k] = j.at("joints").at(k).get<int>();
    m.weights[k] = j.at("weights").at(k).get<double>();
  }
  m.rest_position = vec3_from_json(j.at("rest_position"));
}

inline void to_json(json& j, const SkeletonTemplate& t) {
  json offsets = json::array();
  for (const auto& o : t.rest_offset) offsets.push_back(vec3_to_json(o));
  json bases = json::array();
  for (const auto& b : t.shape_basis) bases.push_back(mat3x_to_json(b));
  json expr = json::array();
  for (const auto& b : t.expression_basis) expr.push_back(mat3x_to_json(b));
  j = json{{"schema_version", kSchemaVersion},
           {"dims", t.dims},
           {"parent", t.parent},
           {"rest_offset", offsets},
           {"shape_basis", bases},
           {"markers", t.markers},
           {"expression_basis", expr},
           {"seed", t.seed},
           {"neck_attach", t.neck_attach_},
           {"left_wrist_attach", t.lwrist_attach_},
           {"right_wrist_attach", t.rwrist_attach_}};
}

inline void from_json(const json& j, SkeletonTemplate& t) {
  check_schema_version(j, "SkeletonTemplate");
  j.at("dims").get_to(t.dims);
  t.parent = j.at("parent").get<std::vector<int>>();
  t.rest_offset.clear();
  for (const auto& o : j.at("rest_offset")) t.rest_offset.push_back(vec3_from_json(o));
  t.shape_basis.clear();
  for (const auto& b : j.at("shape_basis")) t.shape_basis.push_back(mat3x_from_json(b));
  t.markers = j.at("markers").get<std::vector<Marker>>();
  t.expression_basis.clear();
  for (const auto& b : j.at("expression_basis")) {
    t.expression_basis.push_back(mat3x_from_json(b));
  }
  t.seed = j.at("seed").get<uint64_t>();
  t.neck_attach_ = j.at("neck_attach").get<int>();
  t.lwrist_attach_ = j.at("left_wrist_attach").get<int>();
  t.rwrist_attach_ = j.at("right_wrist_attach").get<int>();
  t.validate();
}

// ---- JSON-lines dataset I/O ----

// One synth dataset file holds, per scene: a scene line, an observation
// line, and four prediction lines (body, face, left hand, right hand).
inline void write_dataset(const std::string& path,
                          const std::vector<SceneRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& rec : records) {
    out << json(rec.scene).dump() << "\n";
    json obs{{"schema_version", kSchemaVersion},
             {"kind", "observation"},
             {"subject_id", rec.scene.subject_id},
             {"keypoints", rec.observations}};
    out << obs.dump() << "\n";
    for (const auto& pred : rec.predictions) {
      json p = pred;
      p["subject_id"] = rec.scene.subject_id;
      out << p.dump() << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

inline json parse_line(const std::string& line, const std::string& path, size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ValidationError(path + ":" + std::to_string(lineno) +
                          ": invalid JSON: " + e.what());
  }
}

inline std::vector<SceneRecord> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<SceneRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    try {
      check_schema_version(j, "record");
      std::string kind = j.at("kind").get<std::string>();
      if (kind == "scene") {
        records.emplace_back();
        records.back().scene = j.get<Scene>();
      } else if (kind == "observation") {
        if (records.empty()) throw ValidationError("observation before any scene");
        records.back().observations =
            j.at("keypoints").get<std::vector<KeypointObservation>>();
      } else if (kind == "prediction") {
        if (records.empty()) throw ValidationError("prediction before any scene");
        records.back().predictions.push_back(j.get<PartPrediction>());
      } else {
        throw ValidationError("unknown record kind: " + kind);
      }
    } catch (const json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

inline void write_curated(const std::string& path,
                          const std::vector<CuratedSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& s : samples) out << json(s).dump() << "\n";
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<CuratedSample> read_curated(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<CuratedSample> samples;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = parse_line(line, path, lineno);
    try {
      check_schema_version(j, "curated record");
      samples.push_back(j.get<CuratedSample>());
    } catch (const json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return samples;
}

// ---- checkpoint binary format ----
// magic "FRPECKPT", u32 version, dims header, then little-endian f64 data.

namespace detail {

inline void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& out, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace detail

constexpr char kCheckpointMagic[9] = "FRPECKPT";
constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ModelState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<uint32_t>(state.cfg.input_dim));
  detail::put_u32(out, static_cast<uint32_t>(state.cfg.hidden.size()));
  for (int h : state.cfg.hidden) detail::put_u32(out, static_cast<uint32_t>(h));
  detail::put_u32(out, static_cast<uint32_t>(state.cfg.param_dim));
  detail::put_u32(out, static_cast<uint32_t>(state.cfg.native_feature_dim));
  detail::put_u32(out, static_cast<uint32_t>(state.cfg.adapter_dims.body));
  detail::put_u32(out, static_cast<uint32_t>(state.cfg.adapter_dims.face));
  detail::put_u32(out, static_cast<uint32_t>(state.cfg.adapter_dims.hand));
  detail::put_u32(out, static_cast<uint32_t>(state.params.size()));
  for (long i = 0; i < state.params.size(); ++i) detail::put_f64(out, state.params[i]);
  if (!out) throw IoError("write failed: " + path);
}

inline ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ValidationError(path + ": not a checkpoint file (bad magic)");
  }
  uint32_t version = detail::get_u32(in);
  if (version != kCheckpointVersion) {
    throw ValidationError(path + ": checkpoint version " + std::to_string(version) +
                          " unsupported — upgrade the file or the tool");
  }
  NetConfig cfg;
  cfg.input_dim = static_cast<int>(detail::get_u32(in));
  uint32_t layers = detail::get_u32(in);
  cfg.hidden.clear();
  for (uint32_t i = 0; i < layers; ++i) cfg.hidden.push_back(static_cast<int>(detail::get_u32(in)));
  cfg.param_dim = static_cast<int>(detail::get_u32(in));
  cfg.native_feature_dim = static_cast<int>(detail::get_u32(in));
  cfg.adapter_dims.body = static_cast<int>(detail::get_u32(in));
  cfg.adapter_dims.face = static_cast<int>(detail::get_u32(in));
  cfg.adapter_dims.hand = static_cast<int>(detail::get_u32(in));
  uint32_t count = detail::get_u32(in);
  ModelState state(cfg);
  if (static_cast<long>(count) != state.params.size()) {
    throw ValidationError(path + ": checkpoint parameter count mismatch");
  }
  for (uint32_t i = 0; i < count; ++i) state.params[i] = detail::get_f64(in);
  if (!in) throw IoError("truncated checkpoint: " + path);
  return state;
}

}  // namespace furpe
