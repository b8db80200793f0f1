#pragma once

#include <charconv>
#include <chrono>
#include <filesystem>
#include <sstream>

#include "furpe/config.hpp"
#include "furpe/eval.hpp"
#include "furpe/trainer.hpp"

namespace furpe {

// Shortest round-trip decimal formatting; keeps CSV/text outputs
// byte-stable across runs.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Run log: the only artifact that carries timestamps, so every other output
// stays byte-identical for a fixed (config, seed).
class RunLog {
 public:
  RunLog() : level_(log_level_from_env()) {}

  explicit RunLog(const std::string& path) : level_(log_level_from_env()) {
    file_.open(path, std::ios::app);
  }

  void log(LogLevel lvl, const std::string& msg) {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (file_.is_open()) {
      file_ << timestamp() << " [" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
      file_.flush();
    }
    if (lvl <= level_) {
      std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
    }
  }

  void info(const std::string& msg) { log(LogLevel::Info, msg); }
  void warn(const std::string& msg) { log(LogLevel::Warn, msg); }

 private:
  static std::string timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
  }

  std::ofstream file_;
  LogLevel level_;
};

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline void write_config_snapshot(const PipelineConfig& cfg, const std::string& out_dir) {
  write_text_file(out_dir + "/config_snapshot.json", config_to_json(cfg).dump(2) + "\n");
}

// ---- in-memory pipeline stages ----

inline std::vector<SceneRecord> synth_records(const PipelineConfig& cfg, int count) {
  std::vector<SceneRecord> records(count);
  SkeletonTemplate tpl = make_template(cfg.dims, cfg.template_seed);
  detail::parallel_for(count, cfg.threads, [&](size_t i) {
    uint64_t scene_seed = derive_seed(cfg.seed, 0x5CE4E000ULL + i);
    SceneRecord& rec = records[i];
    rec.scene = generate_scene(scene_seed, cfg.dims, cfg.pose_prior_scale, cfg.camera,
                               static_cast<int64_t>(i));
    rec.observations =
        detect_keypoints(rec.scene, tpl, cfg.noise, derive_seed(scene_seed, 11));
    for (Part part : {Part::Body, Part::Face, Part::LeftHand, Part::RightHand}) {
      rec.predictions.push_back(run_expert(part, rec.scene, cfg.dims, cfg.feature_dims,
                                           cfg.noise, derive_seed(scene_seed, 22)));
    }
  });
  return records;
}

inline EvalDataset eval_dataset_from_records(const std::vector<SceneRecord>& records) {
  EvalDataset data;
  data.reserve(records.size());
  for (const auto& rec : records) {
    data.push_back({rec.scene.truth, rec.observations, rec.scene.camera});
  }
  return data;
}

// ---- commands ----

inline void run_synth(const PipelineConfig& cfg, int count, const std::string& out_dir) {
  if (count < 1) throw std::invalid_argument("synth: count must be >= 1");
  ensure_dir(out_dir);
  RunLog log(out_dir + "/run.log");
  log.info("synth: generating " + std::to_string(count) + " scenes");
  auto records = synth_records(cfg, count);
  write_dataset(out_dir + "/dataset.jsonl", records);
  write_config_snapshot(cfg, out_dir);
  log.info("synth: wrote " + out_dir + "/dataset.jsonl");
}

inline CurationReport run_curate(const PipelineConfig& cfg, const std::string& input,
                                 const std::string& out_dir) {
  ensure_dir(out_dir);
  RunLog log(out_dir + "/run.log");
  auto records = read_dataset(input);
  for (size_t i = 0; i < records.size(); ++i) {
    if (records[i].predictions.size() != 4 || records[i].observations.empty()) {
      throw ValidationError(input + ": record " + std::to_string(i) +
                            " is missing observations or predictions");
    }
  }
  SkeletonTemplate tpl = make_template(cfg.dims, cfg.template_seed);
  auto [kept, report] = curate(records, tpl, cfg.selection);
  write_curated(out_dir + "/curated.jsonl", kept);
  write_text_file(out_dir + "/curation_report.json", json(report).dump(2) + "\n");
  write_config_snapshot(cfg, out_dir);
  log.info("curate: kept " + std::to_string(report.kept) + " of " +
           std::to_string(report.input));
  return report;
}

inline std::string training_csv(const TrainRun& run) {
  std::ostringstream csv;
  csv << "epoch,lr,total,body_total,face_total,hand_total,joint2d_body,pose,"
         "joint2d_face,expression,jaw_pose,joint2d_hand,hand_pose,feature_body,"
         "feature_face,feature_hand,consistency_o2t,consistency_t2o,eval_mpjpe_mm,"
         "eval_pelvis_mpjpe_mm,eval_pa_mpjpe_mm,eval_v2v_mm,eval_pa_v2v_body_mm,"
         "eval_pa_v2v_left_hand_mm,eval_pa_v2v_right_hand_mm,eval_pa_v2v_face_mm\n";
  for (const auto& e : run.epochs) {
    const LossBreakdown& b = e.mean_loss;
    csv << e.epoch << ',' << fmt_double(e.lr) << ',' << fmt_double(b.total) << ','
        << fmt_double(b.body_total) << ',' << fmt_double(b.face_total) << ','
        << fmt_double(b.hand_total) << ',' << fmt_double(b.joint2d_body) << ','
        << fmt_double(b.pose) << ',' << fmt_double(b.joint2d_face) << ','
        << fmt_double(b.expression) << ',' << fmt_double(b.jaw_pose) << ','
        << fmt_double(b.joint2d_hand) << ',' << fmt_double(b.hand_pose) << ','
        << fmt_double(b.feature_body) << ',' << fmt_double(b.feature_face) << ','
        << fmt_double(b.feature_hand) << ',' << fmt_double(e.consistency_o2t) << ','
        << fmt_double(e.consistency_t2o);
    if (e.has_eval) {
      csv << ',' << fmt_double(e.eval.mpjpe_mm) << ',' << fmt_double(e.eval.pelvis_mpjpe_mm)
          << ',' << fmt_double(e.eval.pa_mpjpe_mm) << ',' << fmt_double(e.eval.v2v_mm)
          << ',' << fmt_double(e.eval.pa_v2v_body_mm) << ','
          << fmt_double(e.eval.pa_v2v_left_hand_mm) << ','
          << fmt_double(e.eval.pa_v2v_right_hand_mm) << ','
          << fmt_double(e.eval.pa_v2v_face_mm);
    } else {
      csv << ",,,,,,,,";
    }
    csv << "\n";
  }
  return csv.str();
}

inline json metrics_json(const MetricReport& report, const std::string& label) {
  json j = report;
  j["label"] = label;
  return j;
}

struct TrainOutput {
  TrainRun run;
  MetricReport final_metrics;
  bool has_metrics = false;
};

inline TrainOutput run_train(const PipelineConfig& cfg, const std::string& curated_path,
                             const std::string& eval_path, const std::string& out_dir) {
  ensure_dir(out_dir);
  RunLog log(out_dir + "/run.log");
  auto samples = read_curated(curated_path);
  if (samples.empty()) throw ConfigError("train: empty curated dataset");

  EvalDataset eval_data;
  if (!eval_path.empty()) {
    eval_data = eval_dataset_from_records(read_dataset(eval_path));
  }

  SkeletonTemplate tpl = make_template(cfg.dims, cfg.template_seed);
  NetConfig net = cfg.net_config();
  ModelState init = ModelState::random_init(net, cfg.init_seed);
  log.info("train: " + std::to_string(samples.size()) + " samples, " +
           std::to_string(cfg.epochs) + " epochs, ema " +
           (cfg.ema.enabled ? "on" : "off"));

  TrainOutput out;
  if (cfg.ema.enabled) {
    out.run = train_ema(samples, eval_data, init, init, tpl, cfg.hyper(), cfg.ema,
                        cfg.augmentation);
  } else {
    out.run = train_distill(samples, eval_data, init, tpl, cfg.hyper());
  }

  write_text_file(out_dir + "/training_log.csv", training_csv(out.run));
  save_checkpoint(out_dir + "/checkpoint_student.bin", out.run.student);
  if (out.run.teacher) {
    save_checkpoint(out_dir + "/checkpoint_teacher.bin", *out.run.teacher);
  }
  json sidecar = config_to_json(cfg);
  sidecar["checkpoint"] = "checkpoint_student.bin";
  write_text_file(out_dir + "/checkpoint_student.json", sidecar.dump(2) + "\n");

  if (!eval_data.empty()) {
    out.final_metrics = evaluate(out.run.student, eval_data, tpl);
    out.has_metrics = true;
    std::string label = std::filesystem::path(out_dir).filename().string();
    write_text_file(out_dir + "/metrics.json",
                    metrics_json(out.final_metrics, label).dump(2) + "\n");
  }
  write_config_snapshot(cfg, out_dir);
  log.info("train: done");
  return out;
}

inline std::string metrics_table(const MetricReport& r) {
  std::vector<std::pair<std::string, double>> rows = {
      {"MPJPE (mm)", r.mpjpe_mm},
      {"Pelvis MPJPE (mm)", r.pelvis_mpjpe_mm},
      {"PA-MPJPE (mm)", r.pa_mpjpe_mm},
      {"V2V (mm)", r.v2v_mm},
      {"PA-V2V body (mm)", r.pa_v2v_body_mm},
      {"PA-V2V left hand (mm)", r.pa_v2v_left_hand_mm},
      {"PA-V2V right hand (mm)", r.pa_v2v_right_hand_mm},
      {"PA-V2V face (mm)", r.pa_v2v_face_mm},
      {"PA-P2S median (mm)", r.pa_p2s_mm.median},
      {"PA-P2S mean (mm)", r.pa_p2s_mm.mean},
      {"PA-P2S std (mm)", r.pa_p2s_mm.stddev},
  };
  for (size_t i = 0; i < r.f_thresholds_mm.size(); ++i) {
    rows.emplace_back("F@" + fmt_double(r.f_thresholds_mm[i]) + "mm", r.f_at[i]);
  }
  size_t width = 0;
  for (const auto& row : rows) width = std::max(width, row.first.size());
  std::ostringstream out;
  out << "samples: " << r.sample_count << "\n";
  for (const auto& row : rows) {
    out << row.first << std::string(width - row.first.size() + 2, ' ')
        << fmt_double(row.second) << "\n";
  }
  return out.str();
}

inline MetricReport run_eval(const PipelineConfig& cfg, const std::string& checkpoint,
                             const std::string& data_path, const std::string& out_dir) {
  ensure_dir(out_dir);
  RunLog log(out_dir + "/run.log");
  ModelState state = load_checkpoint(checkpoint);
  EvalDataset data = eval_dataset_from_records(read_dataset(data_path));
  if (data.empty()) throw ConfigError("eval: empty dataset");
  SkeletonTemplate tpl = make_template(cfg.dims, cfg.template_seed);
  MetricReport report = evaluate(state, data, tpl);
  std::string label = std::filesystem::path(out_dir).filename().string();
  write_text_file(out_dir + "/metrics.json", metrics_json(report, label).dump(2) + "\n");
  write_text_file(out_dir + "/metrics.txt", metrics_table(report));
  write_config_snapshot(cfg, out_dir);
  log.info("eval: " + std::to_string(report.sample_count) + " samples");
  return report;
}

// Merges metrics.json files from several runs into one CSV row per run.
inline std::string report_csv(const std::vector<std::string>& metric_files) {
  std::ostringstream csv;
  csv << "label,mpjpe_mm,pelvis_mpjpe_mm,pa_mpjpe_mm,v2v_mm,pa_v2v_body_mm,"
         "pa_v2v_left_hand_mm,pa_v2v_right_hand_mm,pa_v2v_face_mm,pa_p2s_median_mm,"
         "pa_p2s_mean_mm,pa_p2s_std_mm,f_at_5mm,f_at_15mm,sample_count\n";
  for (const auto& path : metric_files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open metrics file: " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ValidationError(path + ": invalid JSON: " + e.what());
    }
    check_schema_version(j, path);
    MetricReport r = j.get<MetricReport>();
    std::string label = j.value("label", path);
    auto f_at = [&](double th) -> double {
      for (size_t i = 0; i < r.f_thresholds_mm.size(); ++i) {
        if (std::abs(r.f_thresholds_mm[i] - th) < 1e-9) return r.f_at[i];
      }
      return std::numeric_limits<double>::quiet_NaN();
    };
    csv << label << ',' << fmt_double(r.mpjpe_mm) << ',' << fmt_double(r.pelvis_mpjpe_mm)
        << ',' << fmt_double(r.pa_mpjpe_mm) << ',' << fmt_double(r.v2v_mm) << ','
        << fmt_double(r.pa_v2v_body_mm) << ',' << fmt_double(r.pa_v2v_left_hand_mm) << ','
        << fmt_double(r.pa_v2v_right_hand_mm) << ',' << fmt_double(r.pa_v2v_face_mm) << ','
        << fmt_double(r.pa_p2s_mm.median) << ',' << fmt_double(r.pa_p2s_mm.mean) << ','
        << fmt_double(r.pa_p2s_mm.stddev) << ',' << fmt_double(f_at(5.0)) << ','
        << fmt_double(f_at(15.0)) << ',' << r.sample_count << "\n";
  }
  return csv.str();
}

inline void run_report(const std::vector<std::string>& metric_files,
                       const std::string& out_csv) {
  write_text_file(out_csv, report_csv(metric_files));
}

}  // namespace furpe
