// furpe: synthetic full-body reconstruction pipeline driver.
//
// Subcommands: synth, curate, train, eval, report. Every command accepts
// --config/--seed/--threads/--out; outputs are byte-reproducible for a
// fixed (config, seed) except run.log, which carries timestamps.

#include <CLI11.hpp>
#include <cstdio>

#include "furpe/pipeline.hpp"

namespace {

struct GlobalOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int> threads;
  std::string out_dir;
};

furpe::PipelineConfig resolve_config(const GlobalOpts& g) {
  furpe::PipelineConfig cfg;
  if (!g.config_path.empty()) cfg = furpe::load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  cfg.validate();
  return cfg;
}

std::string require_out_dir(const furpe::PipelineConfig& cfg, const char* cmd) {
  if (cfg.out_dir.empty()) {
    throw furpe::ConfigError(std::string(cmd) + ": no output directory (--out or paths.out_dir)");
  }
  return cfg.out_dir;
}

void add_global_flags(CLI::App* cmd, GlobalOpts& g) {
  cmd->add_option("--config", g.config_path, "pipeline config file (JSON)");
  cmd->add_option("--seed", g.seed, "master seed override");
  cmd->add_option("--threads", g.threads, "worker threads");
  cmd->add_option("--out", g.out_dir, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic full-body reconstruction pipeline"};
  app.require_subcommand(1);
  GlobalOpts g;

  int synth_count = 0;
  auto* synth = app.add_subcommand("synth", "generate scenes, detections, and expert predictions");
  add_global_flags(synth, g);
  synth->add_option("--count", synth_count, "number of scenes")->required();

  std::string curate_input;
  auto* curate = app.add_subcommand("curate", "run three-step pseudo ground-truth selection");
  add_global_flags(curate, g);
  curate->add_option("--input", curate_input, "dataset.jsonl from synth")->required();

  std::string train_input, train_eval;
  auto* train = app.add_subcommand("train", "train the student model on curated samples");
  add_global_flags(train, g);
  train->add_option("--input", train_input, "curated.jsonl from curate")->required();
  train->add_option("--eval-data", train_eval, "dataset.jsonl for per-epoch evaluation");

  std::string eval_ckpt, eval_data;
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_global_flags(evalc, g);
  evalc->add_option("--checkpoint", eval_ckpt, "checkpoint_student.bin")->required();
  evalc->add_option("--data", eval_data, "dataset.jsonl with ground truth")->required();

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "merge metrics.json files into one CSV");
  report->add_option("--out", report_out, "output CSV path")->required();
  report->add_option("inputs", report_inputs, "metrics.json files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      if (synth_count < 1) {
        std::fprintf(stderr, "synth: --count must be >= 1\n");
        return 2;
      }
      furpe::PipelineConfig cfg = resolve_config(g);
      furpe::run_synth(cfg, synth_count, require_out_dir(cfg, "synth"));
    } else if (curate->parsed()) {
      furpe::PipelineConfig cfg = resolve_config(g);
      furpe::CurationReport rep =
          furpe::run_curate(cfg, curate_input, require_out_dir(cfg, "curate"));
      std::printf("curate: kept %d of %d (step1 %d, step2 %d, step3 %d, undefined %d)\n",
                  rep.kept, rep.input, rep.discarded_step1, rep.discarded_step2,
                  rep.discarded_step3, rep.discarded_gate_undefined);
      if (rep.kept == 0) {
        std::fprintf(stderr, "curate: 0 samples kept\n");
        return 3;
      }
    } else if (train->parsed()) {
      furpe::PipelineConfig cfg = resolve_config(g);
      furpe::TrainOutput out =
          furpe::run_train(cfg, train_input, train_eval, require_out_dir(cfg, "train"));
      if (out.has_metrics) {
        std::printf("train: final PA-MPJPE %s mm over %d samples\n",
                    furpe::fmt_double(out.final_metrics.pa_mpjpe_mm).c_str(),
                    out.final_metrics.sample_count);
      }
    } else if (evalc->parsed()) {
      furpe::PipelineConfig cfg = resolve_config(g);
      furpe::MetricReport rep =
          furpe::run_eval(cfg, eval_ckpt, eval_data, require_out_dir(cfg, "eval"));
      std::fputs(furpe::metrics_table(rep).c_str(), stdout);
    } else if (report->parsed()) {
      furpe::run_report(report_inputs, report_out);
      std::printf("report: wrote %s (%zu runs)\n", report_out.c_str(), report_inputs.size());
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const furpe::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 3;
  } catch (const furpe::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 3;
  } catch (const furpe::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const furpe::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 5;
  }
  return 0;
}
