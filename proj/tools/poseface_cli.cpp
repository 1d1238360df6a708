#include <chrono>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "poseface/config.hpp"
#include "poseface/errors.hpp"
#include "poseface/pipeline.hpp"
#include "poseface/synthdata.hpp"

namespace {

// The gradient audit fails the run past this relative error.
constexpr double kGradCheckTolerance = 1e-4;

class WallClock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void print_wall(const WallClock& clock) {
  std::printf("wall clock: %.2fs\n", clock.seconds());
}

int dispatch(CLI::App& app, const CLI::App* gen, const CLI::App* pretrain, const CLI::App* train,
             const CLI::App* eval_cmd, const CLI::App* probe, const CLI::App* gradcheck,
             const CLI::App* sweep, poseface::RunConfig cfg, const std::string& checkpoint,
             const std::string& dataset_file, std::size_t probe_samples, const std::string& param,
             const std::vector<double>& values) {
  using namespace poseface;
  (void)app;
  WallClock clock;

  if (gen->parsed()) {
    cmd_gen_data(cfg);
    DatasetSpec spec = cfg.data;
    spec.seed = cfg.seed;
    SplitPlan plan = split_plan(spec);
    const std::uint32_t shared = plan.shared_identities(spec);
    std::printf("dataset:    %s\n", dataset_path(cfg.out_dir).c_str());
    std::printf("landmarks:  %s\n", landmarks_path(cfg.out_dir).c_str());
    std::printf("train:      %u samples over %u identities\n",
                shared * (spec.samples_per_identity - plan.holdout_per_identity), shared);
    std::printf("ident test: %u samples\n", shared * plan.holdout_per_identity);
    std::printf("verif test: %u samples over %u identities\n",
                plan.verif_identities * spec.samples_per_identity, plan.verif_identities);
    print_wall(clock);
    return 0;
  }

  if (pretrain->parsed()) {
    AePretrainResult result = cmd_pretrain_ae(cfg);
    for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
      std::printf("epoch %zu mean loss: %.6g\n", e, result.epoch_mean_loss[e]);
    }
    std::printf("holdout loss: %.6g -> %.6g\n", result.holdout_initial, result.holdout_final);
    std::printf("encoder: %s\n", ae_path(cfg.out_dir).c_str());
    print_wall(clock);
    return 0;
  }

  if (train->parsed()) {
    RunReport report = cmd_train(cfg);
    std::cout << report_text(report);
    std::printf("\ncheckpoint: %s\n", model_path(cfg.out_dir).c_str());
    std::printf("reports:    %s\n", cfg.out_dir.c_str());
    print_wall(clock);
    return 0;
  }

  if (eval_cmd->parsed()) {
    RunReport report = cmd_eval(cfg, checkpoint, dataset_file);
    std::cout << report_text(report);
    std::printf("\nreports: %s\n", cfg.out_dir.c_str());
    print_wall(clock);
    return 0;
  }

  if (probe->parsed()) {
    OrthProbeResult result = cmd_probe_orth(cfg, checkpoint, dataset_file, probe_samples);
    std::printf("samples:               %zu\n", result.count);
    std::printf("max |<identity,pose>|: %.17g\n", result.max_abs);
    std::printf("min |<identity,pose>|: %.17g\n", result.min_abs);
    std::printf("matrix: %s/probe_matrix.csv\n", cfg.out_dir.c_str());
    print_wall(clock);
    return 0;
  }

  if (gradcheck->parsed()) {
    GradCheckReport report = cmd_gradcheck(cfg.seed);
    for (const auto& row : report.rows) {
      std::printf("%-28s %.3e\n", row.name.c_str(), row.max_rel_error);
    }
    std::printf("worst                        %.3e\n", report.worst);
    print_wall(clock);
    if (report.worst >= kGradCheckTolerance) {
      std::fprintf(stderr, "gradient check failed: %.3e >= %.0e\n", report.worst,
                   kGradCheckTolerance);
      return 4;
    }
    return 0;
  }

  if (sweep->parsed()) {
    std::vector<SweepRow> rows = cmd_sweep(cfg, param, values);
    std::cout << sweep_text(param, rows);
    std::printf("table: %s/sweep.csv\n", cfg.out_dir.c_str());
    print_wall(clock);
    return 0;
  }

  std::fprintf(stderr, "no subcommand given\n");
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pose-adaptive margin face recognition on a synthetic benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto* config_opt = app.add_option("--config", config_path, "run configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "override the run seed");
  auto* out_opt = app.add_option("--out", out_dir, "override the output directory");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark dataset");
  auto* pretrain =
      app.add_subcommand("pretrain-ae", "pretrain and freeze the landmark autoencoder");
  auto* train = app.add_subcommand("train", "train a model and evaluate it");

  std::string checkpoint;
  std::string dataset_file;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint file")->required();
  eval_cmd->add_option("--dataset", dataset_file, "dataset file")->required();

  std::size_t probe_samples = 256;
  auto* probe =
      app.add_subcommand("probe-orth", "measure identity/pose feature entanglement");
  probe->add_option("--checkpoint", checkpoint, "model checkpoint file")->required();
  probe->add_option("--dataset", dataset_file, "dataset file")->required();
  probe->add_option("--samples", probe_samples, "probe sample count");

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference audit of every loss gradient");

  std::string param;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "re-train across a grid of one loss weight");
  sweep->add_option("--param", param, "lambda1 or lambda2")->required();
  sweep->add_option("--values", values, "comma-separated weight grid")
      ->required()
      ->delimiter(',');

  for (auto* sub : {gen, pretrain, train, eval_cmd, probe, gradcheck, sweep}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    poseface::RunConfig cfg;
    if (config_opt->count() > 0) cfg = poseface::parse_config_file(config_path);
    if (seed_opt->count() > 0) cfg.seed = seed;
    if (out_opt->count() > 0) cfg.out_dir = out_dir;
    return dispatch(app, gen, pretrain, train, eval_cmd, probe, gradcheck, sweep, std::move(cfg),
                    checkpoint, dataset_file, probe_samples, param, values);
  } catch (const poseface::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const poseface::MissingArtifactError& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 3;
  } catch (const poseface::FormatError& e) {
    std::fprintf(stderr, "malformed artifact: %s\n", e.what());
    return 3;
  } catch (const poseface::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
