#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poseface/config.hpp"
#include "poseface/landmark_ae.hpp"
#include "poseface/losses.hpp"
#include "poseface/metrics.hpp"
#include "poseface/model.hpp"
#include "poseface/synthdata.hpp"

namespace poseface {

// Pose supervision targets for the listed samples, one row per index in
// order: encoder codes in landmark_module mode, unit-normalized flattened
// landmark coordinates in landmark_points mode, an undefined tensor when
// supervision is off.  Codes are computed in fixed-size chunks so the full
// heatmap batch never materializes.
Tensor compute_pose_targets(const RunConfig& config, const SynthDataset& dataset,
                            const AutoEncoder* ae, const std::vector<std::uint32_t>& indices);

struct TrainResult {
  PoseFaceModel model;
  std::vector<LossBreakdown> epoch_losses;  // batch-size-weighted means
};

// Mini-batch SGD over the full objective with the config's ablation flags.
// `pose_targets` rows follow dataset.train_indices order and may be undefined
// when the effective pose weight is zero.  Deterministic per config seed.
TrainResult train_model(const RunConfig& config, const SynthDataset& dataset,
                        const Tensor& pose_targets);

struct TarReportEntry {
  double requested = 0.0;
  double tar = 0.0;
  double achieved = 0.0;
  bool saturated = false;
};

struct EvalResult {
  Rank1Result rank1;
  KfoldResult verification;
  double eer = 0.0;
  double auc = 0.0;
  std::vector<TarReportEntry> tars;
  OrthProbeResult probe;
  ClassGeometry geometry;

  // Artifacts behind the numbers, kept for serialization.
  std::vector<EmbeddingRecord> gallery_embeddings;
  std::vector<EmbeddingRecord> probe_embeddings;    // identification probes
  std::vector<EmbeddingRecord> verif_embeddings;    // verification samples
  std::vector<VerificationPair> pairs;              // indices into verif_embeddings
};

// Identification gallery: per shared identity the training sample nearest to
// frontal (ties take the lowest sample index); probes are the held-out
// samples.  Verification pairs are sampled without replacement per fold from
// the disjoint-identity split.
EvalResult evaluate_model(const RunConfig& config, const PoseFaceModel& model,
                          const SynthDataset& dataset);

struct RunReport {
  std::string config_echo;
  std::vector<LossBreakdown> epoch_losses;
  EvalResult eval;
  double wall_seconds = 0.0;  // printed to the console, kept out of the files
};

// Dataset + optional frozen encoder -> trained model + full report.
struct RunOutcome {
  PoseFaceModel model;
  RunReport report;
};

RunOutcome run_training(const RunConfig& config, const SynthDataset& dataset,
                        const AutoEncoder* ae);

// Report serialization.  The text form is a human-readable table set; the
// CSV forms are stable machine outputs (no timing fields, so reruns are
// byte-identical).
std::string report_text(const RunReport& report);
std::string report_csv(const RunReport& report);
std::string epoch_losses_csv(const std::vector<LossBreakdown>& losses);
std::string probe_matrix_csv(const OrthProbeResult& probe);

// Top-2 principal-component projection of the probe embeddings, as CSV rows
// x,y,identity,yaw.  Component signs are fixed so the largest-magnitude
// loading is positive.
std::string pca_projection_csv(const std::vector<EmbeddingRecord>& records);

// Standard artifact names inside a run directory.
std::string dataset_path(const std::string& out_dir);
std::string landmarks_path(const std::string& out_dir);
std::string ae_path(const std::string& out_dir);
std::string model_path(const std::string& out_dir);

// Write the report file family into `out_dir` (created if needed).
void write_run_artifacts(const std::string& out_dir, const RunReport& report,
                         bool include_epoch_losses);

// Orchestration entry points behind the CLI subcommands.  Each throws the
// module error types; the CLI maps them to exit codes.
void cmd_gen_data(const RunConfig& config);
AePretrainResult cmd_pretrain_ae(const RunConfig& config);
RunReport cmd_train(const RunConfig& config);
RunReport cmd_eval(const RunConfig& config, const std::string& checkpoint,
                   const std::string& dataset_file);
OrthProbeResult cmd_probe_orth(const RunConfig& config, const std::string& checkpoint,
                               const std::string& dataset_file, std::size_t n_samples);

struct GradCheckRow {
  std::string name;
  double max_rel_error = 0.0;
};

// Finite-difference audit of every loss surface on small randomized
// instances; `worst` is the table maximum.
struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double worst = 0.0;
};

GradCheckReport cmd_gradcheck(std::uint64_t seed = 7);

struct SweepRow {
  double value = 0.0;
  double profile_rank1 = 0.0;
  double overall_rank1 = 0.0;
  double verification_mean = 0.0;
  double probe_max = 0.0;
};

// Re-trains per grid value of loss.lambda1 or loss.lambda2 (dataset, encoder,
// and pose targets are shared across points); rows come back sorted by value.
std::vector<SweepRow> cmd_sweep(const RunConfig& config, const std::string& param,
                                const std::vector<double>& values);

std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows);
std::string sweep_text(const std::string& param, const std::vector<SweepRow>& rows);

}  // namespace poseface
