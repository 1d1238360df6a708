#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poseface/landmark_ae.hpp"
#include "poseface/losses.hpp"
#include "poseface/model.hpp"
#include "poseface/synthdata.hpp"
#include "poseface/tensor.hpp"

namespace poseface {

enum class PoseSupervision { kLandmarkModule, kLandmarkPoints, kNone };

std::string to_string(PoseSupervision mode);
PoseSupervision pose_supervision_from_string(const std::string& text);

// Every knob of a run, parsed from line-oriented `key = value` text.
// Unknown and duplicate keys are hard errors: a silently ignored typo in a
// loss weight would invalidate an experiment.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";

  DatasetSpec data;  // data.seed is overwritten with `seed` when used

  // model.n_classes is derived from the dataset split, not configured
  ModelSpec model;

  LossWeights loss;
  double lambda_h = 100.0;
  bool squared_pose = false;

  SgdConfig sgd{0.05, 0.9, 5e-4, {}};
  bool sgd_schedule_set = false;  // false: derive tenfold drops at 1/2 and 5/6 of the run
  int epochs = 30;
  int batch_size = 64;

  bool use_paa = true;
  bool use_orth = true;
  PoseSupervision pose_supervision = PoseSupervision::kLandmarkModule;

  int ae_raster = 32;
  double ae_heat_radius = 1.5;
  std::vector<int> ae_hidden = {512, 128};
  int ae_epochs = 3;
  int ae_batch_size = 64;
  SgdConfig ae_sgd{0.02, 0.9, 0.0, {}};
  double ae_holdout_fraction = 0.1;

  int probe_samples = 256;
  int verification_folds = 10;
  int pairs_per_fold = 350;  // genuine and impostor pairs each, per fold
  std::vector<double> far_targets = {1e-1, 1e-2, 1e-3};

  void validate() const;  // throws ConfigError

  // Number of classification classes implied by the dataset split.
  std::uint32_t n_classes() const;

  // Model spec with n_classes filled in and d_p swapped for the landmark
  // point dimension when that supervision mode is active.
  ModelSpec effective_model() const;

  // Optimizer settings with the default schedule materialized.
  SgdConfig effective_sgd() const;
  SgdConfig effective_ae_sgd() const;

  AeSpec ae_spec() const;

  // Loss weights after applying the ablation flags: disabling the orthogonal
  // branch zeroes both multipliers, and pose supervision `none` zeroes the
  // pose term even when the branch is on.
  LossWeights effective_weights() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);
std::string serialize_config(const RunConfig& config);

}  // namespace poseface
