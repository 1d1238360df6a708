#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "poseface/geometry.hpp"

namespace poseface {

// Pose-imbalanced synthetic face benchmark.  Each identity is a latent unit
// vector z_k; each sample draws a yaw from a two-regime distribution (profile
// poses past 60 degrees with probability p_profile), emits the observation
//   o = A z_k + B phi(yaw) + noise
// through fixed seeded mixing matrices, and projects a per-identity jittered
// copy of the 3-D landmark template at that yaw.
struct DatasetSpec {
  std::uint32_t n_identities = 64;
  std::uint32_t samples_per_identity = 80;
  double p_profile = 0.0019;
  double noise_sigma = 0.05;
  std::uint32_t d_in = 64;
  std::uint64_t seed = 1;
  double split = 0.8;  // train fraction

  std::uint32_t latent_dim() const { return d_in / 2; }
  void validate() const;  // throws SpecError
};

struct Sample {
  std::vector<double> observation;
  LandmarkSet landmarks;
  std::uint32_t identity = 0;
  bool is_profile = false;  // |yaw| > 60
};

// Split layout: the last identities are held out whole for verification
// pairs (identity-disjoint), and each remaining identity keeps its last
// samples as identification probes (identity-shared).  Both assignments are
// pure functions of the spec, so a reloaded file reproduces them.
struct SplitPlan {
  std::uint32_t verif_identities = 0;   // count at the top of the identity range
  std::uint32_t holdout_per_identity = 0;

  std::uint32_t shared_identities(const DatasetSpec& spec) const {
    return spec.n_identities - verif_identities;
  }
};

SplitPlan split_plan(const DatasetSpec& spec);

struct SynthDataset {
  DatasetSpec spec;
  std::vector<Sample> samples;  // identity-major generation order
  std::vector<std::uint32_t> train_indices;
  std::vector<std::uint32_t> ident_test_indices;
  std::vector<std::uint32_t> verif_test_indices;

  // Training class count; train sample identities are exactly [0, n).
  std::uint32_t train_classes = 0;
};

SynthDataset generate_dataset(const DatasetSpec& spec);

// The 8-dimensional pose basis: sin/cos of yaw and its 2nd-4th harmonics.
std::array<double, 8> pose_basis(double yaw_degrees);

// Mixing matrices, row-major d_in x latent_dim and d_in x 8.
std::vector<double> mixing_identity(const DatasetSpec& spec);
std::vector<double> mixing_pose(const DatasetSpec& spec);

// The jittered 3-D template of one identity, and its projection at a yaw.
// generate_dataset uses exactly these, so landmarks can be regenerated from
// (seed, identity, yaw) alone.
std::array<Point3, kNumLandmarks> identity_template(std::uint64_t seed, std::uint32_t identity);
LandmarkSet identity_landmarks(std::uint64_t seed, std::uint32_t identity, double yaw_degrees);

void write_dataset(const std::string& path, const SynthDataset& ds);
SynthDataset read_dataset(const std::string& path);

}  // namespace poseface
