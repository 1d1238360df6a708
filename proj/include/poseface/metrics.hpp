#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "poseface/errors.hpp"
#include "poseface/model.hpp"
#include "poseface/tensor.hpp"

namespace poseface {

// Verification scores with genuine/impostor labels.
struct ScoreSet {
  std::vector<double> scores;
  std::vector<bool> genuine;

  std::size_t size() const { return scores.size(); }
  std::size_t genuine_count() const;
  std::size_t impostor_count() const;
  void validate() const;  // throws DegenerateScoreError
};

struct RocPoint {
  double threshold = 0.0;  // accept when score >= threshold
  double far = 0.0;
  double tar = 0.0;
};

// Threshold sweep over the unique scores, descending, preceded by an
// accept-nothing sentinel; FAR runs 0 -> 1 along the returned curve.
std::vector<RocPoint> roc(const ScoreSet& scores);

// Operating point where the false accept and false reject rates meet,
// linearly interpolated between the bracketing sweep points.
double eer(const ScoreSet& scores);

// Trapezoid area under the ROC; ties between genuine and impostor scores earn
// half credit, matching the rank-statistic definition.
double auc(const ScoreSet& scores);

struct TarAtFarResult {
  double requested_far = 0.0;
  double tar = 0.0;
  double achieved_far = 0.0;
  // True when the request lies below the resolution 1/#impostors; the values
  // then describe the strictest achievable operating point instead.
  bool saturated = false;
};

TarAtFarResult tar_at_far(const ScoreSet& scores, double far);

struct KfoldResult {
  double mean = 0.0;
  double sd = 0.0;  // population standard deviation over folds
  std::vector<double> fold_accuracy;
};

// Splits the scores into k contiguous folds (sizes differing by at most one).
// Each fold is scored at the accuracy-maximizing threshold of the remaining
// folds, taking the lowest threshold on ties.  Every fold must contain both
// classes.
KfoldResult kfold_accuracy(const ScoreSet& scores, std::size_t k);

// Gallery/probe identification setup: one gallery embedding per identity,
// probes tagged with yaw for bucketing.
struct IdentificationProtocol {
  std::vector<std::vector<double>> gallery;
  std::vector<int> gallery_identity;
  std::vector<std::vector<double>> probes;
  std::vector<int> probe_identity;
  std::vector<double> probe_yaw;

  void validate() const;  // throws ShapeError/SpecError
};

struct BucketAccuracy {
  int upper_edge_deg = 0;  // bucket covers (edge-15, edge] in |yaw|
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct Rank1Result {
  double overall = 0.0;
  std::size_t total = 0;
  std::vector<BucketAccuracy> buckets;  // only non-empty buckets, ascending edge
  std::size_t profile_total = 0;        // |yaw| > 60
  double profile_accuracy = 0.0;
  std::size_t frontal_total = 0;
  double frontal_accuracy = 0.0;
};

// 15-degree |yaw| bucket upper edge: 15, 30, ..., 90.
int yaw_bucket_edge(double yaw);

// Nearest-gallery-by-cosine identification; ties take the lowest identity.
Rank1Result rank1(const IdentificationProtocol& protocol);

struct OrthProbeResult {
  double max_abs = 0.0;
  double min_abs = 0.0;
  std::size_t count = 0;            // probe rows/cols (samples)
  std::vector<double> products;     // count x count inner-product matrix
};

// Cross inner products between every sample's identity feature and every
// sample's pose feature, both mapped through the column-normalized projection
// into the shared feature space and unit-normalized there.  The extremes of
// |product| measure how entangled the two subspaces remain.
OrthProbeResult orth_probe(const PoseFaceModel& model, const Tensor& observations);

struct ClassGeometry {
  double intra_mean = 0.0;  // pooled over all same-class embedding pairs
  double inter_mean = 0.0;  // over all class-centroid pairs
  std::size_t intra_pairs = 0;
  std::size_t inter_pairs = 0;
};

ClassGeometry class_geometry(const std::vector<std::vector<double>>& embeddings,
                             const std::vector<int>& labels);

// Worker-thread cap for metric computations: POSEFACE_THREADS when set, else
// the hardware concurrency, never more than `items`.
unsigned metric_thread_count(std::size_t items);

// Embedding exchange format "POSEEMB1".
struct EmbeddingRecord {
  std::uint32_t identity = 0;
  double yaw = 0.0;
  std::vector<double> values;
};

void write_embeddings(const std::string& path, const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> read_embeddings(const std::string& path);

// Pair protocol text lines: "idA,idB,genuine" or "idA,idB,impostor", indices
// into an embedding list.
struct VerificationPair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool genuine = false;
};

void write_pairs(const std::string& path, const std::vector<VerificationPair>& pairs);
std::vector<VerificationPair> read_pairs(const std::string& path);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

ScoreSet score_pairs(const std::vector<EmbeddingRecord>& embeddings,
                     const std::vector<VerificationPair>& pairs);

}  // namespace poseface
