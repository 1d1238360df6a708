#include "poseface/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <utility>

#include <Eigen/Dense>

#include "poseface/geometry.hpp"
#include "poseface/rng.hpp"

namespace poseface {

namespace {

constexpr std::uint64_t kTrainShuffleTag = 0xB47C11;
constexpr std::uint64_t kPairSampleTag = 0x9A1257;

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string gshort(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingArtifactError("cannot open " + path + " for writing");
  out << text;
  out.close();
  if (!out) throw MissingArtifactError("failed while writing " + path);
}

// Stacks the observations of the given samples into an N x d_in matrix.
Tensor observation_rows(const SynthDataset& ds, const std::uint32_t* indices, std::size_t count) {
  const std::size_t d = ds.spec.d_in;
  std::vector<double> buf;
  buf.reserve(count * d);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& o = ds.samples[indices[i]].observation;
    buf.insert(buf.end(), o.begin(), o.end());
  }
  return Tensor::matrix(count, d, std::move(buf));
}

// Embeds samples in fixed-size chunks so evaluation never tapes a huge batch.
std::vector<EmbeddingRecord> embed_records(const PoseFaceModel& model, const SynthDataset& ds,
                                           const std::vector<std::uint32_t>& indices) {
  constexpr std::size_t kChunk = 256;
  std::vector<EmbeddingRecord> out;
  out.reserve(indices.size());
  const std::size_t d_o = static_cast<std::size_t>(model.spec().d_o);
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, indices.size() - start);
    Tensor obs = observation_rows(ds, indices.data() + start, count);
    Tape tape;
    Tensor f_o = model.embed(tape, obs);
    const auto& data = f_o.data();
    for (std::size_t r = 0; r < count; ++r) {
      const Sample& s = ds.samples[indices[start + r]];
      EmbeddingRecord rec;
      rec.identity = s.identity;
      rec.yaw = s.landmarks.yaw;
      rec.values.assign(data.begin() + static_cast<std::ptrdiff_t>(r * d_o),
                        data.begin() + static_cast<std::ptrdiff_t>((r + 1) * d_o));
      out.push_back(std::move(rec));
    }
  }
  return out;
}

// Per shared identity, the training sample closest to frontal (lowest sample
// index on ties, since train_indices ascend within an identity).
std::vector<std::uint32_t> gallery_indices(const SynthDataset& ds) {
  std::vector<std::uint32_t> best(ds.train_classes, 0);
  std::vector<double> best_yaw(ds.train_classes, std::numeric_limits<double>::infinity());
  for (std::uint32_t idx : ds.train_indices) {
    const Sample& s = ds.samples[idx];
    if (s.identity >= ds.train_classes) {
      throw SpecError("training sample carries an out-of-range identity");
    }
    double a = std::fabs(s.landmarks.yaw);
    if (a < best_yaw[s.identity]) {
      best_yaw[s.identity] = a;
      best[s.identity] = idx;
    }
  }
  for (std::uint32_t c = 0; c < ds.train_classes; ++c) {
    if (!std::isfinite(best_yaw[c])) {
      throw EmptyDatasetError("identity " + std::to_string(c) + " has no training samples");
    }
  }
  return best;
}

// Draws `take` distinct elements via a partial Fisher-Yates pass.
template <typename T>
void partial_shuffle_take(std::vector<T>& pool, std::size_t take, Rng& rng) {
  for (std::size_t i = 0; i < take; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
}

void require_dataset_matches(const RunConfig& config, const SynthDataset& ds) {
  DatasetSpec want = config.data;
  want.seed = config.seed;
  const DatasetSpec& got = ds.spec;
  bool same = want.n_identities == got.n_identities &&
              want.samples_per_identity == got.samples_per_identity &&
              want.p_profile == got.p_profile && want.noise_sigma == got.noise_sigma &&
              want.d_in == got.d_in && want.seed == got.seed && want.split == got.split;
  if (!same) {
    throw ConfigError("dataset file was generated from different data settings or seed; "
                      "regenerate it or fix the configuration");
  }
}

// Writes both dataset artifacts and returns the generated data.
SynthDataset materialize_dataset(const RunConfig& config) {
  DatasetSpec spec = config.data;
  spec.seed = config.seed;
  SynthDataset ds = generate_dataset(spec);
  std::filesystem::create_directories(config.out_dir);
  write_dataset(dataset_path(config.out_dir), ds);
  std::vector<LandmarkRecord> records(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    records[i].sample_id = static_cast<std::uint32_t>(i);
    records[i].identity_id = ds.samples[i].identity;
    records[i].landmarks = ds.samples[i].landmarks;
  }
  write_landmark_file(landmarks_path(config.out_dir), records);
  return ds;
}

std::vector<LandmarkSet> train_landmarks(const SynthDataset& ds) {
  std::vector<LandmarkSet> sets;
  sets.reserve(ds.train_indices.size());
  for (std::uint32_t idx : ds.train_indices) sets.push_back(ds.samples[idx].landmarks);
  return sets;
}

AutoEncoder pretrain_autoencoder(const RunConfig& config, const SynthDataset& ds,
                                 AePretrainResult* result_out) {
  AutoEncoder ae(config.ae_spec(), config.seed);
  AePretrainResult result =
      ae.pretrain(train_landmarks(ds), config.ae_epochs, config.effective_ae_sgd(),
                  config.lambda_h, config.seed, config.ae_batch_size, config.ae_holdout_fraction);
  if (result_out != nullptr) *result_out = result;
  return ae;
}

}  // namespace

Tensor compute_pose_targets(const RunConfig& config, const SynthDataset& dataset,
                            const AutoEncoder* ae, const std::vector<std::uint32_t>& indices) {
  if (config.effective_weights().lambda1 <= 0.0) return Tensor();

  const std::size_t n = indices.size();
  if (config.pose_supervision == PoseSupervision::kLandmarkPoints) {
    const std::size_t dim = 2 * kNumLandmarks;
    std::vector<double> buf(n * dim);
    for (std::size_t r = 0; r < n; ++r) {
      const LandmarkSet& lm = dataset.samples[indices[r]].landmarks;
      double* row = buf.data() + r * dim;
      double sq = 0.0;
      for (int k = 0; k < kNumLandmarks; ++k) {
        row[2 * k] = lm.points[static_cast<std::size_t>(k)][0] / lm.frame_side;
        row[2 * k + 1] = lm.points[static_cast<std::size_t>(k)][1] / lm.frame_side;
        sq += row[2 * k] * row[2 * k] + row[2 * k + 1] * row[2 * k + 1];
      }
      double norm = std::sqrt(sq);
      if (norm < Tape::kNormFloor) {
        throw DegenerateError("landmark coordinates collapse to the origin");
      }
      for (std::size_t k = 0; k < dim; ++k) row[k] /= norm;
    }
    return Tensor::matrix(n, dim, std::move(buf));
  }

  // Landmark-module supervision: frozen encoder codes.
  if (ae == nullptr) {
    throw MissingArtifactError("pose supervision needs a pretrained landmark autoencoder");
  }
  const int d_p = config.effective_model().d_p;
  if (ae->spec().code_dim != d_p) {
    throw SpecError("autoencoder code width " + std::to_string(ae->spec().code_dim) +
                    " does not match the pose feature width " + std::to_string(d_p));
  }
  const std::size_t dim = static_cast<std::size_t>(d_p);
  std::vector<double> buf(n * dim);
  constexpr std::size_t kChunk = 64;
  const AeSpec& aspec = ae->spec();
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t count = std::min(kChunk, n - start);
    std::vector<HeatmapStack> stacks;
    stacks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const LandmarkSet& lm = dataset.samples[indices[start + i]].landmarks;
      stacks.push_back(render_heatmaps(lm, aspec.height, aspec.width, aspec.heat_radius));
    }
    auto codes = ae->encode_batch(stacks);
    for (std::size_t i = 0; i < count; ++i) {
      std::copy(codes[i].begin(), codes[i].end(), buf.begin() +
                static_cast<std::ptrdiff_t>((start + i) * dim));
    }
  }
  return Tensor::matrix(n, dim, std::move(buf));
}

TrainResult train_model(const RunConfig& config, const SynthDataset& dataset,
                        const Tensor& pose_targets) {
  if (dataset.train_indices.empty()) throw EmptyDatasetError("no training samples");

  ModelSpec spec = config.effective_model();
  spec.d_in = static_cast<int>(dataset.spec.d_in);
  spec.n_classes = static_cast<int>(dataset.train_classes);
  // Standardize the input scale on the train split so the optimizer sees
  // comparable magnitudes no matter how the data was synthesized.
  double sq = 0.0;
  std::size_t cnt = 0;
  for (std::uint32_t idx : dataset.train_indices) {
    for (double v : dataset.samples[idx].observation) {
      sq += v * v;
      ++cnt;
    }
  }
  double rms = cnt > 0 ? std::sqrt(sq / static_cast<double>(cnt)) : 0.0;
  if (rms > 0.0) spec.input_gain = 1.0 / rms;
  spec.validate();

  const LossWeights weights = config.effective_weights();
  const std::size_t n_train = dataset.train_indices.size();
  const std::size_t d_in = dataset.spec.d_in;
  std::size_t d_p = 0;
  if (weights.lambda1 > 0.0) {
    if (!pose_targets.defined()) {
      throw MissingArtifactError("pose targets are required when the pose weight is positive");
    }
    if (!pose_targets.is_matrix() || pose_targets.rows() != n_train ||
        pose_targets.cols() != static_cast<std::size_t>(spec.d_p)) {
      throw ShapeError("pose targets must be one row per training sample, width d_p");
    }
    d_p = pose_targets.cols();
  }

  PoseFaceModel model(spec, config.seed);
  SgdOptimizer opt(model.parameters(), config.effective_sgd());
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);

  std::vector<LossBreakdown> epoch_losses;
  epoch_losses.reserve(static_cast<std::size_t>(config.epochs));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle(mix_stream(config.seed, kTrainShuffleTag, static_cast<std::uint64_t>(epoch)));
    std::vector<std::uint32_t> perm = shuffle.permutation(n_train);

    LossBreakdown sums;
    for (std::size_t start = 0; start < n_train; start += batch_size) {
      const std::size_t count = std::min(batch_size, n_train - start);

      std::vector<double> obs_buf(count * d_in);
      std::vector<double> target_buf(count * d_p);
      BatchLabels labels;
      labels.classes.resize(count);
      labels.ratios.resize(count);
      for (std::size_t j = 0; j < count; ++j) {
        const std::uint32_t pos = perm[start + j];
        const Sample& s = dataset.samples[dataset.train_indices[pos]];
        std::copy(s.observation.begin(), s.observation.end(), obs_buf.begin() +
                  static_cast<std::ptrdiff_t>(j * d_in));
        labels.classes[j] = s.identity;
        labels.ratios[j] = adaptive_ratio(s.landmarks.yaw);
        if (d_p > 0) {
          const double* row = pose_targets.data().data() + static_cast<std::size_t>(pos) * d_p;
          std::copy(row, row + d_p, target_buf.begin() + static_cast<std::ptrdiff_t>(j * d_p));
        }
      }
      Tensor obs = Tensor::matrix(count, d_in, std::move(obs_buf));
      Tensor targets =
          d_p > 0 ? Tensor::matrix(count, d_p, std::move(target_buf)) : Tensor();

      Tape tape;
      LossBreakdown bd;
      Tensor loss = poseface_loss(tape, model, obs, labels, targets, weights, &bd,
                                  /*use_adaptive_margin=*/true, config.squared_pose);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(epoch);

      const double w = static_cast<double>(count);
      sums.total += w * bd.total;
      sums.classification += w * bd.classification;
      sums.pose += w * bd.pose;
      sums.orth += w * bd.orth;
      sums.pose_raw += w * bd.pose_raw;
      sums.orth_raw += w * bd.orth_raw;
    }
    const double inv = 1.0 / static_cast<double>(n_train);
    LossBreakdown mean;
    mean.total = sums.total * inv;
    mean.classification = sums.classification * inv;
    mean.pose = sums.pose * inv;
    mean.orth = sums.orth * inv;
    mean.pose_raw = sums.pose_raw * inv;
    mean.orth_raw = sums.orth_raw * inv;
    epoch_losses.push_back(mean);
  }

  return TrainResult{std::move(model), std::move(epoch_losses)};
}

EvalResult evaluate_model(const RunConfig& config, const PoseFaceModel& model,
                          const SynthDataset& dataset) {
  if (dataset.train_indices.empty()) throw EmptyDatasetError("no training samples to enroll");
  if (dataset.ident_test_indices.empty()) {
    throw EmptyDatasetError("no identification probes in the dataset");
  }

  EvalResult ev;

  // Identification: frontal-most gallery per identity, held-out probes.
  ev.gallery_embeddings = embed_records(model, dataset, gallery_indices(dataset));
  ev.probe_embeddings = embed_records(model, dataset, dataset.ident_test_indices);

  IdentificationProtocol protocol;
  protocol.gallery.reserve(ev.gallery_embeddings.size());
  for (const auto& rec : ev.gallery_embeddings) {
    protocol.gallery.push_back(rec.values);
    protocol.gallery_identity.push_back(static_cast<int>(rec.identity));
  }
  protocol.probes.reserve(ev.probe_embeddings.size());
  for (const auto& rec : ev.probe_embeddings) {
    protocol.probes.push_back(rec.values);
    protocol.probe_identity.push_back(static_cast<int>(rec.identity));
    protocol.probe_yaw.push_back(rec.yaw);
  }
  ev.rank1 = rank1(protocol);

  // Verification over the identity-disjoint split.
  if (dataset.verif_test_indices.empty()) {
    throw FoldError("the dataset reserves no identities for verification");
  }
  ev.verif_embeddings = embed_records(model, dataset, dataset.verif_test_indices);

  std::vector<VerificationPair> genuine_pool;
  std::vector<VerificationPair> impostor_pool;
  const auto& vidx = dataset.verif_test_indices;
  for (std::size_t i = 0; i < vidx.size(); ++i) {
    for (std::size_t j = i + 1; j < vidx.size(); ++j) {
      bool same = dataset.samples[vidx[i]].identity == dataset.samples[vidx[j]].identity;
      (same ? genuine_pool : impostor_pool).push_back(VerificationPair{i, j, same});
    }
  }
  const std::size_t folds = static_cast<std::size_t>(config.verification_folds);
  std::size_t per_fold = static_cast<std::size_t>(config.pairs_per_fold);
  const std::size_t avail = std::min(genuine_pool.size(), impostor_pool.size());
  if (folds * per_fold > avail) per_fold = avail / folds;
  if (per_fold == 0) {
    throw FoldError("not enough verification pairs to fill " + std::to_string(folds) + " folds");
  }
  Rng pair_rng(mix_stream(dataset.spec.seed, kPairSampleTag));
  partial_shuffle_take(genuine_pool, folds * per_fold, pair_rng);
  partial_shuffle_take(impostor_pool, folds * per_fold, pair_rng);

  // Each contiguous fold holds its genuine block then its impostor block, so
  // contiguous k-fold splitting sees both classes everywhere.
  ev.pairs.reserve(2 * folds * per_fold);
  for (std::size_t f = 0; f < folds; ++f) {
    for (std::size_t t = 0; t < per_fold; ++t) ev.pairs.push_back(genuine_pool[f * per_fold + t]);
    for (std::size_t t = 0; t < per_fold; ++t) ev.pairs.push_back(impostor_pool[f * per_fold + t]);
  }
  ScoreSet scores = score_pairs(ev.verif_embeddings, ev.pairs);
  ev.verification = kfold_accuracy(scores, folds);
  ev.eer = eer(scores);
  ev.auc = auc(scores);
  for (double target : config.far_targets) {
    TarAtFarResult t = tar_at_far(scores, target);
    ev.tars.push_back(TarReportEntry{target, t.tar, t.achieved_far, t.saturated});
  }

  // Subspace probe over the leading identification probes.
  const std::size_t n_probe =
      std::min(static_cast<std::size_t>(config.probe_samples), dataset.ident_test_indices.size());
  Tensor probe_obs = observation_rows(dataset, dataset.ident_test_indices.data(), n_probe);
  ev.probe = orth_probe(model, probe_obs);

  // Embedding-space geometry on the unit sphere (scale-free statement).
  std::vector<std::vector<double>> unit_embeddings;
  std::vector<int> labels;
  unit_embeddings.reserve(ev.probe_embeddings.size());
  for (const auto& rec : ev.probe_embeddings) {
    double sq = 0.0;
    for (double x : rec.values) sq += x * x;
    double norm = std::sqrt(sq);
    if (norm < Tape::kNormFloor) {
      throw DegenerateEmbeddingError("probe embedding has near-zero norm");
    }
    std::vector<double> unit(rec.values);
    for (double& x : unit) x /= norm;
    unit_embeddings.push_back(std::move(unit));
    labels.push_back(static_cast<int>(rec.identity));
  }
  ev.geometry = class_geometry(unit_embeddings, labels);

  return ev;
}

RunOutcome run_training(const RunConfig& config, const SynthDataset& dataset,
                        const AutoEncoder* ae) {
  const auto t0 = std::chrono::steady_clock::now();
  Tensor targets = compute_pose_targets(config, dataset, ae, dataset.train_indices);
  TrainResult trained = train_model(config, dataset, targets);
  EvalResult ev = evaluate_model(config, trained.model, dataset);

  RunReport report;
  report.config_echo = serialize_config(config);
  report.epoch_losses = std::move(trained.epoch_losses);
  report.eval = std::move(ev);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return RunOutcome{std::move(trained.model), std::move(report)};
}

std::string report_text(const RunReport& report) {
  std::ostringstream os;
  const EvalResult& ev = report.eval;

  if (!report.epoch_losses.empty()) {
    const LossBreakdown& last = report.epoch_losses.back();
    os << "training\n";
    os << "  epochs run             " << report.epoch_losses.size() << "\n";
    os << "  final total loss       " << gshort(last.total) << "\n";
    os << "  final classification   " << gshort(last.classification) << "\n";
    os << "  final pose term        " << gshort(last.pose) << " (raw " << gshort(last.pose_raw)
       << ")\n";
    os << "  final orth term        " << gshort(last.orth) << " (raw " << gshort(last.orth_raw)
       << ")\n\n";
  }

  os << "identification (rank-1)\n";
  os << "  overall                " << fixed4(ev.rank1.overall) << "  (" << ev.rank1.total
     << " probes)\n";
  os << "  frontal |yaw| <= 60    " << fixed4(ev.rank1.frontal_accuracy) << "  ("
     << ev.rank1.frontal_total << " probes)\n";
  os << "  profile |yaw| > 60     " << fixed4(ev.rank1.profile_accuracy) << "  ("
     << ev.rank1.profile_total << " probes)\n";
  for (const auto& b : ev.rank1.buckets) {
    os << "  bucket <= " << b.upper_edge_deg << " deg"
       << std::string(b.upper_edge_deg < 100 ? (b.upper_edge_deg < 10 ? 2u : 1u) : 0u, ' ')
       << "        " << fixed4(b.accuracy) << "  (" << b.correct << "/" << b.total << ")\n";
  }

  os << "\nverification\n";
  os << "  k-fold accuracy        " << fixed4(ev.verification.mean) << " +/- "
     << fixed4(ev.verification.sd) << "  (" << ev.verification.fold_accuracy.size()
     << " folds)\n";
  os << "  eer                    " << fixed4(ev.eer) << "\n";
  os << "  auc                    " << fixed4(ev.auc) << "\n";
  for (const auto& t : ev.tars) {
    os << "  tar @ far " << gshort(t.requested) << "        " << fixed4(t.tar) << "  (achieved far "
       << gshort(t.achieved) << (t.saturated ? ", saturated" : "") << ")\n";
  }

  os << "\nsubspace probe\n";
  os << "  samples                " << ev.probe.count << "\n";
  os << "  max |<identity,pose>|  " << gshort(ev.probe.max_abs) << "\n";
  os << "  min |<identity,pose>|  " << gshort(ev.probe.min_abs) << "\n";

  os << "\nembedding geometry\n";
  os << "  intra-class mean dist  " << fixed4(ev.geometry.intra_mean) << "  ("
     << ev.geometry.intra_pairs << " pairs)\n";
  os << "  inter-centroid dist    " << fixed4(ev.geometry.inter_mean) << "  ("
     << ev.geometry.inter_pairs << " pairs)\n";
  return os.str();
}

std::string report_csv(const RunReport& report) {
  std::ostringstream os;
  os << "metric,value\n";
  const EvalResult& ev = report.eval;
  if (!report.epoch_losses.empty()) {
    const LossBreakdown& last = report.epoch_losses.back();
    os << "train_epochs," << report.epoch_losses.size() << "\n";
    os << "final_total," << g17(last.total) << "\n";
    os << "final_classification," << g17(last.classification) << "\n";
    os << "final_pose_weighted," << g17(last.pose) << "\n";
    os << "final_orth_weighted," << g17(last.orth) << "\n";
    os << "final_pose_raw," << g17(last.pose_raw) << "\n";
    os << "final_orth_raw," << g17(last.orth_raw) << "\n";
  }
  os << "rank1_overall," << g17(ev.rank1.overall) << "\n";
  os << "rank1_total," << ev.rank1.total << "\n";
  os << "rank1_frontal_accuracy," << g17(ev.rank1.frontal_accuracy) << "\n";
  os << "rank1_frontal_total," << ev.rank1.frontal_total << "\n";
  os << "rank1_profile_accuracy," << g17(ev.rank1.profile_accuracy) << "\n";
  os << "rank1_profile_total," << ev.rank1.profile_total << "\n";
  for (const auto& b : ev.rank1.buckets) {
    os << "rank1_bucket_" << b.upper_edge_deg << "_accuracy," << g17(b.accuracy) << "\n";
    os << "rank1_bucket_" << b.upper_edge_deg << "_correct," << b.correct << "\n";
    os << "rank1_bucket_" << b.upper_edge_deg << "_total," << b.total << "\n";
  }
  os << "verification_mean," << g17(ev.verification.mean) << "\n";
  os << "verification_sd," << g17(ev.verification.sd) << "\n";
  os << "verification_folds," << ev.verification.fold_accuracy.size() << "\n";
  for (std::size_t i = 0; i < ev.verification.fold_accuracy.size(); ++i) {
    os << "verification_fold_" << i << "," << g17(ev.verification.fold_accuracy[i]) << "\n";
  }
  os << "eer," << g17(ev.eer) << "\n";
  os << "auc," << g17(ev.auc) << "\n";
  for (const auto& t : ev.tars) {
    const std::string key = "tar_far_" + gshort(t.requested);
    os << key << "," << g17(t.tar) << "\n";
    os << key << "_achieved," << g17(t.achieved) << "\n";
    os << key << "_saturated," << (t.saturated ? 1 : 0) << "\n";
  }
  os << "probe_count," << ev.probe.count << "\n";
  os << "probe_max_abs," << g17(ev.probe.max_abs) << "\n";
  os << "probe_min_abs," << g17(ev.probe.min_abs) << "\n";
  os << "intra_class_mean," << g17(ev.geometry.intra_mean) << "\n";
  os << "inter_centroid_mean," << g17(ev.geometry.inter_mean) << "\n";
  os << "intra_pairs," << ev.geometry.intra_pairs << "\n";
  os << "inter_pairs," << ev.geometry.inter_pairs << "\n";
  return os.str();
}

std::string epoch_losses_csv(const std::vector<LossBreakdown>& losses) {
  std::ostringstream os;
  os << "epoch,total,classification,pose,orth,pose_raw,orth_raw\n";
  for (std::size_t e = 0; e < losses.size(); ++e) {
    const LossBreakdown& b = losses[e];
    os << e << "," << g17(b.total) << "," << g17(b.classification) << "," << g17(b.pose) << ","
       << g17(b.orth) << "," << g17(b.pose_raw) << "," << g17(b.orth_raw) << "\n";
  }
  return os.str();
}

std::string probe_matrix_csv(const OrthProbeResult& probe) {
  std::ostringstream os;
  for (std::size_t r = 0; r < probe.count; ++r) {
    for (std::size_t c = 0; c < probe.count; ++c) {
      if (c > 0) os << ",";
      os << g17(probe.products[r * probe.count + c]);
    }
    os << "\n";
  }
  return os.str();
}

std::string pca_projection_csv(const std::vector<EmbeddingRecord>& records) {
  std::ostringstream os;
  os << "x,y,identity,yaw\n";
  if (records.empty()) return os.str();

  const std::size_t n = records.size();
  const std::size_t d = records.front().values.size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < n; ++r) {
    if (records[r].values.size() != d) throw ShapeError("embedding width mismatch");
    for (std::size_t c = 0; c < d; ++c) {
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = records[r].values[c];
    }
  }
  x.rowwise() -= x.colwise().mean();
  Eigen::MatrixXd cov = (x.transpose() * x) / std::max<double>(1.0, static_cast<double>(n) - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("principal component solve failed");

  // Eigenvalues come back ascending; take the top two columns and fix each
  // sign so the largest-magnitude loading is positive.
  const Eigen::Index last = static_cast<Eigen::Index>(d) - 1;
  Eigen::MatrixXd components(static_cast<Eigen::Index>(d), 2);
  components.col(0) = solver.eigenvectors().col(last);
  if (d >= 2) {
    components.col(1) = solver.eigenvectors().col(last - 1);
  } else {
    components.col(1).setZero();
  }
  for (int c = 0; c < 2; ++c) {
    Eigen::Index peak = 0;
    components.col(c).cwiseAbs().maxCoeff(&peak);
    if (components(peak, c) < 0.0) components.col(c) = -components.col(c);
  }
  Eigen::MatrixXd projected = x * components;
  for (std::size_t r = 0; r < n; ++r) {
    os << g17(projected(static_cast<Eigen::Index>(r), 0)) << ","
       << g17(projected(static_cast<Eigen::Index>(r), 1)) << "," << records[r].identity << ","
       << g17(records[r].yaw) << "\n";
  }
  return os.str();
}

std::string dataset_path(const std::string& out_dir) { return out_dir + "/dataset.bin"; }
std::string landmarks_path(const std::string& out_dir) { return out_dir + "/landmarks.txt"; }
std::string ae_path(const std::string& out_dir) { return out_dir + "/ae.bin"; }
std::string model_path(const std::string& out_dir) { return out_dir + "/model.bin"; }

void write_run_artifacts(const std::string& out_dir, const RunReport& report,
                         bool include_epoch_losses) {
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir + "/report.txt", report_text(report));
  write_text_file(out_dir + "/report.csv", report_csv(report));
  if (include_epoch_losses) {
    write_text_file(out_dir + "/epoch_losses.csv", epoch_losses_csv(report.epoch_losses));
  }
  write_text_file(out_dir + "/probe_matrix.csv", probe_matrix_csv(report.eval.probe));
  write_text_file(out_dir + "/pca_projection.csv",
                  pca_projection_csv(report.eval.probe_embeddings));
  write_text_file(out_dir + "/config.txt", report.config_echo);
  write_embeddings(out_dir + "/embeddings.bin", report.eval.probe_embeddings);
  write_embeddings(out_dir + "/gallery_embeddings.bin", report.eval.gallery_embeddings);
  write_embeddings(out_dir + "/verif_embeddings.bin", report.eval.verif_embeddings);
  write_pairs(out_dir + "/pairs.txt", report.eval.pairs);
}

void cmd_gen_data(const RunConfig& config) {
  config.validate();
  materialize_dataset(config);
}

AePretrainResult cmd_pretrain_ae(const RunConfig& config) {
  config.validate();
  SynthDataset ds = read_dataset(dataset_path(config.out_dir));
  require_dataset_matches(config, ds);
  AePretrainResult result;
  AutoEncoder ae = pretrain_autoencoder(config, ds, &result);
  ae.save(ae_path(config.out_dir));
  return result;
}

RunReport cmd_train(const RunConfig& config) {
  config.validate();
  SynthDataset ds = read_dataset(dataset_path(config.out_dir));
  require_dataset_matches(config, ds);

  std::optional<AutoEncoder> ae;
  if (config.pose_supervision == PoseSupervision::kLandmarkModule &&
      config.effective_weights().lambda1 > 0.0) {
    ae.emplace(AutoEncoder::load(ae_path(config.out_dir), config.ae_spec()));
  }

  RunOutcome outcome = run_training(config, ds, ae ? &*ae : nullptr);
  CheckpointManifest manifest;
  manifest.lambda1 = config.effective_weights().lambda1;
  manifest.lambda2 = config.effective_weights().lambda2;
  manifest.seed = config.seed;
  outcome.model.save(model_path(config.out_dir), manifest);
  write_run_artifacts(config.out_dir, outcome.report, /*include_epoch_losses=*/true);
  return outcome.report;
}

RunReport cmd_eval(const RunConfig& config, const std::string& checkpoint,
                   const std::string& dataset_file) {
  config.validate();
  auto loaded = PoseFaceModel::load(checkpoint);
  const PoseFaceModel& model = loaded.first;
  SynthDataset ds = read_dataset(dataset_file);
  if (model.spec().d_in != static_cast<int>(ds.spec.d_in) ||
      model.spec().n_classes != static_cast<int>(ds.train_classes)) {
    throw SpecError("checkpoint dimensions do not match the dataset split");
  }

  RunReport report;
  report.config_echo = serialize_config(config);
  report.eval = evaluate_model(config, model, ds);
  write_run_artifacts(config.out_dir, report, /*include_epoch_losses=*/false);
  return report;
}

OrthProbeResult cmd_probe_orth(const RunConfig& config, const std::string& checkpoint,
                               const std::string& dataset_file, std::size_t n_samples) {
  config.validate();
  auto loaded = PoseFaceModel::load(checkpoint);
  const PoseFaceModel& model = loaded.first;
  SynthDataset ds = read_dataset(dataset_file);
  if (model.spec().d_in != static_cast<int>(ds.spec.d_in)) {
    throw SpecError("checkpoint input width does not match the dataset");
  }
  if (ds.ident_test_indices.empty()) throw EmptyDatasetError("no probe samples in the dataset");
  const std::size_t n =
      std::min(std::max<std::size_t>(n_samples, 2), ds.ident_test_indices.size());

  Tensor obs = observation_rows(ds, ds.ident_test_indices.data(), n);
  OrthProbeResult result = orth_probe(model, obs);
  std::filesystem::create_directories(config.out_dir);
  write_text_file(config.out_dir + "/probe_matrix.csv", probe_matrix_csv(result));
  return result;
}

GradCheckReport cmd_gradcheck(std::uint64_t seed) {
  Rng rng(mix_stream(seed, 0x96AD));
  auto random_matrix = [&rng](std::size_t r, std::size_t c) {
    return Tensor::matrix(r, c, rng.gaussian_vector(r * c));
  };

  GradCheckReport report;
  auto add_row = [&report](const std::string& name, double err) {
    report.rows.push_back(GradCheckRow{name, err});
    report.worst = std::max(report.worst, err);
  };

  // Reconstruction loss against the decoder output, binary input mask.
  {
    const std::size_t rows = 3, width = 24;
    std::vector<double> mask(rows * width);
    for (auto& v : mask) v = rng.next_double() < 0.3 ? 1.0 : 0.0;
    Tensor input = Tensor::matrix(rows, width, std::move(mask));
    std::vector<double> out(rows * width);
    for (auto& v : out) v = rng.next_uniform(0.05, 0.95);
    Tensor output = Tensor::matrix(rows, width, std::move(out));
    add_row("reconstruction_loss",
            grad_check([&input](Tape& tape, const Tensor& x) {
              return ae_batch_loss_on_tape(tape, input, x, 3.0);
            }, output));
  }

  // Pose consistency against the pose features.
  {
    Tensor targets = random_matrix(5, 3);
    Tensor f_p = random_matrix(5, 3);
    add_row("pose_consistency_loss",
            grad_check([&targets](Tape& tape, const Tensor& x) {
              return pose_loss(tape, x, targets);
            }, f_p));
    add_row("pose_consistency_squared",
            grad_check([&targets](Tape& tape, const Tensor& x) {
              return pose_loss(tape, x, targets, /*squared=*/true);
            }, f_p));
  }

  // Orthogonality penalty against the identity projection.
  {
    Tensor w_pose = random_matrix(8, 2);
    Tensor w_identity = random_matrix(8, 3);
    add_row("orthogonality_penalty",
            grad_check([&w_pose](Tape& tape, const Tensor& x) {
              return orth_penalty_on_tape(tape, x, w_pose);
            }, w_identity));
  }

  // Adaptive-margin classification against embeddings and class weights.
  {
    BatchLabels labels;
    labels.classes = {0, 1, 2, 3};
    labels.ratios = {0.0, 0.25, 0.75, 1.0};
    Tensor weights = random_matrix(8, 4);
    Tensor f_o = random_matrix(4, 8);
    add_row("margin_loss_embeddings",
            grad_check([&weights, &labels](Tape& tape, const Tensor& x) {
              return paa_loss(tape, x, weights, labels, 8.0, 0.3, 0.2);
            }, f_o));
    add_row("margin_loss_classifier",
            grad_check([&f_o, &labels](Tape& tape, const Tensor& x) {
              return paa_loss(tape, f_o, x, labels, 8.0, 0.3, 0.2);
            }, weights));
  }

  // Full objective against every model parameter, by direct central
  // differences on a miniature network.
  {
    ModelSpec spec;
    spec.d_in = 6;
    spec.backbone_hidden = {8};
    spec.d_b = 8;
    spec.d = 3;
    spec.d_o = 4;
    spec.d_p = 3;
    spec.n_classes = 4;
    spec.scale = 8.0;
    spec.base_margin = 0.3;
    spec.extra_margin = 0.2;
    PoseFaceModel model(spec, seed);

    Tensor obs = random_matrix(4, 6);
    Tensor targets = random_matrix(4, 3);
    BatchLabels labels;
    labels.classes = {0, 1, 2, 3};
    labels.ratios = {0.0, 0.25, 0.75, 1.0};
    LossWeights weights;
    weights.lambda1 = 0.7;
    weights.lambda2 = 1.3;

    auto eval_loss = [&]() {
      Tape tape;
      return poseface_loss(tape, model, obs, labels, targets, weights).value();
    };

    std::vector<Tensor> params = model.parameters();
    for (auto& p : params) p.zero_grad();
    {
      Tape tape;
      Tensor loss = poseface_loss(tape, model, obs, labels, targets, weights);
      tape.backward(loss);
    }
    const double h = 1e-6;
    double worst = 0.0;
    for (auto& p : params) {
      auto& data = p.data();
      const auto& grad = p.grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double keep = data[i];
        data[i] = keep + h;
        const double up = eval_loss();
        data[i] = keep - h;
        const double down = eval_loss();
        data[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({1.0, std::fabs(grad[i]), std::fabs(numeric)});
        worst = std::max(worst, std::fabs(grad[i] - numeric) / denom);
      }
    }
    add_row("full_objective_parameters", worst);
  }

  return report;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& config, const std::string& param,
                                const std::vector<double>& values) {
  config.validate();
  if (param != "lambda1" && param != "lambda2") {
    throw ConfigError("sweep parameter must be lambda1 or lambda2, got '" + param + "'");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<double> grid = values;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  for (double v : grid) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("sweep values must be finite and non-negative");
    }
  }

  SynthDataset ds;
  if (std::filesystem::exists(dataset_path(config.out_dir))) {
    ds = read_dataset(dataset_path(config.out_dir));
    require_dataset_matches(config, ds);
  } else {
    ds = materialize_dataset(config);
  }

  // The pose targets do not depend on the swept weight, so compute them once
  // with the weight forced on.
  RunConfig probe_cfg = config;
  if (param == "lambda1") probe_cfg.loss.lambda1 = grid.back();
  const bool need_targets = probe_cfg.effective_weights().lambda1 > 0.0;
  std::optional<AutoEncoder> ae;
  if (need_targets && config.pose_supervision == PoseSupervision::kLandmarkModule) {
    if (std::filesystem::exists(ae_path(config.out_dir))) {
      ae.emplace(AutoEncoder::load(ae_path(config.out_dir), config.ae_spec()));
    } else {
      ae.emplace(pretrain_autoencoder(config, ds, nullptr));
      ae->save(ae_path(config.out_dir));
    }
  }
  Tensor targets =
      compute_pose_targets(probe_cfg, ds, ae ? &*ae : nullptr, ds.train_indices);

  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (double value : grid) {
    RunConfig point = config;
    if (param == "lambda1") {
      point.loss.lambda1 = value;
    } else {
      point.loss.lambda2 = value;
    }
    point.out_dir = config.out_dir + "/sweep_" + param + "_" + gshort(value);
    point.validate();

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult trained = train_model(point, ds, targets);
    EvalResult ev = evaluate_model(point, trained.model, ds);

    RunReport report;
    report.config_echo = serialize_config(point);
    report.epoch_losses = std::move(trained.epoch_losses);
    report.eval = std::move(ev);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_run_artifacts(point.out_dir, report, /*include_epoch_losses=*/true);

    SweepRow row;
    row.value = value;
    row.profile_rank1 = report.eval.rank1.profile_accuracy;
    row.overall_rank1 = report.eval.rank1.overall;
    row.verification_mean = report.eval.verification.mean;
    row.probe_max = report.eval.probe.max_abs;
    rows.push_back(row);
  }

  write_text_file(config.out_dir + "/sweep.csv", sweep_csv(param, rows));
  write_text_file(config.out_dir + "/sweep.txt", sweep_text(param, rows));
  return rows;
}

std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << param << ",overall_rank1,profile_rank1,verification_mean,probe_max_abs\n";
  for (const auto& r : rows) {
    os << g17(r.value) << "," << g17(r.overall_rank1) << "," << g17(r.profile_rank1) << ","
       << g17(r.verification_mean) << "," << g17(r.probe_max) << "\n";
  }
  return os.str();
}

std::string sweep_text(const std::string& param, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << param << "  overall-rank1  profile-rank1  verif-mean  probe-max\n";
  for (const auto& r : rows) {
    os << gshort(r.value) << "  " << fixed4(r.overall_rank1) << "  " << fixed4(r.profile_rank1)
       << "  " << fixed4(r.verification_mean) << "  " << gshort(r.probe_max) << "\n";
  }
  return os.str();
}

}  // namespace poseface
