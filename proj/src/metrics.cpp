#include "poseface/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <thread>

#include "poseface/serialize.hpp"

namespace poseface {

std::size_t ScoreSet::genuine_count() const {
  std::size_t n = 0;
  for (bool g : genuine) n += g ? 1 : 0;
  return n;
}

std::size_t ScoreSet::impostor_count() const { return genuine.size() - genuine_count(); }

void ScoreSet::validate() const {
  if (scores.size() != genuine.size()) {
    throw DegenerateScoreError("scores and labels differ in length");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw DegenerateScoreError("non-finite verification score");
  }
  std::size_t g = genuine_count();
  if (g == 0 || g == genuine.size()) {
    throw DegenerateScoreError("need at least one genuine and one impostor score");
  }
}

std::vector<RocPoint> roc(const ScoreSet& set) {
  set.validate();
  const double g_total = static_cast<double>(set.genuine_count());
  const double i_total = static_cast<double>(set.impostor_count());

  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&set](std::size_t a, std::size_t b) {
    return set.scores[a] > set.scores[b];
  });

  std::vector<RocPoint> curve;
  curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t gen_at_or_above = 0, imp_at_or_above = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    double t = set.scores[order[i]];
    while (i < order.size() && set.scores[order[i]] == t) {
      if (set.genuine[order[i]]) {
        ++gen_at_or_above;
      } else {
        ++imp_at_or_above;
      }
      ++i;
    }
    curve.push_back({t, static_cast<double>(imp_at_or_above) / i_total,
                     static_cast<double>(gen_at_or_above) / g_total});
  }
  return curve;
}

double auc(const ScoreSet& set) {
  std::vector<RocPoint> curve = roc(set);
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].far - curve[i - 1].far) * (curve[i].tar + curve[i - 1].tar) * 0.5;
  }
  return area;
}

double eer(const ScoreSet& set) {
  std::vector<RocPoint> curve = roc(set);
  // frr - far is 1 at the sentinel and -1 at the accept-everything end, and
  // never increases along the sweep, so a sign change always exists.
  for (std::size_t i = 1; i < curve.size(); ++i) {
    double d_prev = (1.0 - curve[i - 1].tar) - curve[i - 1].far;
    double d_here = (1.0 - curve[i].tar) - curve[i].far;
    if (d_here > 0.0) continue;
    if (d_prev <= 0.0) return curve[i - 1].far;
    double alpha = d_prev / (d_prev - d_here);
    return curve[i - 1].far + alpha * (curve[i].far - curve[i - 1].far);
  }
  return curve.back().far;
}

namespace {

// Best TAR for each distinct FAR along the sweep (TAR only grows within a
// vertical run, so the last point of a run wins).
std::vector<RocPoint> far_envelope(const std::vector<RocPoint>& curve) {
  std::vector<RocPoint> env;
  for (const RocPoint& p : curve) {
    if (!env.empty() && env.back().far == p.far) {
      env.back() = p;
    } else {
      env.push_back(p);
    }
  }
  return env;
}

}  // namespace

TarAtFarResult tar_at_far(const ScoreSet& set, double far) {
  if (!(far >= 0.0) || !(far <= 1.0)) throw DegenerateScoreError("FAR request must lie in [0, 1]");
  std::vector<RocPoint> env = far_envelope(roc(set));
  TarAtFarResult result;
  result.requested_far = far;
  double resolution = 1.0 / static_cast<double>(set.impostor_count());
  if (far < resolution) {
    // Below the resolution of the impostor set: report the strictest
    // achievable point not exceeding the request and flag it.
    result.saturated = true;
    for (const RocPoint& p : env) {
      if (p.far <= far) {
        result.tar = p.tar;
        result.achieved_far = p.far;
      }
    }
    return result;
  }
  result.achieved_far = far;
  for (std::size_t i = 1; i < env.size(); ++i) {
    if (env[i].far < far) continue;
    if (env[i].far == far) {
      result.tar = env[i].tar;
      return result;
    }
    const RocPoint& lo = env[i - 1];
    const RocPoint& hi = env[i];
    double alpha = (far - lo.far) / (hi.far - lo.far);
    result.tar = lo.tar + alpha * (hi.tar - lo.tar);
    return result;
  }
  result.tar = env.front().far == far ? env.front().tar : 1.0;
  return result;
}

namespace {

double accuracy_at(const ScoreSet& set, const std::vector<std::size_t>& idx, double threshold) {
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    bool accept = set.scores[i] >= threshold;
    if (accept == static_cast<bool>(set.genuine[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

KfoldResult kfold_accuracy(const ScoreSet& set, std::size_t k) {
  set.validate();
  if (k < 2) throw FoldError("cross-validation needs at least two folds");
  const std::size_t n = set.size();
  if (n < k) throw FoldError("fewer scores than folds");

  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::size_t begin = f * n / k, end = (f + 1) * n / k;
    for (std::size_t i = begin; i < end; ++i) folds[f].push_back(i);
  }
  for (const auto& fold : folds) {
    bool has_gen = false, has_imp = false;
    for (std::size_t i : fold) (set.genuine[i] ? has_gen : has_imp) = true;
    if (fold.empty() || !has_gen || !has_imp) {
      throw FoldError("every fold needs both genuine and impostor pairs");
    }
  }

  KfoldResult result;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
    }
    std::vector<double> candidates;
    candidates.reserve(train.size() + 1);
    for (std::size_t i : train) candidates.push_back(set.scores[i]);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    candidates.push_back(candidates.back() + 1.0);  // reject-everything option

    double best_threshold = candidates.front();
    double best_accuracy = -1.0;
    for (double t : candidates) {
      double acc = accuracy_at(set, train, t);
      if (acc > best_accuracy) {  // strict: ties keep the lowest threshold
        best_accuracy = acc;
        best_threshold = t;
      }
    }
    result.fold_accuracy.push_back(accuracy_at(set, folds[f], best_threshold));
  }

  double mean = 0.0;
  for (double a : result.fold_accuracy) mean += a;
  mean /= static_cast<double>(k);
  double var = 0.0;
  for (double a : result.fold_accuracy) var += (a - mean) * (a - mean);
  result.mean = mean;
  result.sd = std::sqrt(var / static_cast<double>(k));
  return result;
}

void IdentificationProtocol::validate() const {
  if (gallery.empty() || probes.empty()) throw SpecError("identification needs gallery and probes");
  if (gallery.size() != gallery_identity.size()) throw ShapeError("gallery label count mismatch");
  if (probes.size() != probe_identity.size() || probes.size() != probe_yaw.size()) {
    throw ShapeError("probe label count mismatch");
  }
  std::vector<int> ids = gallery_identity;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw SpecError("gallery identities must be unique");
  }
  std::size_t dim = gallery.front().size();
  for (const auto& g : gallery) {
    if (g.size() != dim) throw ShapeError("gallery embedding width mismatch");
  }
  for (const auto& p : probes) {
    if (p.size() != dim) throw ShapeError("probe embedding width mismatch");
  }
}

int yaw_bucket_edge(double yaw) {
  double mag = std::fabs(yaw);
  int bucket = static_cast<int>(std::ceil(mag / 15.0));
  bucket = std::max(1, std::min(bucket, 6));
  return 15 * bucket;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Rank1Result rank1(const IdentificationProtocol& protocol) {
  protocol.validate();
  Rank1Result result;
  result.total = protocol.probes.size();

  std::vector<std::size_t> bucket_total(7, 0), bucket_correct(7, 0);
  for (std::size_t p = 0; p < protocol.probes.size(); ++p) {
    double best_sim = 0.0;
    int best_identity = 0;
    bool first = true;
    for (std::size_t g = 0; g < protocol.gallery.size(); ++g) {
      double sim = cosine_similarity(protocol.probes[p], protocol.gallery[g]);
      int identity = protocol.gallery_identity[g];
      if (first || sim > best_sim || (sim == best_sim && identity < best_identity)) {
        best_sim = sim;
        best_identity = identity;
        first = false;
      }
    }
    bool correct = best_identity == protocol.probe_identity[p];
    int slot = yaw_bucket_edge(protocol.probe_yaw[p]) / 15;
    ++bucket_total[slot];
    bucket_correct[slot] += correct ? 1 : 0;
  }

  std::size_t correct_total = 0;
  for (int slot = 1; slot <= 6; ++slot) {
    if (bucket_total[slot] == 0) continue;  // absent buckets are omitted, not zero
    BucketAccuracy b;
    b.upper_edge_deg = slot * 15;
    b.total = bucket_total[slot];
    b.correct = bucket_correct[slot];
    b.accuracy = static_cast<double>(b.correct) / static_cast<double>(b.total);
    result.buckets.push_back(b);
    correct_total += b.correct;
    bool profile = b.upper_edge_deg > 60;
    (profile ? result.profile_total : result.frontal_total) += b.total;
  }
  result.overall = static_cast<double>(correct_total) / static_cast<double>(result.total);
  std::size_t profile_correct = 0, frontal_correct = 0;
  for (const auto& b : result.buckets) {
    (b.upper_edge_deg > 60 ? profile_correct : frontal_correct) += b.correct;
  }
  if (result.profile_total > 0) {
    result.profile_accuracy =
        static_cast<double>(profile_correct) / static_cast<double>(result.profile_total);
  }
  if (result.frontal_total > 0) {
    result.frontal_accuracy =
        static_cast<double>(frontal_correct) / static_cast<double>(result.frontal_total);
  }
  return result;
}

unsigned metric_thread_count(std::size_t items) {
  unsigned cap = 0;
  if (const char* env = std::getenv("POSEFACE_THREADS")) {
    char* end = nullptr;
    long value = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || value <= 0) {
      throw ConfigError("POSEFACE_THREADS must be a positive integer");
    }
    cap = static_cast<unsigned>(value);
  } else {
    cap = std::thread::hardware_concurrency();
    if (cap == 0) cap = 1;
  }
  cap = std::min<unsigned>(cap, 16);
  if (items < cap) cap = static_cast<unsigned>(items);
  return std::max(1u, cap);
}

namespace {

// Rows of `m` normalized in place; rows below the norm floor become zero so
// the probe never faults on degenerate features.
void safe_normalize_rows(std::vector<double>& m, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sq += m[i * cols + j] * m[i * cols + j];
    double nrm = std::sqrt(sq);
    if (nrm < Tape::kNormFloor) {
      for (std::size_t j = 0; j < cols; ++j) m[i * cols + j] = 0.0;
    } else {
      for (std::size_t j = 0; j < cols; ++j) m[i * cols + j] /= nrm;
    }
  }
}

}  // namespace

OrthProbeResult orth_probe(const PoseFaceModel& model, const Tensor& observations) {
  if (observations.rows() < 2) throw SpecError("orthogonality probe needs at least two samples");
  const std::size_t n = observations.rows();
  const std::size_t d_b = static_cast<std::size_t>(model.spec().d_b);

  Tape tape;
  Tensor f_b = model.backbone_forward(tape, observations);
  auto [f_i, f_p] = model.project(tape, f_b);
  Tensor wi = tape.l2_normalize_cols(model.identity_weights());
  Tensor wp = tape.l2_normalize_cols(model.pose_weights());
  // Map both features back into the shared space spanned by the normalized
  // projection columns, where their overlap is meaningful.
  std::vector<double> ident = tape.matmul(f_i, tape.transpose(wi)).data();
  std::vector<double> pose = tape.matmul(f_p, tape.transpose(wp)).data();
  safe_normalize_rows(ident, n, d_b);
  safe_normalize_rows(pose, n, d_b);

  OrthProbeResult result;
  result.count = n;
  result.products.assign(n * n, 0.0);
  unsigned workers = metric_thread_count(n);
  auto fill_rows = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d_b; ++k) dot += ident[i * d_b + k] * pose[j * d_b + k];
        result.products[i * n + j] = dot;
      }
    }
  };
  if (workers <= 1) {
    fill_rows(0, n);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      std::size_t begin = n * w / workers, end = n * (w + 1) / workers;
      pool.emplace_back(fill_rows, begin, end);
    }
    for (auto& t : pool) t.join();
  }

  result.max_abs = 0.0;
  result.min_abs = std::numeric_limits<double>::infinity();
  for (double v : result.products) {
    double a = std::fabs(v);
    result.max_abs = std::max(result.max_abs, a);
    result.min_abs = std::min(result.min_abs, a);
  }
  return result;
}

ClassGeometry class_geometry(const std::vector<std::vector<double>>& embeddings,
                             const std::vector<int>& labels) {
  if (embeddings.size() != labels.size()) throw ShapeError("one label per embedding required");
  std::vector<int> classes = labels;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw SpecError("class geometry needs at least two classes");

  auto distance = [](const std::vector<double>& a, const std::vector<double>& b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sq);
  };

  ClassGeometry geo;
  double intra_sum = 0.0;
  std::vector<std::vector<double>> centroids;
  for (int c : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    std::vector<double> centroid(embeddings.front().size(), 0.0);
    for (std::size_t i : members) {
      if (embeddings[i].size() != centroid.size()) throw ShapeError("embedding width mismatch");
      for (std::size_t k = 0; k < centroid.size(); ++k) centroid[k] += embeddings[i][k];
    }
    for (double& x : centroid) x /= static_cast<double>(members.size());
    centroids.push_back(std::move(centroid));
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        intra_sum += distance(embeddings[members[a]], embeddings[members[b]]);
        ++geo.intra_pairs;
      }
    }
  }
  double inter_sum = 0.0;
  for (std::size_t a = 0; a < centroids.size(); ++a) {
    for (std::size_t b = a + 1; b < centroids.size(); ++b) {
      inter_sum += distance(centroids[a], centroids[b]);
      ++geo.inter_pairs;
    }
  }
  if (geo.intra_pairs > 0) geo.intra_mean = intra_sum / static_cast<double>(geo.intra_pairs);
  geo.inter_mean = inter_sum / static_cast<double>(geo.inter_pairs);
  return geo;
}

void write_embeddings(const std::string& path, const std::vector<EmbeddingRecord>& records) {
  if (records.empty()) throw EmptyDatasetError("refusing to write an empty embedding file");
  std::size_t dim = records.front().values.size();
  BinaryWriter w(path);
  w.magic("POSEEMB1");
  w.u32(static_cast<std::uint32_t>(records.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& rec : records) {
    if (rec.values.size() != dim) throw ShapeError("embedding width mismatch in record");
    w.u32(rec.identity);
    w.f64(rec.yaw);
    w.f64_array(rec.values);
  }
  w.close();
}

std::vector<EmbeddingRecord> read_embeddings(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("POSEEMB1");
  std::size_t count = r.u32();
  std::size_t dim = r.u32();
  if (count == 0 || dim == 0) r.fail("embedding file must hold at least one nonempty record");
  std::vector<EmbeddingRecord> records(count);
  for (auto& rec : records) {
    rec.identity = r.u32();
    rec.yaw = r.f64();
    rec.values = r.f64_array(dim);
    for (double v : rec.values) {
      if (!std::isfinite(v)) r.fail("non-finite embedding value");
    }
  }
  if (!r.at_eof()) r.fail("trailing bytes after the last embedding");
  return records;
}

void write_pairs(const std::string& path, const std::vector<VerificationPair>& pairs) {
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("cannot open pair file for writing: " + path);
  for (const auto& p : pairs) {
    out << p.a << ',' << p.b << ',' << (p.genuine ? "genuine" : "impostor") << '\n';
  }
  if (!out) throw MissingArtifactError("failed writing pair file: " + path);
}

std::vector<VerificationPair> read_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open pair file: " + path);
  std::vector<VerificationPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto complain = [&](const std::string& what) {
      throw FormatError("pair file " + path + " line " + std::to_string(line_no) + ": " + what);
    };
    std::size_t c1 = line.find(',');
    std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) complain("expected idA,idB,label");
    VerificationPair p;
    try {
      std::size_t used = 0;
      p.a = std::stoull(line.substr(0, c1), &used);
      if (used != c1) complain("bad first index");
      std::string second = line.substr(c1 + 1, c2 - c1 - 1);
      p.b = std::stoull(second, &used);
      if (used != second.size()) complain("bad second index");
    } catch (const std::logic_error&) {
      complain("indices must be nonnegative integers");
    }
    std::string label = line.substr(c2 + 1);
    if (label == "genuine") {
      p.genuine = true;
    } else if (label == "impostor") {
      p.genuine = false;
    } else {
      complain("label must be 'genuine' or 'impostor'");
    }
    pairs.push_back(p);
  }
  return pairs;
}

ScoreSet score_pairs(const std::vector<EmbeddingRecord>& embeddings,
                     const std::vector<VerificationPair>& pairs) {
  ScoreSet set;
  for (const auto& p : pairs) {
    if (p.a >= embeddings.size() || p.b >= embeddings.size()) {
      throw SpecError("pair index exceeds the embedding list");
    }
    set.scores.push_back(cosine_similarity(embeddings[p.a].values, embeddings[p.b].values));
    set.genuine.push_back(p.genuine);
  }
  return set;
}

}  // namespace poseface
