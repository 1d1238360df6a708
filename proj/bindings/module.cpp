#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "poseface/config.hpp"
#include "poseface/geometry.hpp"
#include "poseface/losses.hpp"
#include "poseface/metrics.hpp"
#include "poseface/model.hpp"
#include "poseface/pipeline.hpp"
#include "poseface/synthdata.hpp"
#include "poseface/tensor.hpp"

namespace py = pybind11;

namespace {

using poseface::Tensor;

Tensor to_matrix(const std::vector<std::vector<double>>& rows, const char* name) {
  if (rows.empty()) throw poseface::ShapeError(std::string(name) + " must not be empty");
  const std::size_t cols = rows.front().size();
  std::vector<double> buf;
  buf.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw poseface::ShapeError(std::string(name) + " rows differ in width");
    buf.insert(buf.end(), r.begin(), r.end());
  }
  return Tensor::matrix(rows.size(), cols, std::move(buf));
}

std::vector<std::vector<double>> to_rows(const Tensor& m) {
  std::vector<std::vector<double>> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out[r].assign(m.data().begin() + static_cast<std::ptrdiff_t>(r * m.cols()),
                  m.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols()));
  }
  return out;
}

poseface::ScoreSet to_scores(const std::vector<double>& scores, const std::vector<bool>& genuine) {
  poseface::ScoreSet set;
  set.scores = scores;
  set.genuine = genuine;
  return set;
}

}  // namespace

PYBIND11_MODULE(poseface_core, m) {
  m.doc() = "pose-adaptive margin recognition: losses, metrics, and the synthetic benchmark";

  py::register_exception<poseface::Error>(m, "PoseFaceError", PyExc_RuntimeError);

  m.def("adaptive_ratio", &poseface::adaptive_ratio, py::arg("yaw_degrees"),
        "Pose hardness ratio min(|yaw|, 90) / 90.");

  m.def("pose_basis",
        [](double yaw) {
          auto b = poseface::pose_basis(yaw);
          return std::vector<double>(b.begin(), b.end());
        },
        py::arg("yaw_degrees"), "sin/cos of yaw and its 2nd-4th harmonics.");

  m.def("margin_logits",
        [](const std::vector<std::vector<double>>& embeddings,
           const std::vector<std::vector<double>>& weights, const std::vector<std::size_t>& classes,
           const std::vector<double>& margins, double scale) {
          poseface::Tape tape;
          Tensor out = poseface::margin_logits(tape, to_matrix(embeddings, "embeddings"),
                                               to_matrix(weights, "weights"), classes, margins,
                                               scale);
          return to_rows(out);
        },
        py::arg("embeddings"), py::arg("weights"), py::arg("classes"), py::arg("margins"),
        py::arg("scale"),
        "Scaled cosine logits with an additive angular margin on each target column.");

  m.def("paa_loss",
        [](const std::vector<std::vector<double>>& embeddings,
           const std::vector<std::vector<double>>& weights, const std::vector<std::size_t>& classes,
           const std::vector<double>& ratios, double scale, double base_margin,
           double extra_margin) {
          poseface::Tape tape;
          poseface::BatchLabels labels;
          labels.classes = classes;
          labels.ratios = ratios;
          return poseface::paa_loss(tape, to_matrix(embeddings, "embeddings"),
                                    to_matrix(weights, "weights"), labels, scale, base_margin,
                                    extra_margin)
              .value();
        },
        py::arg("embeddings"), py::arg("weights"), py::arg("classes"), py::arg("ratios"),
        py::arg("scale"), py::arg("base_margin"), py::arg("extra_margin"),
        "Mean cross-entropy under the pose-adaptive angular margin.");

  m.def("arcface_loss",
        [](const std::vector<std::vector<double>>& embeddings,
           const std::vector<std::vector<double>>& weights, const std::vector<std::size_t>& classes,
           double scale, double margin) {
          poseface::Tape tape;
          return poseface::arcface_loss(tape, to_matrix(embeddings, "embeddings"),
                                        to_matrix(weights, "weights"), classes, scale, margin)
              .value();
        },
        py::arg("embeddings"), py::arg("weights"), py::arg("classes"), py::arg("scale"),
        py::arg("margin"), "Fixed-margin special case of paa_loss.");

  m.def("pose_loss",
        [](const std::vector<std::vector<double>>& features,
           const std::vector<std::vector<double>>& targets, bool squared) {
          poseface::Tape tape;
          return poseface::pose_loss(tape, to_matrix(features, "features"),
                                     to_matrix(targets, "targets"), squared)
              .value();
        },
        py::arg("features"), py::arg("targets"), py::arg("squared") = false,
        "Mean (squared) Euclidean distance between pose features and targets.");

  m.def("orth_penalty",
        [](const std::vector<std::vector<double>>& w_identity,
           const std::vector<std::vector<double>>& w_pose) {
          return poseface::orth_penalty(to_matrix(w_identity, "w_identity"),
                                        to_matrix(w_pose, "w_pose"));
        },
        py::arg("w_identity"), py::arg("w_pose"),
        "Frobenius norm of the column-normalized cross-Gram matrix.");

  m.def("cosine_similarity", &poseface::cosine_similarity, py::arg("a"), py::arg("b"));

  m.def("eer",
        [](const std::vector<double>& scores, const std::vector<bool>& genuine) {
          return poseface::eer(to_scores(scores, genuine));
        },
        py::arg("scores"), py::arg("genuine"));

  m.def("auc",
        [](const std::vector<double>& scores, const std::vector<bool>& genuine) {
          return poseface::auc(to_scores(scores, genuine));
        },
        py::arg("scores"), py::arg("genuine"));

  m.def("tar_at_far",
        [](const std::vector<double>& scores, const std::vector<bool>& genuine, double far) {
          auto r = poseface::tar_at_far(to_scores(scores, genuine), far);
          py::dict out;
          out["tar"] = r.tar;
          out["achieved_far"] = r.achieved_far;
          out["saturated"] = r.saturated;
          return out;
        },
        py::arg("scores"), py::arg("genuine"), py::arg("far"));

  m.def("kfold_accuracy",
        [](const std::vector<double>& scores, const std::vector<bool>& genuine, std::size_t k) {
          auto r = poseface::kfold_accuracy(to_scores(scores, genuine), k);
          py::dict out;
          out["mean"] = r.mean;
          out["sd"] = r.sd;
          out["folds"] = r.fold_accuracy;
          return out;
        },
        py::arg("scores"), py::arg("genuine"), py::arg("k"));

  m.def("rank1",
        [](const std::vector<std::vector<double>>& gallery,
           const std::vector<int>& gallery_identity, const std::vector<std::vector<double>>& probes,
           const std::vector<int>& probe_identity, const std::vector<double>& probe_yaw) {
          poseface::IdentificationProtocol protocol;
          protocol.gallery = gallery;
          protocol.gallery_identity = gallery_identity;
          protocol.probes = probes;
          protocol.probe_identity = probe_identity;
          protocol.probe_yaw = probe_yaw;
          auto r = poseface::rank1(protocol);
          py::dict out;
          out["overall"] = r.overall;
          out["total"] = r.total;
          out["frontal_accuracy"] = r.frontal_accuracy;
          out["profile_accuracy"] = r.profile_accuracy;
          py::list buckets;
          for (const auto& b : r.buckets) {
            py::dict bucket;
            bucket["upper_edge_deg"] = b.upper_edge_deg;
            bucket["total"] = b.total;
            bucket["correct"] = b.correct;
            bucket["accuracy"] = b.accuracy;
            buckets.append(bucket);
          }
          out["buckets"] = buckets;
          return out;
        },
        py::arg("gallery"), py::arg("gallery_identity"), py::arg("probes"),
        py::arg("probe_identity"), py::arg("probe_yaw"),
        "Nearest-gallery-by-cosine identification with 15-degree yaw buckets.");

  m.def("generate_dataset",
        [](std::uint32_t n_identities, std::uint32_t samples_per_identity, double p_profile,
           double noise_sigma, std::uint32_t d_in, std::uint64_t seed, double split) {
          poseface::DatasetSpec spec;
          spec.n_identities = n_identities;
          spec.samples_per_identity = samples_per_identity;
          spec.p_profile = p_profile;
          spec.noise_sigma = noise_sigma;
          spec.d_in = d_in;
          spec.seed = seed;
          spec.split = split;
          poseface::SynthDataset ds = poseface::generate_dataset(spec);
          py::dict out;
          std::vector<std::vector<double>> observations;
          std::vector<std::uint32_t> identities;
          std::vector<double> yaws;
          std::vector<bool> is_profile;
          observations.reserve(ds.samples.size());
          for (const auto& s : ds.samples) {
            observations.push_back(s.observation);
            identities.push_back(s.identity);
            yaws.push_back(s.landmarks.yaw);
            is_profile.push_back(s.is_profile);
          }
          out["observations"] = observations;
          out["identities"] = identities;
          out["yaws"] = yaws;
          out["is_profile"] = is_profile;
          out["train_indices"] = ds.train_indices;
          out["ident_test_indices"] = ds.ident_test_indices;
          out["verif_test_indices"] = ds.verif_test_indices;
          out["train_classes"] = ds.train_classes;
          return out;
        },
        py::arg("n_identities") = 64, py::arg("samples_per_identity") = 80,
        py::arg("p_profile") = 0.0019, py::arg("noise_sigma") = 0.05, py::arg("d_in") = 64,
        py::arg("seed") = 1, py::arg("split") = 0.8,
        "Pose-imbalanced synthetic recognition benchmark with deterministic splits.");

  m.def("gradcheck_worst",
        [](std::uint64_t seed) { return poseface::cmd_gradcheck(seed).worst; },
        py::arg("seed") = 7,
        "Worst relative error of the finite-difference audit across every loss.");
}
