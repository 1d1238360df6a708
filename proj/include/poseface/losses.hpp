#pragma once

#include <cstddef>
#include <vector>

#include "poseface/model.hpp"
#include "poseface/tensor.hpp"

namespace poseface {

// Per-sample supervision for the margin classifier: the class index and the
// adaptive ratio r in [0, 1] that scales the extra margin (r = min(|yaw|, 90) / 90
// for the synthetic benchmark).
struct BatchLabels {
  std::vector<std::size_t> classes;
  std::vector<double> ratios;

  void validate(std::size_t batch, std::size_t n_classes) const;  // throws ShapeError/SpecError
};

struct LossWeights {
  double lambda1 = 200.0;  // pose-consistency multiplier
  double lambda2 = 1e5;    // subspace-orthogonality multiplier

  void validate() const;  // throws ConfigError
};

// Weighted terms of the full objective; they sum to `total` exactly.
struct LossBreakdown {
  double total = 0.0;
  double classification = 0.0;
  double pose = 0.0;  // lambda1 * raw pose loss
  double orth = 0.0;  // lambda2 * raw orthogonality penalty
  double pose_raw = 0.0;
  double orth_raw = 0.0;
};

// Angular-margin logits.  Embedding rows and classifier columns are
// L2-normalized, so off-target logits are s*cos(theta_j).  The target column
// of row i becomes s*cos(theta_y + m_i) while theta_y <= pi - m_i and the
// monotone linear extension s*(cos(theta_y) - m_i*sin(m_i)) past that point.
Tensor margin_logits(Tape& tape, const Tensor& f_o, const Tensor& class_weights,
                     const std::vector<std::size_t>& classes, const std::vector<double>& margins,
                     double scale);

// Mean cross-entropy over margin_logits with per-sample margin
// m_i = base_margin + ratios[i] * extra_margin.
Tensor paa_loss(Tape& tape, const Tensor& f_o, const Tensor& class_weights,
                const BatchLabels& labels, double scale, double base_margin, double extra_margin);

// Fixed-margin special case; bitwise identical to paa_loss with
// extra_margin = 0.
Tensor arcface_loss(Tape& tape, const Tensor& f_o, const Tensor& class_weights,
                    const std::vector<std::size_t>& classes, double scale, double margin);

// Mean Euclidean distance between pose features and their targets; squared
// mode averages the squared distances instead.
Tensor pose_loss(Tape& tape, const Tensor& f_p, const Tensor& targets, bool squared = false);

// Full objective on one batch:
//   classification + lambda1 * pose_loss(F_p, pose_targets) + lambda2 * orth_penalty.
// A zero lambda skips its term entirely, so the weighted-down objective is
// bitwise the plain classification loss.  `pose_targets` may be undefined
// when lambda1 = 0.  Margins use the model spec unless use_adaptive_margin is
// false, which pins every margin to the base value.
Tensor poseface_loss(Tape& tape, const PoseFaceModel& model, const Tensor& observations,
                     const BatchLabels& labels, const Tensor& pose_targets,
                     const LossWeights& weights, LossBreakdown* breakdown = nullptr,
                     bool use_adaptive_margin = true, bool squared_pose = false);

}  // namespace poseface
