#include "poseface/losses.hpp"

#include <cmath>
#include <string>

namespace poseface {

namespace {

constexpr double kPi = 3.141592653589793;
constexpr double kHalfPi = 1.5707963267948966;

}  // namespace

void BatchLabels::validate(std::size_t batch, std::size_t n_classes) const {
  if (classes.size() != batch || ratios.size() != batch) {
    throw ShapeError("batch labels must carry one class and one ratio per sample");
  }
  for (std::size_t y : classes) {
    if (y >= n_classes) throw SpecError("class index " + std::to_string(y) + " out of range");
  }
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw SpecError("adaptive ratio must lie in [0, 1]");
  }
}

void LossWeights::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("loss multipliers must be nonnegative");
}

Tensor margin_logits(Tape& tape, const Tensor& f_o, const Tensor& class_weights,
                     const std::vector<std::size_t>& classes, const std::vector<double>& margins,
                     double scale) {
  const std::size_t batch = f_o.rows();
  if (classes.size() != batch || margins.size() != batch) {
    throw ShapeError("margin logits need one class index and one margin per row");
  }
  if (f_o.cols() != class_weights.rows()) {
    throw ShapeError("embedding width does not match the classifier");
  }
  if (scale <= 0.0) throw SpecError("logit scale must be positive");
  for (double m : margins) {
    if (m < 0.0 || m >= kHalfPi) throw SpecError("margins must lie in [0, pi/2)");
  }
  for (std::size_t y : classes) {
    if (y >= class_weights.cols()) throw SpecError("class index out of range");
  }

  Tensor embed = tape.l2_normalize_rows(f_o);
  Tensor weights = tape.l2_normalize_cols(class_weights);
  Tensor cosines = tape.matmul(embed, weights);
  Tensor target_cos = tape.gather_columns(cosines, classes);
  Tensor theta = tape.acos_clamped(target_cos);

  // Branch masks come from forward values; each sample's margin is a
  // constant, so only the chosen branch's formula is differentiated.
  std::vector<double> in_range(batch), out_range(batch), extension_drop(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    bool main_branch = theta.data()[i] <= kPi - margins[i];
    in_range[i] = main_branch ? 1.0 : 0.0;
    out_range[i] = main_branch ? 0.0 : 1.0;
    extension_drop[i] = margins[i] * std::sin(margins[i]);
  }
  Tensor margin_vec = Tensor::vector(margins);
  Tensor shifted = tape.scale(tape.cos(tape.add(theta, margin_vec)), scale);
  Tensor extended = tape.scale(tape.sub(target_cos, Tensor::vector(extension_drop)), scale);
  Tensor target = tape.add(tape.mul(Tensor::vector(in_range), shifted),
                           tape.mul(Tensor::vector(out_range), extended));
  return tape.scatter_replace(tape.scale(cosines, scale), classes, target);
}

namespace {

Tensor cross_entropy_mean(Tape& tape, const Tensor& logits,
                          const std::vector<std::size_t>& classes) {
  Tensor per_sample = tape.sub(tape.logsumexp_rows(logits), tape.gather_columns(logits, classes));
  return tape.scale(tape.sum(per_sample), 1.0 / static_cast<double>(logits.rows()));
}

}  // namespace

Tensor paa_loss(Tape& tape, const Tensor& f_o, const Tensor& class_weights,
                const BatchLabels& labels, double scale, double base_margin, double extra_margin) {
  labels.validate(f_o.rows(), class_weights.cols());
  if (base_margin < 0.0 || extra_margin < 0.0 || base_margin + extra_margin >= kHalfPi) {
    throw SpecError("margins must satisfy 0 <= m_b and m_b + delta_m < pi/2");
  }
  std::vector<double> margins(labels.ratios.size());
  for (std::size_t i = 0; i < margins.size(); ++i) {
    margins[i] = base_margin + labels.ratios[i] * extra_margin;
  }
  Tensor logits = margin_logits(tape, f_o, class_weights, labels.classes, margins, scale);
  return cross_entropy_mean(tape, logits, labels.classes);
}

Tensor arcface_loss(Tape& tape, const Tensor& f_o, const Tensor& class_weights,
                    const std::vector<std::size_t>& classes, double scale, double margin) {
  BatchLabels labels;
  labels.classes = classes;
  labels.ratios.assign(classes.size(), 0.0);
  return paa_loss(tape, f_o, class_weights, labels, scale, margin, 0.0);
}

Tensor pose_loss(Tape& tape, const Tensor& f_p, const Tensor& targets, bool squared) {
  if (f_p.shape() != targets.shape()) {
    throw ShapeError("pose features and pose targets must share a shape");
  }
  Tensor distances = tape.row_norms(tape.sub(f_p, targets));
  if (squared) distances = tape.mul(distances, distances);
  return tape.scale(tape.sum(distances), 1.0 / static_cast<double>(f_p.rows()));
}

Tensor poseface_loss(Tape& tape, const PoseFaceModel& model, const Tensor& observations,
                     const BatchLabels& labels, const Tensor& pose_targets,
                     const LossWeights& weights, LossBreakdown* breakdown,
                     bool use_adaptive_margin, bool squared_pose) {
  weights.validate();
  const ModelSpec& spec = model.spec();
  Tensor f_b = model.backbone_forward(tape, observations);
  auto [f_i, f_p] = model.project(tape, f_b);
  Tensor f_o = model.feature_layer_forward(tape, f_i);

  double extra = use_adaptive_margin ? spec.extra_margin : 0.0;
  Tensor total = paa_loss(tape, f_o, model.classifier_weights(), labels, spec.scale,
                          spec.base_margin, extra);
  LossBreakdown parts;
  parts.classification = total.value();

  if (weights.lambda1 > 0.0) {
    if (!pose_targets.defined()) {
      throw MissingArtifactError("pose supervision requested but no pose targets supplied");
    }
    Tensor pose = pose_loss(tape, f_p, pose_targets, squared_pose);
    parts.pose_raw = pose.value();
    Tensor weighted = tape.scale(pose, weights.lambda1);
    parts.pose = weighted.value();
    total = tape.add(total, weighted);
  }
  if (weights.lambda2 > 0.0) {
    Tensor orth = model.orth_penalty_on_tape(tape);
    parts.orth_raw = orth.value();
    Tensor weighted = tape.scale(orth, weights.lambda2);
    parts.orth = weighted.value();
    total = tape.add(total, weighted);
  }
  parts.total = total.value();
  if (breakdown) *breakdown = parts;
  return total;
}

}  // namespace poseface
