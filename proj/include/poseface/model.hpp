#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "poseface/nn.hpp"
#include "poseface/tensor.hpp"

namespace poseface {

// Architecture and margin settings for the recognition stack.  The identity
// and pose subspace ranks must fit inside the backbone feature space
// (d + d_p <= d_b); otherwise the two projections cannot be made orthogonal.
struct ModelSpec {
  int d_in = 64;
  std::vector<int> backbone_hidden = {128};
  int d_b = 64;  // backbone feature width
  int d = 32;    // identity feature width
  int d_o = 32;  // recognition embedding width
  int d_p = 32;  // pose feature width; must match the pose target dimension
  int n_classes = 2;
  double scale = 64.0;        // logit scale s
  double base_margin = 0.5;   // additive angular margin floor, radians
  double extra_margin = 0.2;  // pose-proportional margin headroom, radians
  double input_gain = 1.0;    // observation pre-scale, fit to the train split

  void validate() const;  // throws SpecError
};

// Run-level settings carried inside a checkpoint so evaluation can report the
// exact training configuration.
struct CheckpointManifest {
  double lambda1 = 200.0;
  double lambda2 = 1e5;
  std::uint64_t seed = 1;
};

// Frobenius norm of the column-normalized cross-Gram matrix; zero exactly
// when every identity direction is orthogonal to every pose direction, and
// invariant to positive rescaling of any column.
Tensor orth_penalty_on_tape(Tape& tape, const Tensor& w_identity, const Tensor& w_pose);
double orth_penalty(const Tensor& w_identity, const Tensor& w_pose);

// Backbone MLP -> shared feature F_b, split by two linear heads into an
// identity feature F_i and a pose feature F_p; F_i passes through one affine
// feature layer to the recognition embedding F_o.  Class logits come from a
// column-normalized weight matrix against row-normalized F_o.
class PoseFaceModel {
 public:
  PoseFaceModel(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  // observations: N x d_in -> F_b: N x d_b.  Hidden layers use relu; the
  // output layer is linear.
  Tensor backbone_forward(Tape& tape, const Tensor& observations) const;

  // F_b -> (F_i: N x d, F_p: N x d_p), plain unnormalized linear maps.
  std::pair<Tensor, Tensor> project(Tape& tape, const Tensor& f_b) const;

  // F_i -> F_o, affine with bias and no activation.
  Tensor feature_layer_forward(Tape& tape, const Tensor& f_i) const;

  // observations -> F_o, the composition used at evaluation time.
  Tensor embed(Tape& tape, const Tensor& observations) const;

  Tensor orth_penalty_on_tape(Tape& tape) const;

  const Tensor& identity_weights() const { return w_identity_; }
  const Tensor& pose_weights() const { return w_pose_; }
  const Tensor& classifier_weights() const { return classifier_; }

  std::vector<Tensor> parameters();

  // Checkpoint: magic "POSEFACE1", a manifest of every dimension and loss
  // weight, then the layer table (little-endian f64 throughout).
  void save(const std::string& path, const CheckpointManifest& manifest) const;
  static std::pair<PoseFaceModel, CheckpointManifest> load(const std::string& path);

 private:
  ModelSpec spec_;
  std::vector<DenseLayer> backbone_;
  Tensor w_identity_;  // d_b x d
  Tensor w_pose_;      // d_b x d_p
  DenseLayer feature_;
  Tensor classifier_;  // d_o x n_classes, compared column-normalized
};

}  // namespace poseface
