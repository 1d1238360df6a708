#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poseface/geometry.hpp"
#include "poseface/nn.hpp"
#include "poseface/tensor.hpp"

namespace poseface {

// Fully connected autoencoder over flattened heatmap stacks.  The encoder
// ends in an L2-normalized code; the decoder mirrors the layer sizes and ends
// in a sigmoid.  After pretraining the model is frozen: its weights stop
// tracking gradients and its codes serve as fixed pose pseudo-labels.
struct AeSpec {
  int channels = kNumLandmarks;
  int height = 32;
  int width = 32;
  std::vector<int> hidden = {512, 128};
  int code_dim = 32;
  double heat_radius = 1.0;

  std::size_t input_dim() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  void validate() const;  // throws SpecError
};

// Weighted reconstruction loss over one stack pair: the hot pixels of the
// binary input mask the first term and its complement the second,
//   lambda_h * ||H_in o (H_in - H_out)||_F + ||(1 - H_in) o (H_in - H_out)||_F
// (Frobenius norms, not squared).  Both arguments are flattened stacks of
// identical shape.
Tensor ae_loss_on_tape(Tape& tape, const Tensor& input, const Tensor& output, double lambda_h);

// Batch-mean of the per-row loss above; rows are flattened stacks.
Tensor ae_batch_loss_on_tape(Tape& tape, const Tensor& input_rows, const Tensor& output_rows,
                             double lambda_h);

// Plain evaluation convenience.
double ae_loss(const HeatmapStack& input, const HeatmapStack& output, double lambda_h);

struct AePretrainResult {
  std::vector<double> epoch_mean_loss;
  double holdout_initial = 0.0;
  double holdout_final = 0.0;
};

class AutoEncoder {
 public:
  AutoEncoder(AeSpec spec, std::uint64_t seed);

  const AeSpec& spec() const { return spec_; }
  bool pretrained() const { return pretrained_; }

  // Tape-level forward passes over row batches (one flattened stack per row).
  Tensor encode_on_tape(Tape& tape, const Tensor& rows) const;
  Tensor decode_on_tape(Tape& tape, const Tensor& codes) const;

  // Frozen-model API: refuses to produce pseudo-labels before pretraining.
  std::vector<double> encode(const HeatmapStack& stack) const;
  std::vector<std::vector<double>> encode_batch(const std::vector<HeatmapStack>& stacks) const;
  HeatmapStack decode(const std::vector<double>& code) const;

  // Renders each landmark set at the spec's raster size and fits the
  // reconstruction by mini-batch SGD.  The trailing `holdout_fraction` of the
  // input is excluded from the updates and scored before and after.  On
  // success the model is frozen.
  AePretrainResult pretrain(const std::vector<LandmarkSet>& data, int epochs,
                            const SgdConfig& sgd, double lambda_h, std::uint64_t shuffle_seed,
                            int batch_size = 64, double holdout_fraction = 0.1);

  std::vector<Tensor> parameters();

  // Checkpoint layout: "POSEAE01", u32 layer count, then per layer u32 rows,
  // u32 cols, row-major weights, biases (all little-endian f64).  Encoder
  // layers come first; the decoder mirrors them.  Loading yields a frozen
  // model.
  void save(const std::string& path) const;
  static AutoEncoder load(const std::string& path, const AeSpec& expected);

  double batch_loss(const std::vector<LandmarkSet>& data, double lambda_h) const;

 private:
  Tensor forward_rows(Tape& tape, const Tensor& rows) const;
  Tensor rows_for(const std::vector<const LandmarkSet*>& batch) const;
  void freeze();

  AeSpec spec_;
  std::vector<DenseLayer> encoder_;
  std::vector<DenseLayer> decoder_;
  bool pretrained_ = false;
};

}  // namespace poseface
