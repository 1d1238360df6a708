#include "poseface/landmark_ae.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "poseface/serialize.hpp"

namespace poseface {

void AeSpec::validate() const {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw SpecError("autoencoder raster dimensions must be positive");
  }
  if (code_dim <= 0) throw SpecError("autoencoder code dimension must be positive");
  if (hidden.empty()) throw SpecError("autoencoder needs at least one hidden layer");
  for (int h : hidden) {
    if (h <= 0) throw SpecError("autoencoder hidden widths must be positive");
  }
  if (heat_radius <= 0.0) throw SpecError("heatmap radius must be positive");
}

namespace {

Tensor masked_term(Tape& tape, const Tensor& mask, const Tensor& diff, bool batched) {
  Tensor masked = tape.mul(mask, diff);
  return batched ? tape.row_norms(masked) : tape.norm(masked);
}

Tensor weighted_loss(Tape& tape, const Tensor& input, const Tensor& output, double lambda_h,
                     bool batched) {
  if (input.shape() != output.shape()) {
    throw ShapeError("reconstruction loss needs matching input/output shapes");
  }
  if (lambda_h < 0.0) throw ConfigError("hot-pixel weight must be nonnegative");
  Tensor diff = tape.sub(input, output);
  Tensor ones = Tensor::full(input.shape(), 1.0);
  Tensor hot = masked_term(tape, input, diff, batched);
  Tensor cold = masked_term(tape, tape.sub(ones, input), diff, batched);
  return tape.add(tape.scale(hot, lambda_h), cold);
}

}  // namespace

Tensor ae_loss_on_tape(Tape& tape, const Tensor& input, const Tensor& output, double lambda_h) {
  return weighted_loss(tape, input, output, lambda_h, /*batched=*/false);
}

Tensor ae_batch_loss_on_tape(Tape& tape, const Tensor& input_rows, const Tensor& output_rows,
                             double lambda_h) {
  Tensor per_row = weighted_loss(tape, input_rows, output_rows, lambda_h, /*batched=*/true);
  return tape.scale(tape.sum(per_row), 1.0 / static_cast<double>(input_rows.rows()));
}

double ae_loss(const HeatmapStack& input, const HeatmapStack& output, double lambda_h) {
  Tape tape;
  return ae_loss_on_tape(tape, input.flatten(), output.flatten(), lambda_h).value();
}

AutoEncoder::AutoEncoder(AeSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(mix_stream(seed, 0xAE1219));
  std::vector<int> dims;
  dims.push_back(static_cast<int>(spec_.input_dim()));
  dims.insert(dims.end(), spec_.hidden.begin(), spec_.hidden.end());
  dims.push_back(spec_.code_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    encoder_.push_back(make_dense(dims[i], dims[i + 1], rng));
  }
  for (std::size_t i = dims.size() - 1; i > 0; --i) {
    decoder_.push_back(make_dense(dims[i], dims[i - 1], rng));
  }
}

Tensor AutoEncoder::encode_on_tape(Tape& tape, const Tensor& rows) const {
  if (rows.cols() != spec_.input_dim()) {
    throw ShapeError("encoder input width does not match the raster size");
  }
  Tensor h = rows;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    h = dense_forward(tape, encoder_[i], h);
    if (i + 1 < encoder_.size()) h = tape.relu(h);
  }
  return tape.l2_normalize_rows(h);
}

Tensor AutoEncoder::decode_on_tape(Tape& tape, const Tensor& codes) const {
  if (codes.cols() != static_cast<std::size_t>(spec_.code_dim)) {
    throw ShapeError("decoder input width does not match the code dimension");
  }
  Tensor h = codes;
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    h = dense_forward(tape, decoder_[i], h);
    if (i + 1 < decoder_.size()) h = tape.relu(h);
  }
  return tape.sigmoid(h);
}

Tensor AutoEncoder::forward_rows(Tape& tape, const Tensor& rows) const {
  return decode_on_tape(tape, encode_on_tape(tape, rows));
}

std::vector<double> AutoEncoder::encode(const HeatmapStack& stack) const {
  if (!pretrained_) throw NotPretrainedError("autoencoder must be pretrained before encoding");
  Tape tape;
  Tensor row = Tensor::matrix(1, spec_.input_dim(), stack.flatten().data());
  return encode_on_tape(tape, row).data();
}

std::vector<std::vector<double>> AutoEncoder::encode_batch(
    const std::vector<HeatmapStack>& stacks) const {
  if (!pretrained_) throw NotPretrainedError("autoencoder must be pretrained before encoding");
  std::vector<std::vector<double>> out;
  out.reserve(stacks.size());
  if (stacks.empty()) return out;
  std::vector<double> packed;
  packed.reserve(stacks.size() * spec_.input_dim());
  for (const auto& s : stacks) {
    if (s.size() != spec_.input_dim()) throw ShapeError("heatmap stack size mismatch");
    packed.insert(packed.end(), s.values.begin(), s.values.end());
  }
  Tape tape;
  Tensor codes =
      encode_on_tape(tape, Tensor::matrix(stacks.size(), spec_.input_dim(), std::move(packed)));
  std::size_t d = spec_.code_dim;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    out.emplace_back(codes.data().begin() + i * d, codes.data().begin() + (i + 1) * d);
  }
  return out;
}

HeatmapStack AutoEncoder::decode(const std::vector<double>& code) const {
  if (!pretrained_) throw NotPretrainedError("autoencoder must be pretrained before decoding");
  Tape tape;
  Tensor row = Tensor::matrix(1, code.size(), code);
  Tensor flat = decode_on_tape(tape, row);
  HeatmapStack stack;
  stack.channels = spec_.channels;
  stack.height = spec_.height;
  stack.width = spec_.width;
  stack.values = flat.data();
  return stack;
}

Tensor AutoEncoder::rows_for(const std::vector<const LandmarkSet*>& batch) const {
  std::vector<double> packed;
  packed.reserve(batch.size() * spec_.input_dim());
  for (const LandmarkSet* lm : batch) {
    HeatmapStack stack = render_heatmaps(*lm, spec_.height, spec_.width, spec_.heat_radius);
    packed.insert(packed.end(), stack.values.begin(), stack.values.end());
  }
  return Tensor::matrix(batch.size(), spec_.input_dim(), std::move(packed));
}

double AutoEncoder::batch_loss(const std::vector<LandmarkSet>& data, double lambda_h) const {
  if (data.empty()) throw EmptyDatasetError("cannot score an empty landmark list");
  double total = 0.0;
  std::size_t done = 0;
  const std::size_t chunk = 64;
  while (done < data.size()) {
    std::size_t n = std::min(chunk, data.size() - done);
    std::vector<const LandmarkSet*> batch;
    batch.reserve(n);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(&data[done + i]);
    Tape tape;
    Tensor rows = rows_for(batch);
    Tensor loss = ae_batch_loss_on_tape(tape, rows, forward_rows(tape, rows), lambda_h);
    total += loss.value() * static_cast<double>(n);
    done += n;
  }
  return total / static_cast<double>(data.size());
}

AePretrainResult AutoEncoder::pretrain(const std::vector<LandmarkSet>& data, int epochs,
                                       const SgdConfig& sgd, double lambda_h,
                                       std::uint64_t shuffle_seed, int batch_size,
                                       double holdout_fraction) {
  if (pretrained_) throw SpecError("autoencoder is already pretrained and frozen");
  if (epochs <= 0) throw ConfigError("pretraining needs at least one epoch");
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout fraction must lie in [0, 1)");
  }
  sgd.validate();
  std::size_t holdout = static_cast<std::size_t>(
      std::floor(static_cast<double>(data.size()) * holdout_fraction));
  std::size_t train_n = data.size() - holdout;
  if (train_n == 0) throw EmptyDatasetError("no landmark sets left to pretrain on");

  std::vector<LandmarkSet> holdout_set(data.begin() + train_n, data.end());
  AePretrainResult result;
  SgdOptimizer opt(parameters(), sgd);

  if (!holdout_set.empty()) result.holdout_initial = batch_loss(holdout_set, lambda_h);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng(mix_stream(shuffle_seed, 0xAE5F0D, static_cast<std::uint64_t>(epoch)));
    std::vector<std::uint32_t> order = shuffle_rng.permutation(train_n);
    double epoch_total = 0.0;
    std::size_t done = 0;
    while (done < train_n) {
      std::size_t n = std::min(static_cast<std::size_t>(batch_size), train_n - done);
      std::vector<const LandmarkSet*> batch;
      batch.reserve(n);
      for (std::size_t i = 0; i < n; ++i) batch.push_back(&data[order[done + i]]);
      Tape tape;
      Tensor rows = rows_for(batch);
      Tensor loss = ae_batch_loss_on_tape(tape, rows, forward_rows(tape, rows), lambda_h);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(epoch);
      epoch_total += loss.value() * static_cast<double>(n);
      done += n;
    }
    result.epoch_mean_loss.push_back(epoch_total / static_cast<double>(train_n));
  }

  if (result.epoch_mean_loss.size() > 1 &&
      result.epoch_mean_loss.back() >= result.epoch_mean_loss.front()) {
    throw NumericError("pretraining failed to reduce the reconstruction loss");
  }
  if (!holdout_set.empty()) result.holdout_final = batch_loss(holdout_set, lambda_h);
  freeze();
  return result;
}

std::vector<Tensor> AutoEncoder::parameters() {
  std::vector<Tensor> out;
  for (auto* bank : {&encoder_, &decoder_}) {
    for (auto& layer : *bank) {
      out.push_back(layer.weight);
      out.push_back(layer.bias);
    }
  }
  return out;
}

void AutoEncoder::freeze() {
  for (auto* bank : {&encoder_, &decoder_}) {
    for (auto& layer : *bank) {
      layer.weight = layer.weight.clone(false);
      layer.bias = layer.bias.clone(false);
    }
  }
  pretrained_ = true;
}

namespace {

void write_layer(BinaryWriter& w, const DenseLayer& layer) {
  w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
  w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
  w.f64_array(layer.weight.data());
  w.f64_array(layer.bias.data());
}

DenseLayer read_layer(BinaryReader& r) {
  std::size_t rows = r.u32();
  std::size_t cols = r.u32();
  if (rows == 0 || cols == 0) r.fail("autoencoder layer has a zero dimension");
  DenseLayer layer;
  layer.weight = Tensor::matrix(rows, cols, r.f64_array(rows * cols));
  layer.bias = Tensor({cols}, r.f64_array(cols));
  return layer;
}

}  // namespace

void AutoEncoder::save(const std::string& path) const {
  if (!pretrained_) throw NotPretrainedError("refusing to checkpoint an untrained autoencoder");
  BinaryWriter w(path);
  w.magic("POSEAE01");
  w.u32(static_cast<std::uint32_t>(spec_.channels));
  w.u32(static_cast<std::uint32_t>(spec_.height));
  w.u32(static_cast<std::uint32_t>(spec_.width));
  w.u32(static_cast<std::uint32_t>(spec_.code_dim));
  w.f64(spec_.heat_radius);
  w.u32(static_cast<std::uint32_t>(encoder_.size() + decoder_.size()));
  for (const auto& layer : encoder_) write_layer(w, layer);
  for (const auto& layer : decoder_) write_layer(w, layer);
  w.close();
}

AutoEncoder AutoEncoder::load(const std::string& path, const AeSpec& expected) {
  BinaryReader r(path);
  r.expect_magic("POSEAE01");
  AeSpec spec = expected;
  spec.channels = static_cast<int>(r.u32());
  spec.height = static_cast<int>(r.u32());
  spec.width = static_cast<int>(r.u32());
  spec.code_dim = static_cast<int>(r.u32());
  spec.heat_radius = r.f64();
  if (spec.channels != expected.channels || spec.height != expected.height ||
      spec.width != expected.width || spec.code_dim != expected.code_dim) {
    r.fail("autoencoder checkpoint does not match the requested raster/code sizes");
  }
  std::size_t layer_count = r.u32();
  std::size_t encoder_layers = expected.hidden.size() + 1;
  if (layer_count != 2 * encoder_layers) {
    r.fail("autoencoder checkpoint has an unexpected layer count");
  }
  AutoEncoder model(spec, /*seed=*/0);
  for (std::size_t i = 0; i < encoder_layers; ++i) {
    DenseLayer got = read_layer(r);
    if (got.weight.shape() != model.encoder_[i].weight.shape()) {
      r.fail("encoder layer shape mismatch");
    }
    model.encoder_[i] = std::move(got);
  }
  for (std::size_t i = 0; i < encoder_layers; ++i) {
    DenseLayer got = read_layer(r);
    if (got.weight.shape() != model.decoder_[i].weight.shape()) {
      r.fail("decoder layer shape mismatch");
    }
    model.decoder_[i] = std::move(got);
  }
  if (!r.at_eof()) r.fail("trailing bytes after the last decoder layer");
  model.pretrained_ = true;
  return model;
}

}  // namespace poseface
