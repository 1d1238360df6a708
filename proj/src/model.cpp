#include "poseface/model.hpp"

#include <cmath>
#include <utility>

#include "poseface/serialize.hpp"

namespace poseface {

namespace {

constexpr double kHalfPi = 1.5707963267948966;

}  // namespace

void ModelSpec::validate() const {
  if (d_in <= 0 || d_b <= 0 || d <= 0 || d_o <= 0 || d_p <= 0) {
    throw SpecError("model dimensions must be positive");
  }
  for (int h : backbone_hidden) {
    if (h <= 0) throw SpecError("backbone hidden widths must be positive");
  }
  if (d + d_p > d_b) {
    throw SpecError("identity and pose subspaces need d + d_p <= d_b to be separable");
  }
  if (n_classes < 2) throw SpecError("need at least two classes");
  if (scale <= 0.0) throw SpecError("logit scale must be positive");
  if (base_margin < 0.0 || base_margin >= kHalfPi) {
    throw SpecError("base margin must lie in [0, pi/2)");
  }
  if (extra_margin < 0.0 || base_margin + extra_margin >= kHalfPi) {
    throw SpecError("base plus extra margin must stay below pi/2");
  }
  if (!(input_gain > 0.0) || !std::isfinite(input_gain)) {
    throw SpecError("input gain must be positive and finite");
  }
}

Tensor orth_penalty_on_tape(Tape& tape, const Tensor& w_identity, const Tensor& w_pose) {
  if (w_identity.rows() != w_pose.rows()) {
    throw ShapeError("orthogonality penalty needs matrices over the same feature space");
  }
  Tensor wi = tape.l2_normalize_cols(w_identity);
  Tensor wp = tape.l2_normalize_cols(w_pose);
  return tape.norm(tape.matmul(tape.transpose(wi), wp));
}

double orth_penalty(const Tensor& w_identity, const Tensor& w_pose) {
  Tape tape;
  return orth_penalty_on_tape(tape, w_identity.clone(), w_pose.clone()).value();
}

PoseFaceModel::PoseFaceModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(mix_stream(seed, 0xF0CE5));
  std::vector<int> dims;
  dims.push_back(spec_.d_in);
  dims.insert(dims.end(), spec_.backbone_hidden.begin(), spec_.backbone_hidden.end());
  dims.push_back(spec_.d_b);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    backbone_.push_back(make_dense(dims[i], dims[i + 1], rng));
  }
  // The two projections start as one orthonormal frame so the subspace
  // penalty begins at its optimum instead of spending early epochs tearing
  // the matrices apart.
  Tensor joint = random_orthonormal_columns(spec_.d_b, spec_.d + spec_.d_p, rng);
  std::vector<double> wi(static_cast<std::size_t>(spec_.d_b) * spec_.d);
  std::vector<double> wp(static_cast<std::size_t>(spec_.d_b) * spec_.d_p);
  for (int i = 0; i < spec_.d_b; ++i) {
    for (int j = 0; j < spec_.d; ++j) {
      wi[static_cast<std::size_t>(i) * spec_.d + j] =
          joint.data()[static_cast<std::size_t>(i) * (spec_.d + spec_.d_p) + j];
    }
    for (int j = 0; j < spec_.d_p; ++j) {
      wp[static_cast<std::size_t>(i) * spec_.d_p + j] =
          joint.data()[static_cast<std::size_t>(i) * (spec_.d + spec_.d_p) + spec_.d + j];
    }
  }
  w_identity_ = Tensor::matrix(spec_.d_b, spec_.d, std::move(wi), true);
  w_pose_ = Tensor::matrix(spec_.d_b, spec_.d_p, std::move(wp), true);
  feature_ = make_dense(spec_.d, spec_.d_o, rng);
  classifier_ = random_unit_columns(spec_.d_o, spec_.n_classes, rng);
}

Tensor PoseFaceModel::backbone_forward(Tape& tape, const Tensor& observations) const {
  if (observations.cols() != static_cast<std::size_t>(spec_.d_in)) {
    throw ShapeError("observation width does not match the model input dimension");
  }
  Tensor h = tape.scale(observations, spec_.input_gain);
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    h = dense_forward(tape, backbone_[i], h);
    if (i + 1 < backbone_.size()) h = tape.relu(h);
  }
  // Fixing the backbone feature norm keeps the representation scale bounded,
  // which the constant-magnitude pose gradient would otherwise inflate
  // without limit.
  return tape.scale(tape.l2_normalize_rows(h), std::sqrt(double(spec_.d_b)));
}

std::pair<Tensor, Tensor> PoseFaceModel::project(Tape& tape, const Tensor& f_b) const {
  if (f_b.cols() != static_cast<std::size_t>(spec_.d_b)) {
    throw ShapeError("backbone feature width mismatch in projection");
  }
  // Both projections run with unit-norm columns so their gain is fixed; the
  // matrices carry direction only, matching the normalized forms used by the
  // orthogonality penalty and the subspace probe.
  Tensor wi = tape.l2_normalize_cols(w_identity_);
  Tensor wp = tape.l2_normalize_cols(w_pose_);
  return {tape.matmul(f_b, wi), tape.matmul(f_b, wp)};
}

Tensor PoseFaceModel::feature_layer_forward(Tape& tape, const Tensor& f_i) const {
  if (f_i.cols() != static_cast<std::size_t>(spec_.d)) {
    throw ShapeError("identity feature width mismatch in the feature layer");
  }
  // The embedding lives on a fixed-radius sphere for the same reason the
  // backbone output does: the angular losses are scale-free, so an unbounded
  // norm would only dilute their gradients.
  Tensor f_o = dense_forward(tape, feature_, f_i);
  return tape.scale(tape.l2_normalize_rows(f_o), std::sqrt(double(spec_.d_o)));
}

Tensor PoseFaceModel::embed(Tape& tape, const Tensor& observations) const {
  Tensor f_b = backbone_forward(tape, observations);
  Tensor wi = tape.l2_normalize_cols(w_identity_);
  return feature_layer_forward(tape, tape.matmul(f_b, wi));
}

Tensor PoseFaceModel::orth_penalty_on_tape(Tape& tape) const {
  return poseface::orth_penalty_on_tape(tape, w_identity_, w_pose_);
}

std::vector<Tensor> PoseFaceModel::parameters() {
  std::vector<Tensor> out;
  for (auto& layer : backbone_) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  out.push_back(w_identity_);
  out.push_back(w_pose_);
  out.push_back(feature_.weight);
  out.push_back(feature_.bias);
  out.push_back(classifier_);
  return out;
}

namespace {

void write_matrix(BinaryWriter& w, const Tensor& m, const Tensor* bias) {
  for (double x : m.data()) {
    if (!std::isfinite(x)) throw NumericError("refusing to checkpoint non-finite weights");
  }
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  w.u32(bias ? 1 : 0);
  w.f64_array(m.data());
  if (bias) w.f64_array(bias->data());
}

Tensor read_matrix(BinaryReader& r, Tensor* bias) {
  std::size_t rows = r.u32();
  std::size_t cols = r.u32();
  std::uint32_t has_bias = r.u32();
  if (rows == 0 || cols == 0) r.fail("checkpoint layer has a zero dimension");
  if (has_bias > 1) r.fail("checkpoint bias flag must be 0 or 1");
  Tensor m = Tensor::matrix(rows, cols, r.f64_array(rows * cols));
  if (has_bias) {
    if (!bias) r.fail("unexpected bias on a matrix-only layer");
    *bias = Tensor({cols}, r.f64_array(cols));
  } else if (bias) {
    r.fail("missing bias on an affine layer");
  }
  return m;
}

}  // namespace

void PoseFaceModel::save(const std::string& path, const CheckpointManifest& manifest) const {
  BinaryWriter w(path);
  w.magic("POSEFACE1");
  w.u32(static_cast<std::uint32_t>(spec_.d_in));
  w.u32(static_cast<std::uint32_t>(spec_.d_b));
  w.u32(static_cast<std::uint32_t>(spec_.d));
  w.u32(static_cast<std::uint32_t>(spec_.d_o));
  w.u32(static_cast<std::uint32_t>(spec_.d_p));
  w.u32(static_cast<std::uint32_t>(spec_.n_classes));
  w.f64(spec_.scale);
  w.f64(spec_.base_margin);
  w.f64(spec_.extra_margin);
  w.f64(spec_.input_gain);
  w.f64(manifest.lambda1);
  w.f64(manifest.lambda2);
  w.u64(manifest.seed);
  w.u32(static_cast<std::uint32_t>(spec_.backbone_hidden.size()));
  for (int h : spec_.backbone_hidden) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(backbone_.size() + 4));
  for (const auto& layer : backbone_) write_matrix(w, layer.weight, &layer.bias);
  write_matrix(w, w_identity_, nullptr);
  write_matrix(w, w_pose_, nullptr);
  write_matrix(w, feature_.weight, &feature_.bias);
  write_matrix(w, classifier_, nullptr);
  w.close();
}

std::pair<PoseFaceModel, CheckpointManifest> PoseFaceModel::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("POSEFACE1");
  ModelSpec spec;
  CheckpointManifest manifest;
  spec.d_in = static_cast<int>(r.u32());
  spec.d_b = static_cast<int>(r.u32());
  spec.d = static_cast<int>(r.u32());
  spec.d_o = static_cast<int>(r.u32());
  spec.d_p = static_cast<int>(r.u32());
  spec.n_classes = static_cast<int>(r.u32());
  spec.scale = r.f64();
  spec.base_margin = r.f64();
  spec.extra_margin = r.f64();
  spec.input_gain = r.f64();
  manifest.lambda1 = r.f64();
  manifest.lambda2 = r.f64();
  manifest.seed = r.u64();
  std::size_t hidden_count = r.u32();
  spec.backbone_hidden.clear();
  for (std::size_t i = 0; i < hidden_count; ++i) {
    spec.backbone_hidden.push_back(static_cast<int>(r.u32()));
  }
  try {
    spec.validate();
  } catch (const SpecError& e) {
    r.fail(std::string("manifest violates model constraints: ") + e.what());
  }
  std::size_t layer_count = r.u32();
  PoseFaceModel model(spec, /*seed=*/0);
  if (layer_count != model.backbone_.size() + 4) {
    r.fail("checkpoint layer count does not match the manifest architecture");
  }
  auto expect_shape = [&r](const Tensor& got, const Tensor& want, const char* name) {
    if (got.shape() != want.shape()) r.fail(std::string(name) + ": layer shape mismatch");
  };
  for (auto& layer : model.backbone_) {
    Tensor bias;
    Tensor weight = read_matrix(r, &bias);
    expect_shape(weight, layer.weight, "backbone");
    layer.weight = weight;
    layer.bias = bias;
  }
  {
    Tensor got = read_matrix(r, nullptr);
    expect_shape(got, model.w_identity_, "identity projection");
    model.w_identity_ = got;
  }
  {
    Tensor got = read_matrix(r, nullptr);
    expect_shape(got, model.w_pose_, "pose projection");
    model.w_pose_ = got;
  }
  {
    Tensor bias;
    Tensor weight = read_matrix(r, &bias);
    expect_shape(weight, model.feature_.weight, "feature layer");
    model.feature_.weight = weight;
    model.feature_.bias = bias;
  }
  {
    Tensor got = read_matrix(r, nullptr);
    expect_shape(got, model.classifier_, "classifier");
    model.classifier_ = got;
  }
  if (!r.at_eof()) r.fail("trailing bytes after the classifier weights");
  return {std::move(model), manifest};
}

}  // namespace poseface
