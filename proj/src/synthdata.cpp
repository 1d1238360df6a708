#include "poseface/synthdata.hpp"

#include <algorithm>
#include <cmath>

#include "poseface/rng.hpp"
#include "poseface/serialize.hpp"

namespace poseface {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Stream tags; each consumer of randomness gets its own namespace.
constexpr std::uint64_t kTagIdentity = 0x1D5EED01;
constexpr std::uint64_t kTagSample = 0x5A4D7002;

// Scale of the per-identity jitter applied to the 3-D template, in template
// units (the template spans roughly [-1, 1]).
constexpr double kTemplateJitter = 0.03;

// Energy of the pose component relative to the identity component; see the
// scaling of the mixing matrices below.
constexpr double kPoseScale = 2.0;

double profile_boundary() { return 60.0; }

}  // namespace

void DatasetSpec::validate() const {
  if (n_identities < 4) throw SpecError("dataset: need at least 4 identities");
  if (samples_per_identity < 2) throw SpecError("dataset: need at least 2 samples per identity");
  if (!(p_profile >= 0.0 && p_profile <= 1.0)) throw SpecError("dataset: p_profile must be in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw SpecError("dataset: noise_sigma must be non-negative");
  if (d_in < 2 || d_in % 2 != 0) throw SpecError("dataset: d_in must be even and at least 2");
  if (!(split > 0.0 && split <= 1.0)) throw SpecError("dataset: split must be in (0, 1]");
}

SplitPlan split_plan(const DatasetSpec& spec) {
  spec.validate();
  SplitPlan plan;
  double tf = 1.0 - spec.split;
  if (tf <= 0.0) return plan;
  auto clamp_u32 = [](double v, std::uint32_t lo, std::uint32_t hi) {
    double r = std::floor(v + 0.5);
    if (r < lo) return lo;
    if (r > hi) return hi;
    return static_cast<std::uint32_t>(r);
  };
  plan.verif_identities = clamp_u32(spec.n_identities * tf / 2.0, 2, spec.n_identities - 2);
  plan.holdout_per_identity =
      clamp_u32(spec.samples_per_identity * tf, 1, spec.samples_per_identity - 1);
  return plan;
}

std::array<double, 8> pose_basis(double yaw_degrees) {
  const double theta = yaw_degrees * kPi / 180.0;
  std::array<double, 8> phi{};
  for (int h = 1; h <= 4; ++h) {
    phi[2 * (h - 1)] = std::sin(h * theta);
    phi[2 * (h - 1) + 1] = std::cos(h * theta);
  }
  return phi;
}

std::vector<double> mixing_identity(const DatasetSpec& spec) {
  Rng rng(mix_stream(spec.seed, 0xA15D01));
  const std::uint32_t dz = spec.latent_dim();
  std::vector<double> a(static_cast<std::size_t>(spec.d_in) * dz);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dz));
  for (auto& x : a) x = rng.next_gaussian() * scale;
  return a;
}

std::vector<double> mixing_pose(const DatasetSpec& spec) {
  // The first-harmonic pair mixes through fresh directions, so the head
  // angle itself stays cleanly readable from the observation.  The higher
  // harmonics mix through images of random latent directions under the
  // identity mixing: that part of the pose contribution lands inside the
  // span carrying identity evidence, so no linear readout can strip it
  // without discarding identity information, and its coefficients relate to
  // the readable first harmonic only through polynomial identities that must
  // be learned from data.
  Rng rng(mix_stream(spec.seed, 0xB05E02));
  const std::uint32_t dz = spec.latent_dim();
  const auto a = mixing_identity(spec);
  std::vector<double> b(static_cast<std::size_t>(spec.d_in) * 8, 0.0);
  // Per-entry variance is kPoseScale^2 / dz for both column kinds, so the
  // pose-to-identity energy ratio does not depend on the observation width.
  for (int c = 0; c < 8; ++c) {
    if (c < 2) {
      const double scale = kPoseScale / std::sqrt(static_cast<double>(dz));
      for (std::uint32_t r = 0; r < spec.d_in; ++r) {
        b[static_cast<std::size_t>(r) * 8 + static_cast<std::size_t>(c)] =
            scale * rng.next_gaussian();
      }
    } else {
      const auto u = rng.unit_vector(dz);
      for (std::uint32_t r = 0; r < spec.d_in; ++r) {
        const double* arow = &a[static_cast<std::size_t>(r) * dz];
        double acc = 0.0;
        for (std::uint32_t cc = 0; cc < dz; ++cc) acc += arow[cc] * u[cc];
        b[static_cast<std::size_t>(r) * 8 + static_cast<std::size_t>(c)] = kPoseScale * acc;
      }
    }
  }
  return b;
}

std::array<Point3, kNumLandmarks> identity_template(std::uint64_t seed, std::uint32_t identity) {
  Rng rng(mix_stream(seed, kTagIdentity, identity));
  auto tpl = canonical_landmarks_3d();
  for (auto& p : tpl) {
    for (auto& c : p) c += rng.next_gaussian() * kTemplateJitter;
  }
  return tpl;
}

LandmarkSet identity_landmarks(std::uint64_t seed, std::uint32_t identity, double yaw_degrees) {
  LandmarkSet lm = project_template(identity_template(seed, identity), yaw_degrees);
  return lm;
}

namespace {

std::vector<double> identity_latent(const DatasetSpec& spec, std::uint32_t identity) {
  // Separate stream from the template jitter so either can be regenerated
  // independently.
  Rng rng(mix_stream(spec.seed, kTagIdentity ^ 0x77, identity));
  return rng.unit_vector(spec.latent_dim());
}

double draw_yaw(Rng& rng, double p_profile, bool* is_profile) {
  const double boundary = profile_boundary();
  double u = rng.next_double();
  double magnitude;
  if (u < p_profile) {
    // (60, 90]: shift the open end of the uniform onto the boundary.
    magnitude = boundary + (90.0 - boundary) * (1.0 - rng.next_double());
    *is_profile = true;
  } else {
    magnitude = boundary * rng.next_double();  // [0, 60)
    *is_profile = false;
  }
  double sign = rng.next_double() < 0.5 ? -1.0 : 1.0;
  return sign * magnitude;
}

void fill_splits(SynthDataset& ds) {
  const auto& spec = ds.spec;
  const SplitPlan plan = split_plan(spec);
  const std::uint32_t shared = plan.shared_identities(spec);
  const std::uint32_t spi = spec.samples_per_identity;
  ds.train_classes = shared;
  ds.train_indices.clear();
  ds.ident_test_indices.clear();
  ds.verif_test_indices.clear();
  for (std::uint32_t k = 0; k < spec.n_identities; ++k) {
    for (std::uint32_t j = 0; j < spi; ++j) {
      std::uint32_t index = k * spi + j;
      if (k >= shared) {
        ds.verif_test_indices.push_back(index);
      } else if (j >= spi - plan.holdout_per_identity) {
        ds.ident_test_indices.push_back(index);
      } else {
        ds.train_indices.push_back(index);
      }
    }
  }
}

}  // namespace

SynthDataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  SynthDataset ds;
  ds.spec = spec;
  const std::uint32_t spi = spec.samples_per_identity;
  const std::uint32_t dz = spec.latent_dim();
  const auto a = mixing_identity(spec);
  const auto b = mixing_pose(spec);
  ds.samples.reserve(static_cast<std::size_t>(spec.n_identities) * spi);

  for (std::uint32_t k = 0; k < spec.n_identities; ++k) {
    const auto z = identity_latent(spec, k);
    const auto tpl = identity_template(spec.seed, k);
    for (std::uint32_t j = 0; j < spi; ++j) {
      const std::uint64_t index = static_cast<std::uint64_t>(k) * spi + j;
      Rng rng(mix_stream(spec.seed, kTagSample, index));
      Sample sample;
      sample.identity = k;
      double yaw = draw_yaw(rng, spec.p_profile, &sample.is_profile);
      sample.landmarks = project_template(tpl, yaw);
      sample.observation.assign(spec.d_in, 0.0);
      const auto phi = pose_basis(yaw);
      for (std::uint32_t r = 0; r < spec.d_in; ++r) {
        double acc = 0.0;
        const double* arow = &a[static_cast<std::size_t>(r) * dz];
        for (std::uint32_t cc = 0; cc < dz; ++cc) acc += arow[cc] * z[cc];
        const double* brow = &b[static_cast<std::size_t>(r) * 8];
        for (int cc = 0; cc < 8; ++cc) acc += brow[cc] * phi[static_cast<std::size_t>(cc)];
        sample.observation[r] = acc;
      }
      if (spec.noise_sigma > 0.0) {
        for (std::uint32_t r = 0; r < spec.d_in; ++r) {
          sample.observation[r] += spec.noise_sigma * rng.next_gaussian();
        }
      }
      ds.samples.push_back(std::move(sample));
    }
  }
  fill_splits(ds);
  return ds;
}

void write_dataset(const std::string& path, const SynthDataset& ds) {
  ds.spec.validate();
  BinaryWriter out(path);
  out.magic("POSEDS01");
  out.u32(ds.spec.n_identities);
  out.u32(ds.spec.samples_per_identity);
  out.f64(ds.spec.p_profile);
  out.f64(ds.spec.noise_sigma);
  out.u32(ds.spec.d_in);
  out.u64(ds.spec.seed);
  out.f64(ds.spec.split);
  for (const auto& sample : ds.samples) {
    out.u32(sample.identity);
    out.f64(sample.landmarks.yaw);
    for (const auto& p : sample.landmarks.points) {
      out.f64(p[0]);
      out.f64(p[1]);
    }
    out.f64_array(sample.observation);
  }
  out.close();
}

SynthDataset read_dataset(const std::string& path) {
  BinaryReader in(path);
  in.expect_magic("POSEDS01");
  SynthDataset ds;
  ds.spec.n_identities = in.u32();
  ds.spec.samples_per_identity = in.u32();
  ds.spec.p_profile = in.f64();
  ds.spec.noise_sigma = in.f64();
  ds.spec.d_in = in.u32();
  ds.spec.seed = in.u64();
  ds.spec.split = in.f64();
  try {
    ds.spec.validate();
  } catch (const SpecError& e) {
    in.fail(std::string("invalid header: ") + e.what());
  }
  const std::uint64_t total =
      static_cast<std::uint64_t>(ds.spec.n_identities) * ds.spec.samples_per_identity;
  ds.samples.reserve(total);
  for (std::uint64_t i = 0; i < total; ++i) {
    Sample sample;
    sample.identity = in.u32();
    const auto expected = static_cast<std::uint32_t>(i / ds.spec.samples_per_identity);
    if (sample.identity != expected) {
      in.fail("sample " + std::to_string(i) + " carries identity " +
              std::to_string(sample.identity) + ", expected " + std::to_string(expected));
    }
    double yaw = in.f64();
    if (!(std::fabs(yaw) <= 90.0)) in.fail("yaw out of range");
    sample.landmarks.yaw = yaw;
    for (auto& p : sample.landmarks.points) {
      p[0] = in.f64();
      p[1] = in.f64();
    }
    try {
      sample.landmarks.validate();
    } catch (const Error& e) {
      in.fail(std::string("bad landmarks: ") + e.what());
    }
    sample.observation = in.f64_array(ds.spec.d_in);
    for (double v : sample.observation) {
      if (!std::isfinite(v)) in.fail("non-finite observation value");
    }
    sample.is_profile = std::fabs(yaw) > profile_boundary();
    ds.samples.push_back(std::move(sample));
  }
  if (!in.at_eof()) in.fail("trailing bytes after the last sample");
  fill_splits(ds);
  return ds;
}

}  // namespace poseface
