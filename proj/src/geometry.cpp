#include "poseface/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace poseface {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Round-half-up on both axes, so ties like 3.5 go to 4 (and -2.5 to -2).
long round_half_up(double x) { return static_cast<long>(std::floor(x + 0.5)); }

// Solves the 3x3 system G a = rhs with partial pivoting.
std::array<double, 3> solve3(std::array<std::array<double, 4>, 3> m) {
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
    }
    std::swap(m[col], m[pivot]);
    double p = m[col][col];
    if (std::fabs(p) < 1e-9) {
      throw DegenerateError("estimate_affine: collinear or coincident source points");
    }
    for (int r = col + 1; r < 3; ++r) {
      double f = m[r][col] / p;
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  std::array<double, 3> x{};
  for (int r = 2; r >= 0; --r) {
    double acc = m[r][3];
    for (int c = r + 1; c < 3; ++c) acc -= m[r][c] * x[c];
    x[r] = acc / m[r][r];
  }
  return x;
}

}  // namespace

void LandmarkSet::validate() const {
  if (!(frame_side > 0.0)) throw NumericError("landmark frame side must be positive");
  for (const auto& p : points) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
      throw NumericError("non-finite landmark coordinate");
    }
    if (p[0] < 0.0 || p[0] >= frame_side || p[1] < 0.0 || p[1] >= frame_side) {
      throw OutOfFrameError("landmark outside its declared frame");
    }
  }
  if (!std::isfinite(yaw) || !std::isfinite(pitch) || !std::isfinite(roll)) {
    throw NumericError("non-finite pose angle");
  }
}

Tensor HeatmapStack::flatten(bool requires_grad) const {
  return Tensor::vector(values, requires_grad);
}

HeatmapStack render_heatmaps(const LandmarkSet& lm, int height, int width, double radius) {
  if (height <= 0 || width <= 0) throw ShapeError("render_heatmaps: raster must be non-empty");
  if (radius < 0.0) throw NumericError("render_heatmaps: radius must be non-negative");
  HeatmapStack stack;
  stack.channels = kNumLandmarks;
  stack.height = height;
  stack.width = width;
  stack.values.assign(static_cast<std::size_t>(kNumLandmarks) * height * width, 0.0);

  const double sx = static_cast<double>(width) / lm.frame_side;
  const double sy = static_cast<double>(height) / lm.frame_side;
  const long reach = static_cast<long>(std::ceil(radius));
  for (int k = 0; k < kNumLandmarks; ++k) {
    const long cx = round_half_up(lm.points[k][0] * sx);
    const long cy = round_half_up(lm.points[k][1] * sy);
    if (cx < 0 || cx >= width || cy < 0 || cy >= height) {
      throw OutOfFrameError("render_heatmaps: landmark " + std::to_string(k) +
                            " falls outside the raster after scaling");
    }
    for (long dy = -reach; dy <= reach; ++dy) {
      for (long dx = -reach; dx <= reach; ++dx) {
        if (static_cast<double>(dx * dx + dy * dy) > radius * radius) continue;
        long x = cx + dx, y = cy + dy;
        if (x < 0 || x >= width || y < 0 || y >= height) continue;
        stack.at(k, static_cast<int>(y), static_cast<int>(x)) = 1.0;
      }
    }
  }
  return stack;
}

AffineTransform estimate_affine(const std::vector<Point2>& src, const std::vector<Point2>& dst) {
  if (src.size() != dst.size()) throw ShapeError("estimate_affine: point counts differ");
  if (src.size() < 3) throw DegenerateError("estimate_affine: at least 3 correspondences needed");

  // The 6-parameter system decouples into two 3x3 solves sharing the Gram
  // matrix of [x y 1] rows.
  double sxx = 0, sxy = 0, sx = 0, syy = 0, sy = 0, s1 = 0;
  double rx0 = 0, rx1 = 0, rx2 = 0, ry0 = 0, ry1 = 0, ry2 = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    double x = src[i][0], y = src[i][1];
    double u = dst[i][0], v = dst[i][1];
    sxx += x * x;
    sxy += x * y;
    sx += x;
    syy += y * y;
    sy += y;
    s1 += 1.0;
    rx0 += x * u;
    rx1 += y * u;
    rx2 += u;
    ry0 += x * v;
    ry1 += y * v;
    ry2 += v;
  }
  auto a = solve3({{{sxx, sxy, sx, rx0}, {sxy, syy, sy, rx1}, {sx, sy, s1, rx2}}});
  auto b = solve3({{{sxx, sxy, sx, ry0}, {sxy, syy, sy, ry1}, {sx, sy, s1, ry2}}});
  AffineTransform t;
  t.a11 = a[0];
  t.a12 = a[1];
  t.tx = a[2];
  t.a21 = b[0];
  t.a22 = b[1];
  t.ty = b[2];
  return t;
}

std::vector<Point2> apply_affine(const AffineTransform& t, const std::vector<Point2>& pts) {
  std::vector<Point2> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[i] = t.apply(pts[i]);
  return out;
}

AffineTransform compose(const AffineTransform& t2, const AffineTransform& t1) {
  AffineTransform t;
  t.a11 = t2.a11 * t1.a11 + t2.a12 * t1.a21;
  t.a12 = t2.a11 * t1.a12 + t2.a12 * t1.a22;
  t.a21 = t2.a21 * t1.a11 + t2.a22 * t1.a21;
  t.a22 = t2.a21 * t1.a12 + t2.a22 * t1.a22;
  t.tx = t2.a11 * t1.tx + t2.a12 * t1.ty + t2.tx;
  t.ty = t2.a21 * t1.tx + t2.a22 * t1.ty + t2.ty;
  return t;
}

double adaptive_ratio(double yaw_degrees) {
  if (!std::isfinite(yaw_degrees)) throw NumericError("adaptive_ratio: non-finite yaw");
  return std::min(std::fabs(yaw_degrees), 90.0) / 90.0;
}

const std::array<Point3, kNumLandmarks>& canonical_landmarks_3d() {
  static const std::array<Point3, kNumLandmarks> tpl = {{
      {-0.90, 0.10, 0.00},   // jaw left
      {0.90, 0.10, 0.00},    // jaw right
      {0.00, 0.95, 0.25},    // chin
      {-0.55, -0.55, 0.25},  // brow left
      {0.55, -0.55, 0.25},   // brow right
      {-0.45, -0.30, 0.20},  // eye outer left
      {-0.18, -0.30, 0.28},  // eye inner left
      {0.18, -0.30, 0.28},   // eye inner right
      {0.45, -0.30, 0.20},   // eye outer right
      {0.00, -0.15, 0.45},   // nose bridge
      {0.00, 0.18, 0.62},    // nose tip
      {-0.32, 0.52, 0.30},   // mouth left
      {0.32, 0.52, 0.30},    // mouth right
      {0.00, 0.68, 0.33},    // lip bottom
  }};
  return tpl;
}

LandmarkSet project_template(const std::array<Point3, kNumLandmarks>& tpl, double yaw_degrees) {
  const double theta = yaw_degrees * kPi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double scale = 26.0;  // keeps every rotated point well inside the frame
  const double half = kLandmarkFrame / 2.0;
  LandmarkSet lm;
  lm.yaw = yaw_degrees;
  for (int k = 0; k < kNumLandmarks; ++k) {
    double x = tpl[k][0] * c + tpl[k][2] * s;  // rotate about the vertical axis
    double y = tpl[k][1];
    lm.points[k] = {half + x * scale, half + y * scale};
  }
  lm.validate();
  return lm;
}

LandmarkSet canonical_landmarks_2d() { return project_template(canonical_landmarks_3d(), 0.0); }

double estimate_yaw_from_landmarks(const LandmarkSet& lm) {
  // Compares the horizontal extent on either side of the nose tip; under the
  // template's rotation model the narrower side faces away from the camera.
  const auto& nose = lm.points[10];
  const auto& jaw_l = lm.points[0];
  const auto& jaw_r = lm.points[1];
  double left = nose[0] - jaw_l[0];
  double right = jaw_r[0] - nose[0];
  double denom = std::max(std::fabs(left) + std::fabs(right), 1e-9);
  double asym = std::clamp((right - left) / denom, -1.0, 1.0);
  return std::asin(asym) * 180.0 / kPi;
}

std::string format_landmark_record(const LandmarkRecord& rec) {
  std::ostringstream out;
  char buf[32];
  out << rec.sample_id << ',' << rec.identity_id;
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << ',' << buf;
  };
  put(rec.landmarks.yaw);
  put(rec.landmarks.pitch);
  put(rec.landmarks.roll);
  for (const auto& p : rec.landmarks.points) {
    put(p[0]);
    put(p[1]);
  }
  return out.str();
}

LandmarkRecord parse_landmark_record(const std::string& line, std::size_t line_number) {
  auto fail = [&](const std::string& what) -> void {
    throw FormatError("landmark record line " + std::to_string(line_number) + ": " + what);
  };
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  if (fields.size() != 5 + 2 * kNumLandmarks) {
    fail("expected " + std::to_string(5 + 2 * kNumLandmarks) + " fields, got " +
         std::to_string(fields.size()));
  }
  auto parse_u32 = [&](const std::string& s) -> std::uint32_t {
    try {
      std::size_t pos = 0;
      unsigned long v = std::stoul(s, &pos);
      if (pos != s.size() || v > 0xFFFFFFFFul) fail("bad integer field '" + s + "'");
      return static_cast<std::uint32_t>(v);
    } catch (const FormatError&) {
      throw;
    } catch (...) {
      fail("bad integer field '" + s + "'");
    }
    return 0;
  };
  auto parse_f64 = [&](const std::string& s) -> double {
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) fail("bad numeric field '" + s + "'");
      return v;
    } catch (const FormatError&) {
      throw;
    } catch (...) {
      fail("bad numeric field '" + s + "'");
    }
    return 0.0;
  };
  LandmarkRecord rec;
  rec.sample_id = parse_u32(fields[0]);
  rec.identity_id = parse_u32(fields[1]);
  rec.landmarks.yaw = parse_f64(fields[2]);
  rec.landmarks.pitch = parse_f64(fields[3]);
  rec.landmarks.roll = parse_f64(fields[4]);
  for (int k = 0; k < kNumLandmarks; ++k) {
    rec.landmarks.points[k][0] = parse_f64(fields[5 + 2 * k]);
    rec.landmarks.points[k][1] = parse_f64(fields[6 + 2 * k]);
  }
  return rec;
}

void write_landmark_file(const std::string& path, const std::vector<LandmarkRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open '" + path + "' for writing");
  for (const auto& rec : records) out << format_landmark_record(rec) << '\n';
  if (!out) throw Error("failed writing '" + path + "'");
}

std::vector<LandmarkRecord> read_landmark_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open '" + path + "' for reading");
  std::vector<LandmarkRecord> records;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    records.push_back(parse_landmark_record(line, line_number));
  }
  return records;
}

}  // namespace poseface
