#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "poseface/errors.hpp"
#include "poseface/tensor.hpp"

namespace poseface {

inline constexpr int kNumLandmarks = 14;
// Side length of the coordinate frame landmarks live in: [0, kLandmarkFrame)^2.
inline constexpr double kLandmarkFrame = 64.0;

using Point2 = std::array<double, 2>;
using Point3 = std::array<double, 3>;

// A 14-point face annotation with head pose angles in degrees.
struct LandmarkSet {
  std::array<Point2, kNumLandmarks> points{};
  double frame_side = kLandmarkFrame;
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;

  void validate() const;  // throws OutOfFrameError / NumericError
};

/// Per-landmark binary rasters: channel k is 1 within `radius` of landmark k.
struct HeatmapStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // [channel][row][col]

  double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t size() const { return values.size(); }
  Tensor flatten(bool requires_grad = false) const;
};

// 2-D affine map  p' = A p + t.
struct AffineTransform {
  double a11 = 1.0, a12 = 0.0, tx = 0.0;
  double a21 = 0.0, a22 = 1.0, ty = 0.0;

  Point2 apply(const Point2& p) const {
    return {a11 * p[0] + a12 * p[1] + tx, a21 * p[0] + a22 * p[1] + ty};
  }
};

// Rasterizes the landmark set into a height x width stack.  Landmark
// coordinates are scaled from the set's frame into the raster; centers are
// snapped to the grid with round-half-up.  A center outside the raster is an
// error; disk pixels beyond the border are clipped.
HeatmapStack render_heatmaps(const LandmarkSet& lm, int height, int width, double radius = 1.0);

// Least-squares affine fit of dst onto src via the 6-parameter normal
// equations.  Throws DegenerateError when the source points are collinear.
AffineTransform estimate_affine(const std::vector<Point2>& src, const std::vector<Point2>& dst);

std::vector<Point2> apply_affine(const AffineTransform& t, const std::vector<Point2>& pts);

// compose(t2, t1) applies t1 first, then t2.
AffineTransform compose(const AffineTransform& t2, const AffineTransform& t1);

// Pose hardness ratio min(|yaw|, 90) / 90 used by the adaptive margin.
double adaptive_ratio(double yaw_degrees);

// Fixed 14-point 3-D face template (x right, y down, z toward the camera),
// roughly unit scale and centered.  Index order: jaw L/R, chin, brow L/R,
// eye outer/inner L, eye inner/outer R, nose bridge, nose tip, mouth L/R,
// lip bottom.
const std::array<Point3, kNumLandmarks>& canonical_landmarks_3d();

// The template at yaw 0 projected into the standard frame.
LandmarkSet canonical_landmarks_2d();

// Rotates the template (or a jittered copy) about the vertical axis and
// projects it orthographically into the standard frame.
LandmarkSet project_template(const std::array<Point3, kNumLandmarks>& tpl, double yaw_degrees);

// Diagnostic only: a crude yaw estimate from the horizontal asymmetry of the
// projected landmarks.  Not used by training or evaluation.
double estimate_yaw_from_landmarks(const LandmarkSet& lm);

// Text interchange line:
//   sample_id,identity_id,yaw,pitch,roll,x1,y1,...,x14,y14
struct LandmarkRecord {
  std::uint32_t sample_id = 0;
  std::uint32_t identity_id = 0;
  LandmarkSet landmarks;
};

std::string format_landmark_record(const LandmarkRecord& rec);
LandmarkRecord parse_landmark_record(const std::string& line, std::size_t line_number = 0);

void write_landmark_file(const std::string& path, const std::vector<LandmarkRecord>& records);
std::vector<LandmarkRecord> read_landmark_file(const std::string& path);

}  // namespace poseface
