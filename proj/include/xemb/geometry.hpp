// SE(3) numerics for motion annotations and the object-trajectory extraction
// pipeline: mask dilation, pinhole depth lifting, and trimmed ICP with an
// SVD rigid fit.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace xemb::geom {

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const;
  Vec3 normalized() const;
};

// Unit quaternion, hemisphere-canonicalized (w >= 0).
struct Quat {
  double w = 1, x = 0, y = 0, z = 0;

  static Quat identity() { return {}; }
  // Normalizes and canonicalizes; throws on near-zero norm.
  static Quat normalized(double w, double x, double y, double z);
  static Quat from_axis_angle(const Vec3& axis, double angle_rad);
  static Quat from_matrix(const std::array<double, 9>& m);  // row-major

  Quat compose(const Quat& o) const;  // this ∘ o (o applied first)
  Quat inverse() const;
  Vec3 rotate(const Vec3& v) const;
  std::array<double, 9> to_matrix() const;
  double norm() const;
  // Geodesic angle to another rotation, radians in [0, pi].
  double angle_to(const Quat& o) const;
};

struct Pose {
  Vec3 translation;
  Quat rotation;

  static Pose identity() { return {}; }
  Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }
  // compose(a, b).apply(p) == a.apply(b.apply(p))
  Pose compose(const Pose& o) const;
  Pose inverse() const;
};

// 6D rotation serialization: the first two columns of the rotation matrix,
// decoded by Gram-Schmidt.
std::array<double, 6> rot6d_from_rotation(const Quat& r);
std::array<double, 6> rot6d_from_pose(const Pose& p);
Quat rot6d_to_pose_rotation(const std::array<double, 6>& v);

struct MaskFrame {
  int height = 0, width = 0;
  std::vector<uint8_t> mask;  // row-major, nonzero = set

  bool at(int r, int c) const {
    return mask[static_cast<size_t>(r) * width + c] != 0;
  }
  int count() const;
};

struct DepthFrame {
  int height = 0, width = 0;
  std::vector<double> depth;  // 0 marks invalid
  double fx = 1, fy = 1, cx = 0, cy = 0;
};

struct PointCloud {
  std::vector<Vec3> points;
  int source_frame = 0;
};

// Set dilation by a disc of the given pixel radius; radius 0 is identity.
MaskFrame dilate_mask(const MaskFrame& m, int radius);

// Pinhole back-projection of masked valid-depth pixels; throws when fewer
// than 3 points survive.
PointCloud lift_depth_to_cloud(const DepthFrame& d, const MaskFrame& m,
                               int source_frame = 0);

// (u, v) pixel coordinates of each point under the frame's intrinsics.
std::vector<std::array<double, 2>> project_cloud(const PointCloud& cloud,
                                                 const DepthFrame& intrinsics);

struct IcpConfig {
  double trim_fraction = 0.2;
  int max_iters = 50;
  double tol = 1e-8;
};

struct IcpResult {
  Pose pose;
  double residual = 0.0;  // RMS distance over retained pairs
  bool converged = false;
  int iterations = 0;
  std::vector<double> residual_history;
};

// Point-to-point trimmed ICP, identity-initialized. Finds the pose carrying
// src onto dst. Non-convergence is flagged, not thrown.
IcpResult trimmed_icp(const PointCloud& src, const PointCloud& dst,
                      const IcpConfig& cfg = {});

// Chained world-frame trajectory: pose[0] identity, each consecutive pair
// registered with trimmed ICP.
std::vector<Pose> estimate_object_trajectory(
    const std::vector<PointCloud>& clouds, const IcpConfig& cfg = {});

// Line-oriented text interchange ("x y z" per point; "tx ty tz qw qx qy qz"
// per pose; '#' comments), full float64 round-trip precision.
std::string cloud_to_text(const PointCloud& c);
PointCloud cloud_from_text(const std::string& text);
std::string trajectory_to_text(const std::vector<Pose>& poses);
std::vector<Pose> trajectory_from_text(const std::string& text);

}  // namespace xemb::geom
