#pragma once

#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace walle {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;
using Mat3 = Eigen::Matrix3d;

enum class Frame { camera, robot_base };

std::string_view to_string(Frame frame);
Frame frame_from_string(std::string_view text);

/// Rigid transform x -> R x + t. Composition renormalizes the quaternion.
struct RigidTransform {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  RigidTransform operator*(const RigidTransform& rhs) const;

  /// det(R) == +1 and R^T R == I within tol.
  bool is_proper(double tol = 1e-9) const;
};

/// A 6-DoF pose expressed in a named frame.
struct Pose {
  RigidTransform transform;
  Frame frame = Frame::robot_base;

  const Vec3& translation() const { return transform.translation; }
  const Quat& rotation() const { return transform.rotation; }
};

/// A transform that maps coordinates from one named frame into another.
struct FrameTransform {
  RigidTransform transform;
  Frame from = Frame::camera;
  Frame to = Frame::robot_base;

  FrameTransform inverse() const { return {transform.inverse(), to, from}; }
};

/// Re-express a pose in `t.to`. Throws PreconditionError when p.frame != t.from.
Pose change_frame(const Pose& p, const FrameTransform& t);

/// Object size along its local x (width), y (depth), z (height) axes.
struct Extents {
  double width = 0.0;
  double depth = 0.0;
  double height = 0.0;

  bool valid() const { return width > 0.0 && depth > 0.0 && height > 0.0; }
  Vec3 half() const { return Vec3(width, depth, height) * 0.5; }
};

Quat yaw_rotation(double yaw);
/// Angle in radians between the pose's local +z and world +z.
double tilt_from_vertical(const Quat& q);

struct Obb {
  Vec3 center = Vec3::Zero();
  Mat3 axes = Mat3::Identity();  // columns are the local unit axes
  Vec3 half = Vec3::Zero();

  static Obb from(const Pose& pose, const Extents& extents);
  std::vector<Vec3> corners() const;
};

/// Separating-axis test over the 15 candidate axes. Touching counts as intersecting.
bool obb_intersect(const Obb& a, const Obb& b);

using Polygon2 = std::vector<Vec2>;

/// Counter-clockwise hull (Andrew's monotone chain); collinear points dropped.
Polygon2 convex_hull(std::vector<Vec2> points);

/// Separating-axis test for convex polygons. Touching counts as intersecting.
bool convex_polygons_intersect(std::span<const Vec2> a, std::span<const Vec2> b);

/// Projection of the box onto the z = const plane as a convex polygon.
Polygon2 footprint_polygon(const Obb& box);

}  // namespace walle
