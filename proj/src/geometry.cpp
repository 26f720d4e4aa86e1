#include "walle/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "walle/errors.hpp"

namespace walle {

std::string_view to_string(Frame frame) {
  switch (frame) {
    case Frame::camera:
      return "camera";
    case Frame::robot_base:
      return "robot_base";
  }
  return "unknown";
}

Frame frame_from_string(std::string_view text) {
  if (text == "camera") return Frame::camera;
  if (text == "robot_base") return Frame::robot_base;
  throw ParseError("unknown frame: " + std::string(text));
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.conjugate().normalized();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation = (rotation * rhs.rotation).normalized();
  out.translation = rotation * rhs.translation + translation;
  return out;
}

bool RigidTransform::is_proper(double tol) const {
  const Mat3 r = rotation.toRotationMatrix();
  if (std::abs(r.determinant() - 1.0) > tol) return false;
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol;
}

Pose change_frame(const Pose& p, const FrameTransform& t) {
  if (p.frame != t.from) {
    throw PreconditionError("pose is in frame '" + std::string(to_string(p.frame)) +
                            "', transform expects '" + std::string(to_string(t.from)) + "'");
  }
  return Pose{t.transform * p.transform, t.to};
}

Quat yaw_rotation(double yaw) { return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())); }

double tilt_from_vertical(const Quat& q) {
  const double c = std::clamp((q * Vec3::UnitZ()).dot(Vec3::UnitZ()), -1.0, 1.0);
  return std::acos(c);
}

Obb Obb::from(const Pose& pose, const Extents& extents) {
  Obb box;
  box.center = pose.translation();
  box.axes = pose.rotation().normalized().toRotationMatrix();
  box.half = extents.half();
  return box;
}

std::vector<Vec3> Obb::corners() const {
  std::vector<Vec3> out;
  out.reserve(8);
  for (int i = 0; i < 8; ++i) {
    const Vec3 s((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
    out.push_back(center + axes * s.cwiseProduct(half));
  }
  return out;
}

bool obb_intersect(const Obb& a, const Obb& b) {
  // Gottschalk-style SAT: rotation of b expressed in a's frame.
  constexpr double kEps = 1e-12;
  const Mat3 r = a.axes.transpose() * b.axes;
  const Mat3 abs_r = r.cwiseAbs().array() + kEps;
  const Vec3 t = a.axes.transpose() * (b.center - a.center);

  for (int i = 0; i < 3; ++i) {
    const double ra = a.half[i];
    const double rb = b.half.dot(abs_r.row(i));
    if (std::abs(t[i]) > ra + rb) return false;
  }
  for (int j = 0; j < 3; ++j) {
    const double ra = a.half.dot(abs_r.col(j));
    const double rb = b.half[j];
    if (std::abs(t.dot(r.col(j))) > ra + rb) return false;
  }
  for (int i = 0; i < 3; ++i) {
    const int i1 = (i + 1) % 3;
    const int i2 = (i + 2) % 3;
    for (int j = 0; j < 3; ++j) {
      const int j1 = (j + 1) % 3;
      const int j2 = (j + 2) % 3;
      const double ra = a.half[i1] * abs_r(i2, j) + a.half[i2] * abs_r(i1, j);
      const double rb = b.half[j1] * abs_r(i, j2) + b.half[j2] * abs_r(i, j1);
      const double dist = std::abs(t[i2] * r(i1, j) - t[i1] * r(i2, j));
      if (dist > ra + rb) return false;
    }
  }
  return true;
}

namespace {

double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

void project(std::span<const Vec2> poly, const Vec2& axis, double& lo, double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = -lo;
  for (const auto& p : poly) {
    const double d = p.dot(axis);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
}

bool separated_along_edges(std::span<const Vec2> a, std::span<const Vec2> b) {
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 edge = a[(i + 1) % n] - a[i];
    const Vec2 axis(-edge.y(), edge.x());
    if (axis.squaredNorm() == 0.0) continue;
    double alo, ahi, blo, bhi;
    project(a, axis, alo, ahi);
    project(b, axis, blo, bhi);
    if (ahi < blo || bhi < alo) return true;
  }
  return false;
}

}  // namespace

Polygon2 convex_hull(std::vector<Vec2> points) {
  std::sort(points.begin(), points.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() < 3) return points;

  Polygon2 hull(2 * points.size());
  std::size_t k = 0;
  for (const auto& p : points) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = points.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], points[i]) <= 0.0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool convex_polygons_intersect(std::span<const Vec2> a, std::span<const Vec2> b) {
  if (a.empty() || b.empty()) return false;
  return !separated_along_edges(a, b) && !separated_along_edges(b, a);
}

Polygon2 footprint_polygon(const Obb& box) {
  std::vector<Vec2> pts;
  pts.reserve(8);
  for (const auto& c : box.corners()) pts.emplace_back(c.x(), c.y());
  return convex_hull(std::move(pts));
}

}  // namespace walle
