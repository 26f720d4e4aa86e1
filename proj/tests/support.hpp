#pragma once

#include <cmath>
#include <random>
#include <string>

#include "walle/errors.hpp"
#include "walle/scene.hpp"

namespace walle::testing {

inline const Catalog& catalog() {
  static const Catalog c = load_catalog(std::string(WALLE_DATA_DIR) + "/catalog.json");
  return c;
}

inline RigidTransform random_transform(std::mt19937_64& rng, double span = 2.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-span, span);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return {q, Vec3(u(rng), u(rng), u(rng))};
}

inline const ObjectTemplate& template_named(const std::string& name) {
  for (const auto& t : catalog().entries) {
    if (t.name == name) return t;
  }
  throw NotFoundError(name);
}

/// Upright instance of a catalog template standing on z = 0.
inline ObjectInstance place(const ObjectTemplate& t, std::string id, double x, double y, double yaw = 0.0) {
  ObjectInstance o;
  o.id = std::move(id);
  o.name = t.name;
  o.category = t.category;
  o.color = t.color;
  o.extents = t.extents;
  o.body_diameter = t.body_diameter;
  o.semantic = t.semantic;
  o.pose.frame = Frame::robot_base;
  o.pose.transform.rotation = yaw_rotation(yaw);
  o.pose.transform.translation = Vec3(x, y, t.extents.height / 2.0);
  return o;
}

}  // namespace walle::testing
