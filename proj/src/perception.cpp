#include "walle/perception.hpp"

#include <algorithm>
#include <cmath>

#include "walle/errors.hpp"

namespace walle {

using nlohmann::json;

CameraExtrinsics CameraExtrinsics::default_mount() {
  const Vec3 eye(0.15, 0.0, 0.65);
  const Vec3 look_at(0.6, 0.0, 0.0);
  const Vec3 z = (look_at - eye).normalized();
  const Vec3 x = z.cross(Vec3::UnitZ()).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  CameraExtrinsics out;
  out.base_from_camera.rotation = Quat(r).normalized();
  out.base_from_camera.translation = eye;
  return out;
}

CameraExtrinsics CameraExtrinsics::from_json(const json& doc) {
  CameraExtrinsics out;
  try {
    const auto q = doc.at("quaternion").get<std::vector<double>>();
    const auto t = doc.at("translation").get<std::vector<double>>();
    if (q.size() != 4 || t.size() != 3) throw ParseError("extrinsics: expected 4 quaternion and 3 translation values");
    Quat quat(q[3], q[0], q[1], q[2]);
    if (std::abs(quat.norm() - 1.0) > 1e-6) throw InvariantError("extrinsics: quaternion is not unit length");
    out.base_from_camera.rotation = quat.normalized();
    out.base_from_camera.translation = Vec3(t[0], t[1], t[2]);
  } catch (const json::exception& ex) {
    throw ParseError(std::string("extrinsics: ") + ex.what());
  }
  if (!out.base_from_camera.is_proper()) throw InvariantError("extrinsics: rotation is not proper");
  return out;
}

json CameraExtrinsics::to_json() const {
  const auto& q = base_from_camera.rotation;
  const auto& t = base_from_camera.translation;
  return {{"quaternion", {q.x(), q.y(), q.z(), q.w()}}, {"translation", {t.x(), t.y(), t.z()}}};
}

void NoiseModel::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_wrong_grounding) || !prob(p_missing_depth)) throw InvariantError("noise: probabilities must be in [0,1]");
  if (!(sigma_t >= 0.0 && sigma_rot >= 0.0 && sigma_size_rel >= 0.0)) {
    throw InvariantError("noise: sigmas must be non-negative");
  }
  if (!(depth_lift >= 0.0)) throw InvariantError("noise: depth_lift must be non-negative");
}

NoiseModel NoiseModel::from_json(const json& doc) {
  NoiseModel n;
  try {
    n.p_wrong_grounding = doc.value("p_wrong_grounding", 0.0);
    n.sigma_t = doc.value("sigma_t", 0.0);
    n.sigma_rot = doc.value("sigma_rot", 0.0);
    n.sigma_size_rel = doc.value("sigma_size_rel", 0.0);
    n.p_missing_depth = doc.value("p_missing_depth", 0.0);
    n.depth_lift = doc.value("depth_lift", 0.0);
    n.seed = doc.value("seed", std::uint64_t{0});
  } catch (const json::exception& ex) {
    throw ParseError(std::string("noise: ") + ex.what());
  }
  n.validate();
  return n;
}

json NoiseModel::to_json() const {
  return {{"p_wrong_grounding", p_wrong_grounding}, {"sigma_t", sigma_t},
          {"sigma_rot", sigma_rot},                 {"sigma_size_rel", sigma_size_rel},
          {"p_missing_depth", p_missing_depth},     {"depth_lift", depth_lift},
          {"seed", seed}};
}

// ---------------------------------------------------------------------------
// Grounding

namespace {

bool id_less(const std::string& a, const std::string& b) {
  return a.size() != b.size() ? a.size() < b.size() : a < b;
}

std::vector<const ObjectInstance*> on_table(const Scene& scene) {
  std::vector<const ObjectInstance*> out;
  for (const auto& o : scene.objects) {
    if (o.state == ObjectState::on_table) out.push_back(&o);
  }
  return out;
}

const ObjectInstance* lowest_id(const std::vector<const ObjectInstance*>& objs) {
  if (objs.empty()) return nullptr;
  return *std::min_element(objs.begin(), objs.end(),
                           [](const ObjectInstance* a, const ObjectInstance* b) { return id_less(a->id, b->id); });
}

}  // namespace

std::optional<std::string> correct_target_id(const Scene& scene, const TargetCommand& cmd) {
  std::vector<const ObjectInstance*> matches, named;
  for (const auto* o : on_table(scene)) {
    if (o->color == cmd.color && o->category == cmd.category) {
      matches.push_back(o);
      if (o->name == cmd.object_name) named.push_back(o);
    }
  }
  if (const auto* o = lowest_id(named.empty() ? matches : named)) return o->id;
  return std::nullopt;
}

GroundingResult ground_target(const Scene& scene, const TargetCommand& cmd, const NoiseModel& noise, Rng& rng) {
  const auto candidates = on_table(scene);
  if (candidates.empty()) throw PreconditionError("grounding needs at least one object on the table");
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const auto correct = correct_target_id(scene, cmd);
  if (!correct) {
    throw GroundingError("no object on the table matches '" + cmd.color + " " + std::string(to_string(cmd.category)) + "'");
  }

  const ObjectInstance* chosen = &scene.at(*correct);
  if (u < noise.p_wrong_grounding && candidates.size() > 1) {
    std::vector<const ObjectInstance*> same_category, same_color, rest;
    for (const auto* o : candidates) {
      if (o->id == chosen->id) continue;
      if (o->category == cmd.category && o->color != cmd.color) {
        same_category.push_back(o);
      } else if (o->color == cmd.color && o->category != cmd.category) {
        same_color.push_back(o);
      } else {
        rest.push_back(o);
      }
    }
    const auto& pool = !same_category.empty() ? same_category : (!same_color.empty() ? same_color : rest);
    chosen = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  }
  return {chosen->id, chosen->category, footprint_polygon(chosen->obb())};
}

// ---------------------------------------------------------------------------
// Pose and size

PoseEstimate estimate_pose_size(const Scene& scene, const GroundingResult& grounding, const NoiseModel& noise,
                                const CameraExtrinsics& extrinsics, Rng& rng) {
  const auto& truth = scene.at(grounding.selected_id);
  if (truth.state != ObjectState::on_table) throw PreconditionError(truth.id + " is not on the table");

  const auto to_camera = extrinsics.to_camera();
  Pose pose = change_frame(truth.pose, to_camera);
  Extents extents = truth.extents;

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Vec3 dt(gauss(rng), gauss(rng), gauss(rng));
  Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
  const double angle_deg = gauss(rng) * noise.sigma_rot;
  const Vec3 ds(gauss(rng), gauss(rng), gauss(rng));
  const bool missing_depth = unit(rng) < noise.p_missing_depth;

  pose.transform.translation += dt * noise.sigma_t;
  if (angle_deg != 0.0) {
    if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
    const Quat dq(Eigen::AngleAxisd(angle_deg * M_PI / 180.0, axis.normalized()));
    pose.transform.rotation = (dq * pose.transform.rotation).normalized();
  }
  constexpr double kMinExtent = 1e-4;
  extents.width = std::max(kMinExtent, extents.width * (1.0 + ds.x() * noise.sigma_size_rel));
  extents.depth = std::max(kMinExtent, extents.depth * (1.0 + ds.y() * noise.sigma_size_rel));
  extents.height = std::max(kMinExtent, extents.height * (1.0 + ds.z() * noise.sigma_size_rel));
  if (missing_depth) {
    pose.transform.translation += to_camera.transform.rotation * Vec3(0.0, 0.0, noise.depth_lift);
  }
  return {truth.id, pose, extents};
}

PoseEstimate camera_to_base(const PoseEstimate& estimate, const CameraExtrinsics& extrinsics) {
  if (estimate.pose.frame != Frame::camera) throw PreconditionError("estimate is not in the camera frame");
  PoseEstimate out = estimate;
  out.pose = change_frame(estimate.pose, extrinsics.to_base());
  return out;
}

}  // namespace walle
