#include "walle/grasp.hpp"

#include <algorithm>
#include <cmath>

#include "walle/errors.hpp"

namespace walle {

using nlohmann::json;

void GripperSpec::validate() const {
  if (!(max_opening > 0 && finger_length > 0 && finger_thickness > 0 && finger_width > 0 && palm_clearance > 0)) {
    throw InvariantError("gripper: all dimensions must be positive");
  }
  if (!(max_opening > finger_thickness)) throw InvariantError("gripper: max_opening must exceed finger_thickness");
}

GripperSpec GripperSpec::from_json(const json& doc) {
  GripperSpec g;
  try {
    g.max_opening = doc.value("max_opening", g.max_opening);
    g.finger_length = doc.value("finger_length", g.finger_length);
    g.finger_thickness = doc.value("finger_thickness", g.finger_thickness);
    g.finger_width = doc.value("finger_width", g.finger_width);
    g.palm_clearance = doc.value("palm_clearance", g.palm_clearance);
  } catch (const json::exception& ex) {
    throw ParseError(std::string("gripper: ") + ex.what());
  }
  g.validate();
  return g;
}

json GripperSpec::to_json() const {
  return {{"max_opening", max_opening},
          {"finger_length", finger_length},
          {"finger_thickness", finger_thickness},
          {"finger_width", finger_width},
          {"palm_clearance", palm_clearance}};
}

Workspace Workspace::from_json(const json& doc) {
  Workspace w;
  try {
    auto read = [&](const char* key, Vec3& lo, Vec3& hi, int axis) {
      if (!doc.contains(key)) return;
      const auto range = doc.at(key).get<std::vector<double>>();
      if (range.size() != 2 || range[0] > range[1]) throw ParseError(std::string("workspace: bad range for ") + key);
      lo[axis] = range[0];
      hi[axis] = range[1];
    };
    read("x", w.min, w.max, 0);
    read("y", w.min, w.max, 1);
    read("z", w.min, w.max, 2);
  } catch (const json::exception& ex) {
    throw ParseError(std::string("workspace: ") + ex.what());
  }
  return w;
}

json Workspace::to_json() const {
  return {{"x", {min.x(), max.x()}}, {"y", {min.y(), max.y()}}, {"z", {min.z(), max.z()}}};
}

Quat GraspPose::orientation() const {
  return (yaw_rotation(closing_yaw) * Quat(Eigen::AngleAxisd(M_PI, Vec3::UnitX()))).normalized();
}

GraspPose compute_grasp_pose(const PoseEstimate& estimate, Category category, const GripperSpec& gripper,
                             const GraspParams& params) {
  if (estimate.pose.frame != Frame::robot_base) throw PreconditionError("grasp planning needs a robot_base estimate");
  const Vec3& c = estimate.pose.translation();
  const double h = estimate.extents.height;
  const double caliber = std::min(estimate.extents.width, estimate.extents.depth);

  GraspPose gp;
  if (category == Category::bottle) {
    if (caliber > gripper.max_opening - params.bottle_opening_margin) {
      throw UngraspableError("bottle body is wider than the gripper opening");
    }
    const double base_z = c.z() - h / 2.0;
    gp.point = Vec3(c.x(), c.y(), base_z + h / 3.0);
    gp.closing_yaw = 0.0;
    return gp;
  }

  if (params.rim_thickness > gripper.max_opening) throw UngraspableError("rim is thicker than the gripper opening");
  Vec2 d(-c.x(), -c.y());
  if (d.norm() < 1e-12) {
    d = Vec2(1.0, 0.0);
  } else {
    d.normalize();
  }
  const double radius = caliber / 2.0;
  gp.point = Vec3(c.x() + d.x() * radius, c.y() + d.y() * radius, c.z() + h / 2.0 - params.rim_engage);
  gp.closing_yaw = std::atan2(d.y(), d.x());
  return gp;
}

bool check_reachability(const GraspPose& grasp, const Workspace& workspace, double clear_height) {
  return workspace.contains(grasp.point) && workspace.contains(grasp.pre_grasp(clear_height));
}

std::vector<Obb> swept_gripper_boxes(const GraspPose& grasp, const GripperSpec& g, double clear_height) {
  const Vec3 u = grasp.closing_axis();
  const Vec3 v = Vec3::UnitZ().cross(u);
  Mat3 axes;
  axes.col(0) = u;
  axes.col(1) = v;
  axes.col(2) = Vec3::UnitZ();

  auto swept = [&](const Vec3& center, const Vec3& half) {
    Obb box;
    box.axes = axes;
    box.center = center + Vec3(0.0, 0.0, clear_height / 2.0);
    box.half = half + Vec3(0.0, 0.0, clear_height / 2.0);
    return box;
  };
  const double finger_offset = g.max_opening / 2.0 + g.finger_thickness / 2.0;
  const Vec3 finger_half(g.finger_thickness / 2.0, g.finger_width / 2.0, g.finger_length / 2.0);
  const Vec3 palm_center = grasp.point + Vec3(0.0, 0.0, g.finger_length / 2.0 + g.palm_clearance / 2.0);
  const Vec3 palm_half(g.max_opening / 2.0 + g.finger_thickness, g.finger_width / 2.0, g.palm_clearance / 2.0);
  return {swept(grasp.point + u * finger_offset, finger_half), swept(grasp.point - u * finger_offset, finger_half),
          swept(palm_center, palm_half)};
}

std::optional<std::string> check_collision(const GraspPose& grasp, const Scene& scene, const GripperSpec& gripper,
                                           const std::string& exclude, double clear_height) {
  const auto boxes = swept_gripper_boxes(grasp, gripper, clear_height);
  for (const auto& o : scene.objects) {
    if (o.id == exclude || o.state != ObjectState::on_table) continue;
    const Obb obb = o.obb();
    for (const auto& box : boxes) {
      if (obb_intersect(box, obb)) return o.id;
    }
  }
  return std::nullopt;
}

std::string_view to_string(MotionPhase p) {
  switch (p) {
    case MotionPhase::pre_grasp:
      return "pre_grasp";
    case MotionPhase::descend:
      return "descend";
    case MotionPhase::close:
      return "close";
    case MotionPhase::lift:
      return "lift";
    case MotionPhase::move_to_user:
      return "move_to_user";
    case MotionPhase::open:
      return "open";
  }
  return "unknown";
}

MotionPlan plan_motion(const GraspPose& grasp, const Vec3& user_zone, const PlanConfig& config) {
  const Quat q = grasp.orientation();
  auto at = [&](const Vec3& p) { return Pose{RigidTransform{q, p}, Frame::robot_base}; };
  const Vec3 above = grasp.pre_grasp(config.clear_height);
  MotionPlan plan;
  plan.grasp = grasp;
  plan.waypoints = {
      {MotionPhase::pre_grasp, at(above), config.open_aperture},
      {MotionPhase::descend, at(grasp.point), config.open_aperture},
      {MotionPhase::close, at(grasp.point), config.closed_aperture},
      {MotionPhase::lift, at(above), config.closed_aperture},
      {MotionPhase::move_to_user, at(user_zone), config.closed_aperture},
      {MotionPhase::open, at(user_zone), config.open_aperture},
  };
  return plan;
}

json MotionPlan::to_json() const {
  json wps = json::array();
  for (const auto& w : waypoints) {
    const auto& t = w.gripper_pose.translation();
    const auto& q = w.gripper_pose.rotation();
    wps.push_back({{"phase", std::string(to_string(w.phase))},
                   {"position", {t.x(), t.y(), t.z()}},
                   {"quaternion", {q.x(), q.y(), q.z(), q.w()}},
                   {"aperture", w.aperture}});
  }
  return {{"grasp", {{"point", {grasp.point.x(), grasp.point.y(), grasp.point.z()}}, {"closing_yaw", grasp.closing_yaw}}},
          {"waypoints", std::move(wps)}};
}

std::string_view to_string(OutcomeClass c) {
  switch (c) {
    case OutcomeClass::success:
      return "success";
    case OutcomeClass::wrong_object:
      return "wrong_object";
    case OutcomeClass::collision:
      return "collision";
    case OutcomeClass::unreachable:
      return "unreachable";
    case OutcomeClass::dropped:
      return "dropped";
  }
  return "unknown";
}

namespace {

bool within_success_window(const GraspPose& planned, const ObjectInstance& truth, const ExecutionConfig& cfg) {
  const PoseEstimate exact{truth.id, truth.pose, truth.extents};
  GraspPose required;
  try {
    required = compute_grasp_pose(exact, truth.category, cfg.gripper, cfg.params);
  } catch (const UngraspableError&) {
    return false;
  }
  const double caliber = truth.category == Category::bottle ? truth.body_diameter : cfg.params.rim_thickness;
  const double horizontal = (planned.point.head<2>() - required.point.head<2>()).norm();
  const double vertical = std::abs(planned.point.z() - required.point.z());
  if (horizontal > (cfg.gripper.max_opening - caliber) / 2.0) return false;
  if (vertical > cfg.params.z_tol) return false;
  return planned.point.z() <= truth.top_z();
}

}  // namespace

ExecutionResult execute(const MotionPlan& plan, const TargetCommand& cmd, const Scene& scene_truth,
                        const std::string& grounded_id, const ExecutionConfig& config) {
  ExecutionResult result{{}, scene_truth};
  auto& out = result.outcome;
  const auto& grounded = scene_truth.at(grounded_id);

  if (!check_reachability(plan.grasp, config.workspace, config.params.clear_height)) {
    out.outcome = OutcomeClass::unreachable;
    return result;
  }
  if (auto hit = check_collision(plan.grasp, scene_truth, config.gripper, grounded_id, config.params.clear_height)) {
    out.outcome = OutcomeClass::collision;
    out.blocking_id = std::move(hit);
    return result;
  }
  const auto correct = correct_target_id(scene_truth, cmd);
  if (grounded.color != cmd.color || grounded.category != cmd.category || correct != grounded_id) {
    out.outcome = OutcomeClass::wrong_object;
    out.grasped_id = grounded_id;
    result.scene_after = apply_event(scene_truth, SceneEvent::delivered(grounded_id));
    return result;
  }
  if (!within_success_window(plan.grasp, grounded, config)) {
    out.outcome = OutcomeClass::dropped;
    result.scene_after = apply_event(scene_truth, SceneEvent::toppled(grounded_id));
    return result;
  }
  out.outcome = OutcomeClass::success;
  out.grasped_id = grounded_id;
  result.scene_after = apply_event(scene_truth, SceneEvent::delivered(grounded_id));
  return result;
}

}  // namespace walle
