#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "walle/geometry.hpp"
#include "walle/llm.hpp"
#include "walle/perception.hpp"
#include "walle/scene.hpp"

namespace walle {

struct GripperSpec {
  double max_opening = 0.10;
  double finger_length = 0.05;
  double finger_thickness = 0.01;
  double finger_width = 0.02;
  double palm_clearance = 0.03;

  void validate() const;
  static GripperSpec from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

/// Closed axis-aligned box standing in for the arm's inverse-kinematics envelope.
struct Workspace {
  Vec3 min{0.3, -0.5, 0.0};
  Vec3 max{0.9, 0.5, 0.4};

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  static Workspace from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct GraspParams {
  double rim_engage = 0.015;
  double rim_thickness = 0.006;
  double bottle_opening_margin = 0.005;
  double clear_height = 0.10;
  double z_tol = 0.02;
};

/// Top grasp: approach is always straight down.
struct GraspPose {
  Vec3 point = Vec3::Zero();  // robot_base frame
  double closing_yaw = 0.0;   // closing axis angle about +z

  static Vec3 approach() { return -Vec3::UnitZ(); }
  Vec3 closing_axis() const { return {std::cos(closing_yaw), std::sin(closing_yaw), 0.0}; }
  Vec3 pre_grasp(double clear_height) const { return point + Vec3(0.0, 0.0, clear_height); }
  /// Gripper orientation: tool z along gravity, tool x along the closing axis.
  Quat orientation() const;
};

/// Bottles are held on the body axis at one third of the height; bowls and mugs by the
/// near rim, on the side facing the robot base. Throws PreconditionError for a
/// non-base-frame estimate and UngraspableError when the caliber does not fit.
GraspPose compute_grasp_pose(const PoseEstimate& estimate, Category category, const GripperSpec& gripper,
                             const GraspParams& params = {});

bool check_reachability(const GraspPose& grasp, const Workspace& workspace, double clear_height = GraspParams{}.clear_height);

/// Finger and palm boxes at the grasp, each extended upward by the descent.
std::vector<Obb> swept_gripper_boxes(const GraspPose& grasp, const GripperSpec& gripper, double clear_height);

/// First on-table object other than `exclude` hit by the swept gripper, in scene order.
std::optional<std::string> check_collision(const GraspPose& grasp, const Scene& scene, const GripperSpec& gripper,
                                           const std::string& exclude, double clear_height = GraspParams{}.clear_height);

enum class MotionPhase { pre_grasp, descend, close, lift, move_to_user, open };

std::string_view to_string(MotionPhase p);

struct Waypoint {
  MotionPhase phase = MotionPhase::pre_grasp;
  Pose gripper_pose;
  double aperture = 0.0;
};

struct MotionPlan {
  GraspPose grasp;
  std::vector<Waypoint> waypoints;

  nlohmann::json to_json() const;
};

struct PlanConfig {
  double clear_height = 0.10;
  double open_aperture = GripperSpec{}.max_opening;
  double closed_aperture = 0.0;
};

inline const Vec3 kDefaultUserZone{0.35, 0.45, 0.25};

MotionPlan plan_motion(const GraspPose& grasp, const Vec3& user_zone, const PlanConfig& config = {});

enum class OutcomeClass { success, wrong_object, collision, unreachable, dropped };

std::string_view to_string(OutcomeClass c);

struct ExecutionOutcome {
  OutcomeClass outcome = OutcomeClass::success;
  std::optional<std::string> blocking_id;
  std::optional<std::string> grasped_id;
};

struct ExecutionConfig {
  GripperSpec gripper;
  Workspace workspace;
  GraspParams params;
};

struct ExecutionResult {
  ExecutionOutcome outcome;
  Scene scene_after;
};

/// Checks in order: reachability, collision, object identity, success window on the
/// grounded object's true geometry. Success delivers the object; a wrong object is
/// delivered as well, a dropped grasp topples it.
ExecutionResult execute(const MotionPlan& plan, const TargetCommand& cmd, const Scene& scene_truth,
                        const std::string& grounded_id, const ExecutionConfig& config = {});

}  // namespace walle
