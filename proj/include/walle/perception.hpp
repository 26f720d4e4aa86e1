#pragma once

#include <string>

#include "json.hpp"
#include "walle/geometry.hpp"
#include "walle/llm.hpp"
#include "walle/rng.hpp"
#include "walle/scene.hpp"

namespace walle {

/// Hand-eye calibration result T_base<-camera.
struct CameraExtrinsics {
  RigidTransform base_from_camera;

  FrameTransform to_base() const { return {base_from_camera, Frame::camera, Frame::robot_base}; }
  FrameTransform to_camera() const { return to_base().inverse(); }

  /// Torso-mounted camera above the robot base looking down at the table.
  static CameraExtrinsics default_mount();
  static CameraExtrinsics identity() { return {}; }
  /// {quaternion: [x,y,z,w], translation: [x,y,z]}. Throws ParseError / InvariantError.
  static CameraExtrinsics from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct NoiseModel {
  double p_wrong_grounding = 0.0;
  double sigma_t = 0.0;         // m
  double sigma_rot = 0.0;       // deg
  double sigma_size_rel = 0.0;  // fraction
  double p_missing_depth = 0.0;
  double depth_lift = 0.0;  // m, base-frame rise of the centre when depth is missing
  std::uint64_t seed = 0;

  void validate() const;  // throws InvariantError
  static NoiseModel from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct GroundingResult {
  std::string selected_id;
  Category label = Category::bottle;
  Polygon2 footprint;  // stands in for the segmentation mask
};

/// The correct object is the on-table (colour, category) match, ties broken by exact
/// name and then lowest id. With probability p_wrong_grounding a distractor is returned:
/// same category with another colour first, then same colour with another category, then
/// any other on-table object. Throws GroundingError when nothing matches.
GroundingResult ground_target(const Scene& scene, const TargetCommand& cmd, const NoiseModel& noise, Rng& rng);

/// The object ground_target selects with zero noise, if any.
std::optional<std::string> correct_target_id(const Scene& scene, const TargetCommand& cmd);

struct PoseEstimate {
  std::string target_id;  // ground-truth identity, for bookkeeping only
  Pose pose;
  Extents extents;
};

/// Ground truth moved into the camera frame and perturbed by the noise model.
PoseEstimate estimate_pose_size(const Scene& scene, const GroundingResult& grounding, const NoiseModel& noise,
                                const CameraExtrinsics& extrinsics, Rng& rng);

/// Throws PreconditionError unless the estimate is in the camera frame.
PoseEstimate camera_to_base(const PoseEstimate& estimate, const CameraExtrinsics& extrinsics);

}  // namespace walle
