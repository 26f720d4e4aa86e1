#pragma once

#include <filesystem>

#include "json.hpp"
#include "walle/grasp.hpp"
#include "walle/llm.hpp"
#include "walle/perception.hpp"

namespace walle {

/// Run-config file: {noise, gripper, workspace, llm_failure, extrinsics, grasp, llm, user_zone}.
/// Every section is optional and falls back to the built-in defaults.
struct RunConfig {
  NoiseModel noise;
  GripperSpec gripper;
  Workspace workspace;
  GraspParams grasp;
  FailureInjection llm_failure;
  CameraExtrinsics extrinsics = CameraExtrinsics::default_mount();
  RemoteChatConfig llm;
  Vec3 user_zone = kDefaultUserZone;

  ExecutionConfig execution() const { return {gripper, workspace, grasp}; }

  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

}  // namespace walle
