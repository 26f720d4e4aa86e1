#pragma once

#include <optional>
#include <string>

#include "walle/config.hpp"
#include "walle/dialogue.hpp"
#include "walle/grasp.hpp"
#include "walle/perception.hpp"

namespace walle {

/// Everything one execution produced, stage by stage. A stage that failed leaves the
/// later fields empty and explains itself in `error`.
struct PipelineTrace {
  std::optional<GroundingResult> grounding;
  std::optional<PoseEstimate> estimate;  // robot_base frame
  std::optional<GraspPose> grasp;
  std::optional<MotionPlan> plan;
  std::optional<ExecutionOutcome> outcome;
  std::string error;
  Scene scene_after;

  ExecutionReport report() const;
};

/// grounding -> pose/size estimation -> camera to base -> grasp pose -> plan -> execute.
PipelineTrace run_grasp_pipeline(const Scene& truth, const TargetCommand& cmd, const RunConfig& config, Rng& rng);

}  // namespace walle
