#include "walle/pipeline.hpp"

#include "walle/errors.hpp"

namespace walle {

ExecutionReport PipelineTrace::report() const {
  ExecutionReport r;
  r.scene_after = scene_after;
  if (outcome) {
    r.object_id = outcome->grasped_id;
    r.summary = std::string(to_string(outcome->outcome));
  } else {
    r.summary = error;
  }
  return r;
}

PipelineTrace run_grasp_pipeline(const Scene& truth, const TargetCommand& cmd, const RunConfig& config, Rng& rng) {
  PipelineTrace trace;
  trace.scene_after = truth;
  try {
    trace.grounding = ground_target(truth, cmd, config.noise, rng);
  } catch (const GroundingError& ex) {
    trace.error = std::string("grounding failed: ") + ex.what();
    return trace;
  }
  const auto camera_estimate = estimate_pose_size(truth, *trace.grounding, config.noise, config.extrinsics, rng);
  trace.estimate = camera_to_base(camera_estimate, config.extrinsics);
  try {
    trace.grasp = compute_grasp_pose(*trace.estimate, trace.grounding->label, config.gripper, config.grasp);
  } catch (const UngraspableError& ex) {
    trace.error = std::string("ungraspable: ") + ex.what();
    return trace;
  }
  PlanConfig plan_cfg;
  plan_cfg.clear_height = config.grasp.clear_height;
  plan_cfg.open_aperture = config.gripper.max_opening;
  trace.plan = plan_motion(*trace.grasp, config.user_zone, plan_cfg);
  auto result = execute(*trace.plan, cmd, truth, trace.grounding->selected_id, config.execution());
  trace.outcome = result.outcome;
  trace.scene_after = std::move(result.scene_after);
  return trace;
}

}  // namespace walle
