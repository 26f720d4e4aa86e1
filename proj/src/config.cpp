#include "walle/config.hpp"

#include <fstream>

#include "walle/errors.hpp"

namespace walle {

using nlohmann::json;

RunConfig RunConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("run config: expected a JSON object");
  RunConfig cfg;
  try {
    if (doc.contains("noise")) cfg.noise = NoiseModel::from_json(doc["noise"]);
    if (doc.contains("gripper")) cfg.gripper = GripperSpec::from_json(doc["gripper"]);
    if (doc.contains("workspace")) cfg.workspace = Workspace::from_json(doc["workspace"]);
    if (doc.contains("extrinsics")) cfg.extrinsics = CameraExtrinsics::from_json(doc["extrinsics"]);
    if (doc.contains("grasp")) {
      const auto& g = doc["grasp"];
      cfg.grasp.rim_engage = g.value("rim_engage", cfg.grasp.rim_engage);
      cfg.grasp.rim_thickness = g.value("rim_thickness", cfg.grasp.rim_thickness);
      cfg.grasp.bottle_opening_margin = g.value("bottle_opening_margin", cfg.grasp.bottle_opening_margin);
      cfg.grasp.clear_height = g.value("clear_height", cfg.grasp.clear_height);
      cfg.grasp.z_tol = g.value("z_tol", cfg.grasp.z_tol);
    }
    if (doc.contains("llm_failure")) {
      const auto& f = doc["llm_failure"];
      const auto mode = failure_mode_from_string(f.value("mode", "none"));
      if (!mode) throw ParseError("run config: unknown llm_failure mode");
      cfg.llm_failure.mode = *mode;
      cfg.llm_failure.probability = f.value("probability", 0.0);
      cfg.llm_failure.seed = f.value("seed", std::uint64_t{0});
      if (!(cfg.llm_failure.probability >= 0.0 && cfg.llm_failure.probability <= 1.0)) {
        throw InvariantError("run config: llm_failure probability outside [0,1]");
      }
    }
    if (doc.contains("llm")) {
      const auto& l = doc["llm"];
      cfg.llm.base_url = l.value("base_url", cfg.llm.base_url);
      cfg.llm.model_id = l.value("model", cfg.llm.model_id);
      cfg.llm.temperature = l.value("temperature", cfg.llm.temperature);
      cfg.llm.api_key_env = l.value("api_key_env", cfg.llm.api_key_env);
      cfg.llm.retries = l.value("retries", cfg.llm.retries);
      cfg.llm.timeout = std::chrono::seconds(l.value("timeout_s", static_cast<int>(cfg.llm.timeout.count())));
    }
    if (doc.contains("user_zone")) {
      const auto z = doc["user_zone"].get<std::vector<double>>();
      if (z.size() != 3) throw ParseError("run config: user_zone needs 3 values");
      cfg.user_zone = Vec3(z[0], z[1], z[2]);
    }
  } catch (const json::exception& ex) {
    throw ParseError(std::string("run config: ") + ex.what());
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open run config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& ex) {
    throw ParseError(std::string("run config: ") + ex.what());
  }
}

json RunConfig::to_json() const {
  return {{"noise", noise.to_json()},
          {"gripper", gripper.to_json()},
          {"workspace", workspace.to_json()},
          {"extrinsics", extrinsics.to_json()},
          {"grasp",
           {{"rim_engage", grasp.rim_engage},
            {"rim_thickness", grasp.rim_thickness},
            {"bottle_opening_margin", grasp.bottle_opening_margin},
            {"clear_height", grasp.clear_height},
            {"z_tol", grasp.z_tol}}},
          {"llm_failure",
           {{"mode", std::string(to_string(llm_failure.mode))},
            {"probability", llm_failure.probability},
            {"seed", llm_failure.seed}}},
          {"llm",
           {{"base_url", llm.base_url},
            {"model", llm.model_id},
            {"temperature", llm.temperature},
            {"api_key_env", llm.api_key_env},
            {"retries", llm.retries},
            {"timeout_s", llm.timeout.count()}}},
          {"user_zone", {user_zone.x(), user_zone.y(), user_zone.z()}}};
}

}  // namespace walle
