#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "walle/geometry.hpp"

namespace walle {

enum class Category { bottle, bowl, mug };

inline constexpr Category kCategories[] = {Category::bottle, Category::bowl, Category::mug};

std::string_view to_string(Category c);
std::optional<Category> category_from_string(std::string_view text);

/// Closed lowercase colour vocabulary shared by catalog, grounding and the command grammar.
inline constexpr std::string_view kColors[] = {"white", "black",  "red",  "green", "blue",  "yellow",
                                               "purple", "orange", "pink", "brown", "gray", "transparent"};

bool is_known_color(std::string_view token);

enum class ObjectState { on_table, grasped, delivered, toppled };

std::string_view to_string(ObjectState s);

struct ObjectTemplate {
  std::string name;
  Category category = Category::bottle;
  std::string color;
  Extents extents;
  double body_diameter = 0.0;  // graspable caliber
  std::string semantic;
};

struct Catalog {
  std::vector<ObjectTemplate> entries;
};

/// Throws ParseError for malformed JSON or schema mismatch, InvariantError for bad values.
Catalog load_catalog(const std::filesystem::path& path);
Catalog parse_catalog(std::string_view json_text);

struct ObjectInstance {
  std::string id;
  std::string name;
  Category category = Category::bottle;
  std::string color;
  Pose pose;  // robot_base frame, translation = OBB centre
  Extents extents;
  double body_diameter = 0.0;
  std::string semantic;
  ObjectState state = ObjectState::on_table;

  Obb obb() const { return Obb::from(pose, extents); }
  double base_z() const { return pose.translation().z() - extents.height / 2.0; }
  double top_z() const { return pose.translation().z() + extents.height / 2.0; }
};

struct Table {
  double x_min = 0.2;
  double x_max = 1.0;
  double y_min = -0.3;
  double y_max = 0.3;
  double surface_z = 0.0;

  bool contains(const Vec2& p) const {
    return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
  }
};

inline constexpr double kUprightToleranceRad = 2.0 * 3.14159265358979323846 / 180.0;

/// Immutable snapshot of the tabletop. Mutations return a new Scene.
struct Scene {
  Table table;
  std::vector<ObjectInstance> objects;
  std::uint64_t rng_seed = 0;
  /// on_table records saved by the first event that moved an object off the table.
  std::map<std::string, ObjectInstance> saved_records;

  const ObjectInstance* find(std::string_view id) const;
  const ObjectInstance& at(std::string_view id) const;  // throws NotFoundError
};

struct SamplingOptions {
  Table table;
  double min_clearance = 0.01;
  int max_retries = 1000;
};

/// n distinct catalog templates placed upright with random yaw, footprints inside the
/// table and pairwise separated by at least min_clearance. Pure in (catalog, n, seed).
Scene sample_scene(const Catalog& catalog, std::size_t n, std::uint64_t seed,
                   const SamplingOptions& options = {});

/// Checks footprint containment, clearance, upright convention and id uniqueness.
void validate_scene(const Scene& scene, double min_clearance = 0.01);

/// True iff the table-plane projections of the two OBBs intersect.
bool footprint_overlap(const ObjectInstance& a, const ObjectInstance& b);

/// Same test with both footprints grown by margin/2 on every side.
bool footprints_within(const ObjectInstance& a, const ObjectInstance& b, double margin);

struct EnvironmentEntry {
  std::string name;
  std::string color;
  Category category = Category::bottle;
  std::string semantic;

  bool operator==(const EnvironmentEntry&) const = default;
};

struct EnvironmentDict {
  nlohmann::json value;

  /// Canonical text: sorted keys, objects in scene order, no whitespace.
  std::string text() const { return value.dump(); }
};

EnvironmentDict to_environment_dict(const Scene& scene);
std::vector<EnvironmentEntry> parse_environment_dict(std::string_view text);

struct SceneEvent {
  enum class Kind { delivered, restored, toppled };
  Kind kind = Kind::delivered;
  std::string id;

  static SceneEvent delivered(std::string id) { return {Kind::delivered, std::move(id)}; }
  static SceneEvent restored(std::string id) { return {Kind::restored, std::move(id)}; }
  static SceneEvent toppled(std::string id) { return {Kind::toppled, std::move(id)}; }
};

Scene apply_event(const Scene& scene, const SceneEvent& event);

nlohmann::json scene_to_json(const Scene& scene);

}  // namespace walle
