#include "walle/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "walle/errors.hpp"
#include "walle/rng.hpp"

namespace walle {

using nlohmann::json;

std::string_view to_string(Category c) {
  switch (c) {
    case Category::bottle:
      return "bottle";
    case Category::bowl:
      return "bowl";
    case Category::mug:
      return "mug";
  }
  return "unknown";
}

std::optional<Category> category_from_string(std::string_view text) {
  for (auto c : kCategories) {
    if (to_string(c) == text) return c;
  }
  return std::nullopt;
}

bool is_known_color(std::string_view token) {
  return std::find(std::begin(kColors), std::end(kColors), token) != std::end(kColors);
}

std::string_view to_string(ObjectState s) {
  switch (s) {
    case ObjectState::on_table:
      return "on_table";
    case ObjectState::grasped:
      return "grasped";
    case ObjectState::delivered:
      return "delivered";
    case ObjectState::toppled:
      return "toppled";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Catalog

namespace {

ObjectTemplate parse_template(const json& e, std::size_t index) {
  auto where = [&](std::string_view what) { return fmt::format("catalog entry {}: {}", index, what); };
  if (!e.is_object()) throw ParseError(where("not an object"));
  ObjectTemplate t;
  try {
    t.name = e.at("name").get<std::string>();
    const auto cat = e.at("category").get<std::string>();
    auto parsed = category_from_string(cat);
    if (!parsed) throw InvariantError(where("unknown category '" + cat + "'"));
    t.category = *parsed;
    t.color = e.at("color").get<std::string>();
    const auto& ext = e.at("extents");
    t.extents = {ext.at("w").get<double>(), ext.at("d").get<double>(), ext.at("h").get<double>()};
    t.body_diameter = e.at("body_diameter").get<double>();
    t.semantic = e.at("semantic").get<std::string>();
  } catch (const json::exception& ex) {
    throw ParseError(where(ex.what()));
  }
  if (t.name.empty()) throw InvariantError(where("empty name"));
  if (!is_known_color(t.color)) throw InvariantError(where("unknown color '" + t.color + "'"));
  if (!t.extents.valid()) throw InvariantError(where("extents must be strictly positive"));
  if (!(t.body_diameter > 0.0)) throw InvariantError(where("body_diameter must be positive"));
  if (t.body_diameter > std::min(t.extents.width, t.extents.depth) + 1e-12) {
    throw InvariantError(where("body_diameter exceeds footprint"));
  }
  return t;
}

}  // namespace

Catalog parse_catalog(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& ex) {
    throw ParseError(std::string("catalog: ") + ex.what());
  }
  if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array()) {
    throw ParseError("catalog: expected object with 'entries' array");
  }
  Catalog catalog;
  std::set<std::string> names;
  const auto& entries = doc["entries"];
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto t = parse_template(entries[i], i);
    if (!names.insert(t.name).second) throw InvariantError("catalog: duplicate name '" + t.name + "'");
    catalog.entries.push_back(std::move(t));
  }
  return catalog;
}

Catalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open catalog " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_catalog(buf.str());
}

// ---------------------------------------------------------------------------
// Scene

const ObjectInstance* Scene::find(std::string_view id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

const ObjectInstance& Scene::at(std::string_view id) const {
  if (const auto* o = find(id)) return *o;
  throw NotFoundError("unknown object id '" + std::string(id) + "'");
}

bool footprint_overlap(const ObjectInstance& a, const ObjectInstance& b) {
  const auto pa = footprint_polygon(a.obb());
  const auto pb = footprint_polygon(b.obb());
  return convex_polygons_intersect(pa, pb);
}

bool footprints_within(const ObjectInstance& a, const ObjectInstance& b, double margin) {
  auto grow = [margin](const ObjectInstance& o) {
    Obb box = o.obb();
    box.half.x() += margin / 2.0;
    box.half.y() += margin / 2.0;
    return footprint_polygon(box);
  };
  return convex_polygons_intersect(grow(a), grow(b));
}

namespace {

bool footprint_inside_table(const ObjectInstance& o, const Table& table) {
  for (const auto& p : footprint_polygon(o.obb())) {
    if (!table.contains(p)) return false;
  }
  return true;
}

}  // namespace

Scene sample_scene(const Catalog& catalog, std::size_t n, std::uint64_t seed, const SamplingOptions& options) {
  if (n > catalog.entries.size()) {
    throw PreconditionError(fmt::format("cannot sample {} objects from a catalog of {}", n, catalog.entries.size()));
  }
  Scene scene;
  scene.table = options.table;
  scene.rng_seed = seed;

  Rng rng(seed);
  std::vector<std::size_t> order(catalog.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const auto& table = options.table;
  std::uniform_real_distribution<double> ux(table.x_min, table.x_max);
  std::uniform_real_distribution<double> uy(table.y_min, table.y_max);
  std::uniform_real_distribution<double> uyaw(0.0, 2.0 * M_PI);

  for (std::size_t k = 0; k < n; ++k) {
    const auto& t = catalog.entries[order[k]];
    ObjectInstance obj;
    obj.id = fmt::format("obj{:02d}", k + 1);
    obj.name = t.name;
    obj.category = t.category;
    obj.color = t.color;
    obj.extents = t.extents;
    obj.body_diameter = t.body_diameter;
    obj.semantic = t.semantic;
    obj.pose.frame = Frame::robot_base;

    bool placed = false;
    for (int attempt = 0; attempt < options.max_retries && !placed; ++attempt) {
      const double x = ux(rng);
      const double y = uy(rng);
      const double yaw = uyaw(rng);
      obj.pose.transform.rotation = yaw_rotation(yaw);
      obj.pose.transform.translation = Vec3(x, y, table.surface_z + t.extents.height / 2.0);
      if (!footprint_inside_table(obj, table)) continue;
      placed = std::none_of(scene.objects.begin(), scene.objects.end(), [&](const ObjectInstance& other) {
        return footprints_within(obj, other, options.min_clearance);
      });
    }
    if (!placed) {
      throw PlacementError(fmt::format("could not place '{}' after {} retries", t.name, options.max_retries));
    }
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

void validate_scene(const Scene& scene, double min_clearance) {
  std::set<std::string> ids;
  for (const auto& o : scene.objects) {
    if (!ids.insert(o.id).second) throw InvariantError("duplicate object id '" + o.id + "'");
    if (std::abs(o.pose.rotation().norm() - 1.0) > 1e-6) throw InvariantError("non-unit quaternion on " + o.id);
    if (!o.extents.valid()) throw InvariantError("non-positive extents on " + o.id);
  }
  std::vector<const ObjectInstance*> on_table;
  for (const auto& o : scene.objects) {
    if (o.state != ObjectState::on_table) continue;
    if (tilt_from_vertical(o.pose.rotation()) > kUprightToleranceRad) {
      throw InvariantError(o.id + " is on the table but not upright");
    }
    if (!footprint_inside_table(o, scene.table)) throw InvariantError(o.id + " footprint leaves the table");
    on_table.push_back(&o);
  }
  for (std::size_t i = 0; i < on_table.size(); ++i) {
    for (std::size_t j = i + 1; j < on_table.size(); ++j) {
      if (footprints_within(*on_table[i], *on_table[j], min_clearance)) {
        throw InvariantError(on_table[i]->id + " and " + on_table[j]->id + " are closer than the clearance");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Environment dictionary

EnvironmentDict to_environment_dict(const Scene& scene) {
  json objects = json::array();
  for (const auto& o : scene.objects) {
    if (o.state != ObjectState::on_table) continue;
    objects.push_back({{"name", o.name},
                       {"color", o.color},
                       {"category", std::string(to_string(o.category))},
                       {"semantic", o.semantic}});
  }
  EnvironmentDict dict;
  dict.value = {{"assets", json::array({"robot", "table"})}, {"objects", std::move(objects)}};
  return dict;
}

std::vector<EnvironmentEntry> parse_environment_dict(std::string_view text) {
  std::vector<EnvironmentEntry> out;
  try {
    const auto doc = json::parse(text);
    for (const auto& o : doc.at("objects")) {
      EnvironmentEntry e;
      e.name = o.at("name").get<std::string>();
      e.color = o.at("color").get<std::string>();
      const auto cat = category_from_string(o.at("category").get<std::string>());
      if (!cat) throw ParseError("environment: unknown category");
      e.category = *cat;
      e.semantic = o.value("semantic", "");
      out.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw ParseError(std::string("environment: ") + ex.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Events

Scene apply_event(const Scene& scene, const SceneEvent& event) {
  Scene next = scene;
  auto it = std::find_if(next.objects.begin(), next.objects.end(),
                         [&](const ObjectInstance& o) { return o.id == event.id; });
  if (it == next.objects.end()) throw NotFoundError("unknown object id '" + event.id + "'");

  auto save = [&] {
    if (it->state == ObjectState::on_table) next.saved_records.insert_or_assign(it->id, *it);
  };
  switch (event.kind) {
    case SceneEvent::Kind::delivered:
      save();
      it->state = ObjectState::delivered;
      break;
    case SceneEvent::Kind::toppled:
      save();
      it->state = ObjectState::toppled;
      break;
    case SceneEvent::Kind::restored: {
      auto rec = next.saved_records.find(event.id);
      if (rec == next.saved_records.end()) {
        throw PreconditionError("no saved on-table record for '" + event.id + "'");
      }
      *it = rec->second;
      next.saved_records.erase(rec);
      break;
    }
  }
  return next;
}

nlohmann::json scene_to_json(const Scene& scene) {
  json objects = json::array();
  for (const auto& o : scene.objects) {
    const auto& q = o.pose.rotation();
    const auto& t = o.pose.translation();
    objects.push_back({{"id", o.id},
                       {"name", o.name},
                       {"category", std::string(to_string(o.category))},
                       {"color", o.color},
                       {"semantic", o.semantic},
                       {"state", std::string(to_string(o.state))},
                       {"pose",
                        {{"frame", std::string(to_string(o.pose.frame))},
                         {"quaternion", {q.x(), q.y(), q.z(), q.w()}},
                         {"translation", {t.x(), t.y(), t.z()}}}},
                       {"extents", {{"w", o.extents.width}, {"d", o.extents.depth}, {"h", o.extents.height}}},
                       {"body_diameter", o.body_diameter}});
  }
  const auto& tb = scene.table;
  return {{"table",
           {{"x_min", tb.x_min}, {"x_max", tb.x_max}, {"y_min", tb.y_min}, {"y_max", tb.y_max}, {"surface_z", tb.surface_z}}},
          {"objects", std::move(objects)},
          {"rng_seed", scene.rng_seed}};
}

}  // namespace walle
