#include "multivae/scenegen.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace multivae::scene {

using nlohmann::json;

std::string to_string(ObjectKind k) {
  switch (k) {
    case ObjectKind::apple: return "apple";
    case ObjectKind::lemon: return "lemon";
    case ObjectKind::soap: return "soap";
  }
  throw ConfigError("unknown object kind");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::reach: return "reach";
    case Task::lift: return "lift";
    case Task::move_left: return "move_left";
    case Task::move_right: return "move_right";
    case Task::reach_lift_insert: return "reach_lift_insert";
    case Task::reach_lift_insert_close: return "reach_lift_insert_close";
  }
  throw ConfigError("unknown task");
}

std::string to_string(Variability v) {
  switch (v) {
    case Variability::fixed: return "fixed";
    case Variability::var1: return "var1";
    case Variability::var2: return "var2";
    case Variability::var3: return "var3";
  }
  throw ConfigError("unknown variability");
}

ObjectKind object_kind_from_string(const std::string& s) {
  if (s == "apple") return ObjectKind::apple;
  if (s == "lemon") return ObjectKind::lemon;
  if (s == "soap") return ObjectKind::soap;
  throw ConfigError("unknown object kind: " + s);
}

Task task_from_string(const std::string& s) {
  if (s == "reach") return Task::reach;
  if (s == "lift" || s == "reach_lift") return Task::lift;
  if (s == "move_left") return Task::move_left;
  if (s == "move_right") return Task::move_right;
  if (s == "reach_lift_insert") return Task::reach_lift_insert;
  if (s == "reach_lift_insert_close") return Task::reach_lift_insert_close;
  throw ConfigError("unknown task: " + s);
}

Variability variability_from_string(const std::string& s) {
  if (s == "fixed") return Variability::fixed;
  if (s == "var1") return Variability::var1;
  if (s == "var2") return Variability::var2;
  if (s == "var3") return Variability::var3;
  throw ConfigError("unknown variability: " + s);
}

double object_radius(ObjectKind k) {
  switch (k) {
    case ObjectKind::apple: return 0.030;
    case ObjectKind::lemon: return 0.035;
    case ObjectKind::soap: return 0.025;
  }
  return 0.03;
}

double object_center_z(ObjectKind k) {
  switch (k) {
    case ObjectKind::apple: return 0.030;
    case ObjectKind::lemon: return 0.022;
    case ObjectKind::soap: return 0.015;
  }
  return 0.02;
}

void SceneSpec::validate() const {
  if (objects.empty()) throw GenerationError("scene: no objects");
  if (target_index < 0 || target_index >= static_cast<int>(objects.size()))
    throw GenerationError("scene: target index out of range");
  for (const auto& o : objects) {
    if (std::abs(o.x) > kWorkspaceHalf || std::abs(o.y) > kWorkspaceHalf)
      throw GenerationError("scene: object outside workspace");
  }
  for (std::size_t i = 0; i < objects.size(); ++i)
    for (std::size_t j = i + 1; j < objects.size(); ++j) {
      const double dx = objects[i].x - objects[j].x, dy = objects[i].y - objects[j].y;
      if (std::sqrt(dx * dx + dy * dy) < kMinSeparation - 1e-12)
        throw GenerationError("scene: objects closer than the separation minimum");
    }
  if (task_needs_drawer(task) != drawer.has_value())
    throw GenerationError("scene: drawer present iff the task requires it");
}

void DatasetConfig::validate() const {
  if (tasks.empty()) throw ConfigError("dataset config: tasks must not be empty");
  if (n_distractors < 0 || n_distractors > 2)
    throw ConfigError("dataset config: distractors must be 0..2");
  for (Task t : tasks)
    if (task_needs_drawer(t) && n_distractors != 0)
      throw ConfigError("dataset config: drawer tasks use distractor-free scenes");
  if (variability == Variability::fixed)
    for (Task t : tasks)
      if (task_needs_drawer(t))
        throw ConfigError("dataset config: drawer tasks require positional variability");
}

std::string DatasetConfig::to_json() const {
  json tasks_j = json::array();
  for (Task t : tasks) tasks_j.push_back(scene::to_string(t));
  json j{{"name", name},
         {"tasks", tasks_j},
         {"distractors", n_distractors},
         {"variability", scene::to_string(variability)}};
  return j.dump(2);
}

DatasetConfig DatasetConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("dataset config: invalid JSON: ") + e.what());
  }
  DatasetConfig c;
  c.name = j.at("name").get<std::string>();
  c.tasks.clear();
  for (const auto& t : j.at("tasks")) c.tasks.push_back(task_from_string(t.get<std::string>()));
  c.n_distractors = j.at("distractors").get<int>();
  c.variability = variability_from_string(j.at("variability").get<std::string>());
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k != "name" && k != "tasks" && k != "distractors" && k != "variability")
      throw ConfigError("dataset config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

DatasetConfig DatasetConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("dataset config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// ---------------------------------------------------------------- sampling

namespace {

struct Nominal {
  double x, y;
};

constexpr Nominal kDistractorNominals[2] = {{-0.14, -0.10}, {0.14, -0.10}};

double jitter_x(Variability v, Rng& rng) {
  if (v == Variability::fixed) return 0.0;
  return rng.uniform(-kPositionJitter, kPositionJitter);
}

double jitter_y(Variability v, Rng& rng) {
  if (v == Variability::fixed || v == Variability::var1) return 0.0;
  return rng.uniform(-kPositionJitter, kPositionJitter);
}

bool placement_ok(const std::vector<SceneObject>& objs) {
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (std::abs(objs[i].x) > kWorkspaceHalf || std::abs(objs[i].y) > kWorkspaceHalf) return false;
    for (std::size_t j = i + 1; j < objs.size(); ++j) {
      const double dx = objs[i].x - objs[j].x, dy = objs[i].y - objs[j].y;
      if (std::sqrt(dx * dx + dy * dy) < kMinSeparation) return false;
    }
  }
  return true;
}

}  // namespace

SceneSpec sample_scene(const DatasetConfig& config, Rng& rng) {
  config.validate();
  SceneSpec s;
  s.variability = config.variability;
  s.task = config.tasks[static_cast<std::size_t>(rng.below(static_cast<int>(config.tasks.size())))];

  const int target_kind = static_cast<int>(rng.below(3));
  std::vector<ObjectKind> kinds = {static_cast<ObjectKind>(target_kind)};
  // distractor kinds differ from the target and from each other
  std::vector<int> pool;
  for (int k = 0; k < 3; ++k)
    if (k != target_kind) pool.push_back(k);
  for (int d = 0; d < config.n_distractors; ++d) {
    const auto pick = static_cast<std::size_t>(rng.below(static_cast<int>(pool.size())));
    kinds.push_back(static_cast<ObjectKind>(pool[pick]));
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }

  for (int attempt = 0;; ++attempt) {
    if (attempt >= kMaxPlacementAttempts)
      throw GenerationError("sample_scene: no valid placement after 1000 attempts");
    std::vector<SceneObject> objs;
    objs.push_back({kinds[0], kNominalTargetX + jitter_x(s.variability, rng),
                    kNominalTargetY + jitter_y(s.variability, rng)});
    for (int d = 0; d < config.n_distractors; ++d)
      objs.push_back({kinds[static_cast<std::size_t>(d + 1)],
                      kDistractorNominals[d].x + jitter_x(s.variability, rng),
                      kDistractorNominals[d].y + jitter_y(s.variability, rng)});
    if (!placement_ok(objs)) continue;
    s.objects = std::move(objs);
    break;
  }
  s.target_index = 0;

  s.robot_base_y = s.variability == Variability::var3
                       ? rng.uniform(-kBaseOffsetRange, kBaseOffsetRange)
                       : 0.0;
  if (task_needs_drawer(s.task)) {
    DrawerSpec d;
    d.x = kDrawerNominalX + jitter_x(s.variability, rng);
    d.y = kDrawerNominalY + jitter_y(s.variability, rng);
    d.open = true;
    s.drawer = d;
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------- rendering

namespace {

constexpr double kPixelPitch = (kViewMaxX - kViewMinX) / static_cast<double>(kImageSize);

struct Rgb {
  double r, g, b;
};

constexpr Rgb kBackground{0.82, 0.82, 0.82};
constexpr Rgb kBaseColor{0.45, 0.45, 0.45};
constexpr Rgb kDrawerBody{0.55, 0.38, 0.20};
constexpr Rgb kDrawerCavity{0.33, 0.21, 0.10};
constexpr Rgb kAppleColor{0.85, 0.10, 0.10};
constexpr Rgb kLemonColor{0.92, 0.85, 0.10};
constexpr Rgb kSoapColor{0.15, 0.25, 0.85};

void put(Tensor& img, Index row, Index col, Rgb c) {
  if (row < 0 || row >= kImageSize || col < 0 || col >= kImageSize) return;
  double* p = img.data() + (row * kImageSize + col) * 3;
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

// Nearest-pixel rasterization: each pixel takes the color of the shape that
// covers its center, later shapes on top.
template <typename Inside>
void fill_shape(Tensor& img, Inside inside, Rgb color) {
  for (Index row = 0; row < kImageSize; ++row) {
    const double y = kViewMaxY - (static_cast<double>(row) + 0.5) * kPixelPitch;
    for (Index col = 0; col < kImageSize; ++col) {
      const double x = kViewMinX + (static_cast<double>(col) + 0.5) * kPixelPitch;
      if (inside(x, y)) put(img, row, col, color);
    }
  }
}

}  // namespace

ImageTensor render_topview(const SceneSpec& scene) {
  scene.validate();
  Tensor img({kImageSize, kImageSize, 3});
  for (Index row = 0; row < kImageSize; ++row)
    for (Index col = 0; col < kImageSize; ++col) put(img, row, col, kBackground);

  // robot base: gray slab at the table edge
  fill_shape(img,
             [&](double x, double y) {
               return x >= -0.36 && x <= -0.24 && std::abs(y - scene.robot_base_y) <= 0.07;
             },
             kBaseColor);

  if (scene.drawer) {
    const DrawerSpec& d = *scene.drawer;
    fill_shape(img,
               [&](double x, double y) {
                 return std::abs(x - d.x) <= kDrawerCavityHalfX + kDrawerRim &&
                        std::abs(y - d.y) <= kDrawerCavityHalfY + kDrawerRim;
               },
               kDrawerBody);
    if (d.open)
      fill_shape(img,
                 [&](double x, double y) {
                   return std::abs(x - d.x) <= kDrawerCavityHalfX &&
                          std::abs(y - d.y) <= kDrawerCavityHalfY;
                 },
                 kDrawerCavity);
  }

  for (const auto& o : scene.objects) {
    switch (o.kind) {
      case ObjectKind::apple:
        fill_shape(img,
                   [&](double x, double y) {
                     const double dx = x - o.x, dy = y - o.y;
                     return dx * dx + dy * dy <= 0.030 * 0.030;
                   },
                   kAppleColor);
        break;
      case ObjectKind::lemon:
        fill_shape(img,
                   [&](double x, double y) {
                     const double dx = (x - o.x) / 0.035, dy = (y - o.y) / 0.022;
                     return dx * dx + dy * dy <= 1.0;
                   },
                   kLemonColor);
        break;
      case ObjectKind::soap:
        fill_shape(img,
                   [&](double x, double y) {
                     return std::abs(x - o.x) <= 0.025 && std::abs(y - o.y) <= 0.015;
                   },
                   kSoapColor);
        break;
    }
  }

  ImageTensor out{std::move(img)};
  out.validate();
  return out;
}

// ------------------------------------------------------------- trajectories

namespace {

struct Waypoint {
  Vec3 pos;
  double grip;
  bool jitter;  // intermediate waypoints receive +-kWaypointJitter
};

double dist3(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::vector<Waypoint> script_waypoints(const SceneSpec& scene) {
  const SceneObject& target = scene.target();
  const double cz = object_center_z(target.kind);
  std::vector<Waypoint> w;
  w.push_back({{kHomeX, scene.robot_base_y, kHomeZ}, 0.0, false});
  w.push_back({{target.x, target.y, kHomeZ}, 0.0, true});   // above target
  w.push_back({{target.x, target.y, cz}, 0.0, true});       // descend to centroid
  if (scene.task == Task::reach) return w;

  const Vec3 grasp = w.back().pos;
  w.push_back({grasp, 1.0, false});  // close the gripper over one step
  Vec3 lifted = grasp;
  lifted[2] += kLiftHeight;
  w.push_back({lifted, 1.0, true});
  if (scene.task == Task::lift) return w;

  if (scene.task == Task::move_left || scene.task == Task::move_right) {
    Vec3 moved = lifted;
    moved[1] += scene.task == Task::move_left ? kMoveLateral : -kMoveLateral;
    w.push_back({moved, 1.0, true});
    return w;
  }

  const DrawerSpec& d = *scene.drawer;
  w.push_back({{d.x, d.y, 0.16}, 1.0, true});                       // transport above drawer
  w.push_back({{d.x, d.y, kDrawerFloorZ + cz}, 1.0, true});         // lower into the cavity
  w.push_back({w.back().pos, 0.0, false});                          // release
  w.push_back({{d.x, d.y, 0.12}, 0.0, true});                       // retract
  if (scene.task == Task::reach_lift_insert) return w;

  const double hx = d.x - kDrawerHandleOffset;
  w.push_back({{hx, d.y, kDrawerHandleZ}, 0.0, true});              // approach the handle
  // overshoot the travel so jitter cannot leave the push short
  w.push_back({{hx + kDrawerTravel + 0.04, d.y, kDrawerHandleZ}, 0.0, true});
  return w;
}

}  // namespace

Trajectory synthesize_trajectory(const SceneSpec& scene, Rng& rng) {
  scene.validate();
  std::vector<Waypoint> waypoints = script_waypoints(scene);
  // apply jitter; dwell steps re-copy the position of their predecessor
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    if (waypoints[i].jitter) {
      for (int c = 0; c < 3; ++c)
        waypoints[i].pos[static_cast<std::size_t>(c)] +=
            rng.uniform(-kWaypointJitter, kWaypointJitter);
    } else {
      waypoints[i].pos = waypoints[i - 1].pos;
    }
  }

  std::vector<std::array<double, 4>> rows;
  rows.push_back({waypoints[0].pos[0], waypoints[0].pos[1], waypoints[0].pos[2], 0.0});
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    const Vec3& a = waypoints[i - 1].pos;
    const Vec3& b = waypoints[i].pos;
    const double len = dist3(a, b);
    const int n = std::max(1, static_cast<int>(std::ceil(len / kSpeedPerStep)));
    for (int s = 1; s <= n; ++s) {
      const double f = static_cast<double>(s) / n;
      rows.push_back({a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]),
                      a[2] + f * (b[2] - a[2]), waypoints[i].grip});
    }
  }

  Trajectory traj;
  const Index t = static_cast<Index>(rows.size());
  traj.steps = Tensor({t, 4});
  for (Index r = 0; r < t; ++r)
    for (Index c = 0; c < 4; ++c)
      traj.steps[r * 4 + c] = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  traj.mask.assign(static_cast<std::size_t>(t), true);
  traj.validate(kDefaultTMax);
  return traj;
}

TokenSequence make_instruction(const SceneSpec& scene, const Vocabulary& vocab) {
  const std::string obj = to_string(scene.target().kind);
  std::vector<std::string> words;
  switch (scene.task) {
    case Task::reach: words = {"reach", "the", obj}; break;
    case Task::lift: words = {"lift", "the", obj}; break;
    case Task::move_left: words = {"move", "left", "the", obj}; break;
    case Task::move_right: words = {"move", "right", "the", obj}; break;
    case Task::reach_lift_insert: words = {"put", "the", obj, "drawer"}; break;
    case Task::reach_lift_insert_close: words = {"put", "the", obj, "close", "drawer"}; break;
  }
  TokenSequence seq;
  for (const auto& w : words) seq.tokens.push_back(vocab.id(w));
  while (static_cast<Index>(seq.tokens.size()) < kDefaultLMax)
    seq.tokens.push_back(vocab.pad_id());
  return seq;
}

// ---------------------------------------------------------------- simulation

SimOutcome simulate_kinematics(const SceneSpec& scene, const Trajectory& traj) {
  scene.validate();
  std::vector<Vec3> obj(scene.objects.size());
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    obj[i] = {scene.objects[i].x, scene.objects[i].y,
              object_center_z(scene.objects[i].kind)};
  const Vec3 initial_target = obj[static_cast<std::size_t>(scene.target_index)];

  int attached = -1;
  Vec3 attach_offset = {0, 0, 0};
  bool drawer_closed = false;
  bool handle_engaged = false;
  double engage_x = 0.0;
  double prev_grip = 0.0;
  SimOutcome out;
  out.min_target_distance = 1e9;
  out.max_target_height_gain = 0.0;

  const auto inside_cavity = [&](double x, double y) {
    if (!scene.drawer) return false;
    return std::abs(x - scene.drawer->x) <= kDrawerCavityHalfX &&
           std::abs(y - scene.drawer->y) <= kDrawerCavityHalfY;
  };

  for (Index t = 0; t < traj.length(); ++t) {
    if (!traj.mask[static_cast<std::size_t>(t)]) continue;
    const Vec3 ee = {traj.steps[t * 4 + 0], traj.steps[t * 4 + 1], traj.steps[t * 4 + 2]};
    for (int c = 0; c < 3; ++c)
      if (!std::isfinite(ee[static_cast<std::size_t>(c)]))
        throw InvalidTrajectoryError("simulate_kinematics: non-finite trajectory value");
    const double grip = traj.steps[t * 4 + 3];
    if (!std::isfinite(grip))
      throw InvalidTrajectoryError("simulate_kinematics: non-finite gripper value");
    const bool closed = grip > 0.5;
    const bool was_closed = prev_grip > 0.5;

    if (closed && !was_closed && attached < 0) {
      // attach the nearest object within reach at the closing instant
      double best = kAttachRadius;
      for (std::size_t i = 0; i < obj.size(); ++i) {
        const double d = dist3(ee, obj[i]);
        if (d <= best) {
          best = d;
          attached = static_cast<int>(i);
        }
      }
      if (attached >= 0)
        for (int c = 0; c < 3; ++c)
          attach_offset[static_cast<std::size_t>(c)] =
              obj[static_cast<std::size_t>(attached)][static_cast<std::size_t>(c)] -
              ee[static_cast<std::size_t>(c)];
    }
    if (!closed && was_closed && attached >= 0) {
      Vec3& o = obj[static_cast<std::size_t>(attached)];
      const ObjectKind kind = scene.objects[static_cast<std::size_t>(attached)].kind;
      o[2] = inside_cavity(o[0], o[1]) ? kDrawerFloorZ + object_center_z(kind)
                                       : object_center_z(kind);
      attached = -1;
    }
    if (attached >= 0)
      for (int c = 0; c < 3; ++c)
        obj[static_cast<std::size_t>(attached)][static_cast<std::size_t>(c)] =
            ee[static_cast<std::size_t>(c)] + attach_offset[static_cast<std::size_t>(c)];

    if (scene.drawer && !drawer_closed && attached < 0) {
      const Vec3 handle = {scene.drawer->x - kDrawerHandleOffset, scene.drawer->y,
                           kDrawerHandleZ};
      if (!handle_engaged && dist3(ee, handle) <= kDrawerEngageRadius) {
        handle_engaged = true;
        engage_x = ee[0];
      }
      if (handle_engaged && ee[0] - engage_x >= kDrawerTravel) drawer_closed = true;
    }

    const Vec3& tgt = obj[static_cast<std::size_t>(scene.target_index)];
    out.min_target_distance = std::min(out.min_target_distance, dist3(ee, tgt));
    out.max_target_height_gain =
        std::max(out.max_target_height_gain, tgt[2] - initial_target[2]);
    prev_grip = grip;
  }

  out.object_positions = obj;
  out.drawer_closed = drawer_closed;
  const Vec3& final_target = obj[static_cast<std::size_t>(scene.target_index)];
  for (int c = 0; c < 3; ++c)
    out.target_displacement[static_cast<std::size_t>(c)] =
        final_target[static_cast<std::size_t>(c)] - initial_target[static_cast<std::size_t>(c)];
  return out;
}

SuccessReport check_success(const SceneSpec& scene, const Trajectory& traj,
                            const Thresholds& th) {
  SimOutcome sim = simulate_kinematics(scene, traj);
  SuccessReport r;
  r.final_distance_m = sim.min_target_distance;
  r.displacement_m = sim.target_displacement;
  r.drawer_closed = sim.drawer_closed;

  const bool lifted = sim.max_target_height_gain >= th.lift_m;
  const Vec3& final_target = sim.object_positions[static_cast<std::size_t>(scene.target_index)];
  bool inserted = false;
  if (scene.drawer) {
    const ObjectKind kind = scene.objects[static_cast<std::size_t>(scene.target_index)].kind;
    const bool inside = std::abs(final_target[0] - scene.drawer->x) <= kDrawerCavityHalfX &&
                        std::abs(final_target[1] - scene.drawer->y) <= kDrawerCavityHalfY;
    const bool at_floor =
        std::abs(final_target[2] - (kDrawerFloorZ + object_center_z(kind))) <= 0.01;
    inserted = inside && at_floor;
  }

  switch (scene.task) {
    case Task::reach:
      r.aux_ok = true;
      break;
    case Task::lift:
      r.aux_ok = lifted;
      break;
    case Task::move_left:
      r.aux_ok = lifted && sim.target_displacement[1] >= th.move_m;
      break;
    case Task::move_right:
      r.aux_ok = lifted && sim.target_displacement[1] <= -th.move_m;
      break;
    case Task::reach_lift_insert:
      r.aux_ok = inserted;
      break;
    case Task::reach_lift_insert_close:
      r.aux_ok = inserted && sim.drawer_closed;
      break;
  }
  r.success = success_at_threshold(r, scene.task, th.reach_m);
  return r;
}

bool success_at_threshold(const SuccessReport& report, Task task, double reach_threshold) {
  if (task == Task::reach) return report.final_distance_m < reach_threshold;
  return report.aux_ok;
}

}  // namespace multivae::scene
