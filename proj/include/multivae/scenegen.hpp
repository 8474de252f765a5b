#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "multivae/rng.hpp"
#include "multivae/types.hpp"

namespace multivae::scene {

using Vec3 = std::array<double, 3>;

enum class ObjectKind { apple, lemon, soap };
enum class Task { reach, lift, move_left, move_right, reach_lift_insert, reach_lift_insert_close };
enum class Variability { fixed, var1, var2, var3 };

std::string to_string(ObjectKind k);
std::string to_string(Task t);
std::string to_string(Variability v);
ObjectKind object_kind_from_string(const std::string& s);
Task task_from_string(const std::string& s);
Variability variability_from_string(const std::string& s);

inline bool task_needs_drawer(Task t) {
  return t == Task::reach_lift_insert || t == Task::reach_lift_insert_close;
}

// ------------------------------------------------------------------ geometry
// The paper publishes none of its table coordinates; everything below is an
// artifact decision sized so a 10 cm displacement spans ~13 pixels at 64x64.
constexpr double kNominalTargetX = 0.0;
constexpr double kNominalTargetY = 0.10;
constexpr double kPositionJitter = 0.05;       // var1/var2/var3 position range
constexpr double kBaseOffsetRange = 0.20;      // var3 robot base +-20 cm
constexpr double kMinSeparation = 0.08;
constexpr int kMaxPlacementAttempts = 1000;

constexpr double kHomeX = -0.20;
constexpr double kHomeZ = 0.15;
constexpr double kSpeedPerStep = 0.02;         // m of EE travel per timestep
constexpr double kWaypointJitter = 0.005;
constexpr double kLiftHeight = 0.12;
constexpr double kMoveLateral = 0.12;
constexpr double kAttachRadius = 0.04;

constexpr double kDrawerNominalX = 0.14;
constexpr double kDrawerNominalY = -0.12;
constexpr double kDrawerCavityHalfX = 0.05;
constexpr double kDrawerCavityHalfY = 0.04;
constexpr double kDrawerRim = 0.012;
constexpr double kDrawerFloorZ = 0.005;
constexpr double kDrawerHandleOffset = 0.075;  // handle sits left (-x) of the cavity centre
constexpr double kDrawerHandleZ = 0.03;
constexpr double kDrawerTravel = 0.10;         // +x push distance that closes it
constexpr double kDrawerEngageRadius = 0.02;

// Rendered view window: 0.5 m across 64 px (pitch 0.0078125 m), shifted so a
// slice of the robot base at x = -0.30 stays visible.
constexpr double kViewMinX = -0.30;
constexpr double kViewMaxX = 0.20;
constexpr double kViewMinY = -0.25;
constexpr double kViewMaxY = 0.25;

double object_radius(ObjectKind k);   // bounding radius in the table plane
double object_center_z(ObjectKind k); // resting centroid height

struct SceneObject {
  ObjectKind kind;
  double x = 0, y = 0;
};

struct DrawerSpec {
  double x = 0, y = 0;
  bool open = true;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  int target_index = 0;
  double robot_base_y = 0.0;
  std::optional<DrawerSpec> drawer;
  Task task = Task::reach;
  Variability variability = Variability::fixed;

  const SceneObject& target() const { return objects[static_cast<std::size_t>(target_index)]; }
  void validate() const;
};

struct Thresholds {
  double reach_m = 0.06;
  double move_m = 0.10;
  double lift_m = 0.10;
};

struct EpisodeRecord {
  ImageTensor image;
  TokenSequence instruction;
  Trajectory trajectory;
  SceneSpec scene;
  Thresholds thresholds;
};

/// One cell of the dataset grid: which tasks the model must represent, how
/// many distractors share the scene, and how much the poses vary.
struct DatasetConfig {
  std::string name;
  std::vector<Task> tasks = {Task::reach};
  int n_distractors = 0;
  Variability variability = Variability::fixed;

  void validate() const;
  std::string to_json() const;
  static DatasetConfig from_json(const std::string& text);
  static DatasetConfig from_file(const std::string& path);
};

// ---------------------------------------------------------------- operations

SceneSpec sample_scene(const DatasetConfig& config, Rng& rng);

ImageTensor render_topview(const SceneSpec& scene);

Trajectory synthesize_trajectory(const SceneSpec& scene, Rng& rng);

TokenSequence make_instruction(const SceneSpec& scene, const Vocabulary& vocab);

struct SimOutcome {
  std::vector<Vec3> object_positions;  // final centroid per object
  bool drawer_closed = false;
  double min_target_distance = 0.0;    // min over steps, EE to target centroid
  double max_target_height_gain = 0.0;
  Vec3 target_displacement = {0, 0, 0};
};

/// Kinematic attachment model standing in for grasp physics: a close gripper
/// within kAttachRadius rigidly couples the nearest object to the EE; release
/// drops it to the table (or the drawer floor when above the cavity); pushing
/// past the handle by the travel distance closes the drawer.
SimOutcome simulate_kinematics(const SceneSpec& scene, const Trajectory& traj);

struct SuccessReport {
  bool success = false;
  double final_distance_m = 0.0;       // min EE-target distance over steps
  Vec3 displacement_m = {0, 0, 0};
  bool aux_ok = false;                 // the parts of the rule other than reach distance
  bool drawer_closed = false;
};

SuccessReport check_success(const SceneSpec& scene, const Trajectory& traj,
                            const Thresholds& thresholds = {});

/// Re-evaluates a stored report at a different reach threshold. Only the
/// reach-distance criterion moves; every other task rule is threshold-free.
bool success_at_threshold(const SuccessReport& report, Task task, double reach_threshold);

}  // namespace multivae::scene
