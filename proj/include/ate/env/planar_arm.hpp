#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "ate/env/embodiment.hpp"

namespace ate::env {

enum class TaskKind : int { reach = 0, push = 1 };

struct TaskSpec {
  int task_id = 0;
  double tolerance = 0.05;  // meters
  int max_steps = 100;

  TaskKind kind() const { return static_cast<TaskKind>(task_id); }
};

TaskSpec reach_task();
TaskSpec push_task();

inline constexpr double kMaxJointDelta = 0.1;   // rad per step
inline constexpr double kContactRadius = 0.05;  // m
inline constexpr double kWorkspaceHalfWidth = 1.0;

struct EnvState {
  Eigen::VectorXd joint_angles;
  Eigen::Vector2d block = Eigen::Vector2d::Zero();
  Eigen::Vector2d target = Eigen::Vector2d::Zero();
  int step = 0;
};

double wrap_angle(double a);

// End-effector position; zero angles put the arm along +x.
Eigen::Vector2d forward_kinematics(const EmbodimentSpec& arm, const Eigen::VectorXd& angles);
// 2 x dof positional Jacobian of the end-effector.
Eigen::MatrixXd jacobian(const EmbodimentSpec& arm, const Eigen::VectorXd& angles);

// Randomized episode start. Targets and blocks lie in an annulus every arm
// of the suite can reach; the same seed gives the same state.
EnvState reset(const EmbodimentSpec& arm, const TaskSpec& task, uint64_t seed);

// Applies joint deltas clamped to +-kMaxJointDelta. A block within
// kContactRadius of the end-effector moves rigidly with it.
EnvState step(const EmbodimentSpec& arm, const EnvState& state, const Eigen::VectorXd& action);

bool success(const EmbodimentSpec& arm, const EnvState& state, const TaskSpec& task);

// One damped-least-squares IK step toward the task goal, already clamped.
Eigen::VectorXd scripted_expert(const EmbodimentSpec& arm, const EnvState& state,
                                const TaskSpec& task);

// Annulus the reset draws from.
inline constexpr double kGoalRadiusMin = 0.3;
inline constexpr double kGoalRadiusMax = 0.7;

}  // namespace ate::env
