#include "ate/env/planar_arm.hpp"

#include <algorithm>
#include <cmath>

#include "ate/errors.hpp"
#include "ate/rng.hpp"

namespace ate::env {
namespace {

constexpr double kDamping = 0.05;
constexpr double kMaxTaskStep = 0.04;  // m of end-effector motion requested per step
constexpr double kSafeRadius = 0.2;
constexpr double kDetourRadius = 0.5;

Eigen::Vector2d polar(double r, double theta) {
  return {r * std::cos(theta), r * std::sin(theta)};
}

// Where the end-effector should go next for this task.
Eigen::Vector2d goal_for(const EmbodimentSpec& arm, const EnvState& s, const TaskSpec& task) {
  if (task.kind() == TaskKind::reach) return s.target;
  const Eigen::Vector2d ee = forward_kinematics(arm, s.joint_angles);
  if ((ee - s.block).norm() <= kContactRadius) {
    // Carrying: keep the contact offset so the block lands on the target.
    return s.target + (ee - s.block);
  }
  return s.block;
}

// Straight end-effector paths through the base are infeasible for arms with
// an inner dead zone, so paths that would pass near it detour around.
Eigen::Vector2d detour(const Eigen::Vector2d& from, const Eigen::Vector2d& to) {
  const Eigen::Vector2d d = to - from;
  const double len2 = d.squaredNorm();
  if (len2 < 1e-12) return to;
  const double t = std::clamp(-from.dot(d) / len2, 0.0, 1.0);
  if ((from + t * d).norm() >= kSafeRadius) return to;
  Eigen::Vector2d mid = from.normalized() + to.normalized();
  if (mid.norm() < 1e-6) mid = Eigen::Vector2d(-from.y(), from.x());
  return kDetourRadius * mid.normalized();
}

}  // namespace

TaskSpec reach_task() { return TaskSpec{0, 0.05, 100}; }
TaskSpec push_task() { return TaskSpec{1, 0.05, 150}; }

double wrap_angle(double a) {
  if (a >= -M_PI && a <= M_PI) return a;
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

Eigen::Vector2d forward_kinematics(const EmbodimentSpec& arm, const Eigen::VectorXd& angles) {
  if (angles.size() != arm.dof) throw DimensionError("forward_kinematics: angle count != dof");
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  double theta = 0.0;
  for (int i = 0; i < arm.dof; ++i) {
    theta += angles(i);
    p += polar(arm.link_lengths[static_cast<std::size_t>(i)], theta);
  }
  return p;
}

Eigen::MatrixXd jacobian(const EmbodimentSpec& arm, const Eigen::VectorXd& angles) {
  if (angles.size() != arm.dof) throw DimensionError("jacobian: angle count != dof");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, arm.dof);
  double theta = 0.0;
  for (int i = 0; i < arm.dof; ++i) {
    theta += angles(i);
    const double l = arm.link_lengths[static_cast<std::size_t>(i)];
    // Link i moves with every joint j <= i.
    for (int j = 0; j <= i; ++j) {
      J(0, j) -= l * std::sin(theta);
      J(1, j) += l * std::cos(theta);
    }
  }
  return J;
}

EnvState reset(const EmbodimentSpec& arm, const TaskSpec& task, uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5EED));
  EnvState s;
  s.joint_angles.resize(arm.dof);
  s.joint_angles(0) = rng.uniform(-M_PI, M_PI);
  for (int i = 1; i < arm.dof; ++i) s.joint_angles(i) = rng.uniform(-0.8, 0.8);
  s.target = polar(rng.uniform(kGoalRadiusMin, kGoalRadiusMax), rng.uniform(-M_PI, M_PI));
  if (task.kind() == TaskKind::push) {
    do {
      s.block = polar(rng.uniform(kGoalRadiusMin, kGoalRadiusMax), rng.uniform(-M_PI, M_PI));
    } while ((s.block - s.target).norm() < 0.25);
  } else {
    s.block = s.target;
  }
  s.step = 0;
  return s;
}

EnvState step(const EmbodimentSpec& arm, const EnvState& state, const Eigen::VectorXd& action) {
  if (action.size() != arm.dof) {
    throw DimensionError("step: action has " + std::to_string(action.size()) +
                         " entries, arm has dof " + std::to_string(arm.dof));
  }
  EnvState next = state;
  const Eigen::Vector2d ee_before = forward_kinematics(arm, state.joint_angles);
  for (int i = 0; i < arm.dof; ++i) {
    const double d = std::clamp(action(i), -kMaxJointDelta, kMaxJointDelta);
    next.joint_angles(i) = wrap_angle(state.joint_angles(i) + d);
  }
  const Eigen::Vector2d ee_after = forward_kinematics(arm, next.joint_angles);
  if ((ee_before - state.block).norm() <= kContactRadius) {
    next.block = state.block + (ee_after - ee_before);
    next.block = next.block.cwiseMax(-kWorkspaceHalfWidth).cwiseMin(kWorkspaceHalfWidth);
  }
  next.step = state.step + 1;
  return next;
}

bool success(const EmbodimentSpec& arm, const EnvState& state, const TaskSpec& task) {
  const Eigen::Vector2d tracked =
      task.kind() == TaskKind::reach ? forward_kinematics(arm, state.joint_angles) : state.block;
  return (tracked - state.target).norm() <= task.tolerance;
}

Eigen::VectorXd scripted_expert(const EmbodimentSpec& arm, const EnvState& state,
                                const TaskSpec& task) {
  const Eigen::Vector2d ee = forward_kinematics(arm, state.joint_angles);
  const Eigen::Vector2d goal = goal_for(arm, state, task);
  Eigen::Vector2d err = detour(ee, goal) - ee;
  if (task.kind() == TaskKind::push && (ee - state.block).norm() <= kContactRadius) {
    // Route the carried block, not the end-effector, around the base.
    err = detour(state.block, state.target) - state.block;
  }
  if (err.norm() > kMaxTaskStep) err *= kMaxTaskStep / err.norm();
  const Eigen::MatrixXd J = jacobian(arm, state.joint_angles);
  const Eigen::Matrix2d JJt = J * J.transpose() + kDamping * kDamping * Eigen::Matrix2d::Identity();
  Eigen::VectorXd dq = J.transpose() * JJt.ldlt().solve(err);
  const double peak = dq.cwiseAbs().maxCoeff();
  if (peak > kMaxJointDelta) dq *= kMaxJointDelta / peak;
  return dq;
}

}  // namespace ate::env
