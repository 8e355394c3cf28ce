#pragma once

#include <string>
#include <vector>

namespace ate {

enum class ActionRepr { joint_deltas, joint_positions };

// A planar serial arm. Both action representations carry one value per joint.
struct EmbodimentSpec {
  std::string id;
  int dof = 0;
  std::vector<double> link_lengths;
  ActionRepr action_repr = ActionRepr::joint_deltas;
  int action_dim = 0;

  // Throws ConfigError when the invariants do not hold.
  void validate() const;
  double reach() const;
  double inner_reach() const;

  static EmbodimentSpec planar(const std::string& id, std::vector<double> links,
                               ActionRepr repr = ActionRepr::joint_deltas);
};

// Default embodiment suite: 2- and 3-link arms for pre-training, 4-link target.
EmbodimentSpec two_link_arm();
EmbodimentSpec three_link_arm();
EmbodimentSpec four_link_arm();

const char* to_string(ActionRepr repr);
ActionRepr action_repr_from_string(const std::string& s);

}  // namespace ate
