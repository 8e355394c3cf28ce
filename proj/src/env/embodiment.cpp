#include "ate/env/embodiment.hpp"

#include <algorithm>
#include <numeric>

#include "ate/errors.hpp"

namespace ate {

void EmbodimentSpec::validate() const {
  if (dof <= 0) throw ConfigError("embodiment '" + id + "': dof must be positive");
  if (static_cast<int>(link_lengths.size()) != dof) {
    throw ConfigError("embodiment '" + id + "': link count differs from dof");
  }
  for (double l : link_lengths) {
    if (!(l > 0.0)) throw ConfigError("embodiment '" + id + "': link lengths must be > 0");
  }
  if (action_dim != dof) {
    throw ConfigError("embodiment '" + id + "': action_dim must equal dof for " +
                      to_string(action_repr));
  }
}

double EmbodimentSpec::reach() const {
  return std::accumulate(link_lengths.begin(), link_lengths.end(), 0.0);
}

double EmbodimentSpec::inner_reach() const {
  const double longest = *std::max_element(link_lengths.begin(), link_lengths.end());
  return std::max(0.0, 2.0 * longest - reach());
}

EmbodimentSpec EmbodimentSpec::planar(const std::string& id, std::vector<double> links,
                                      ActionRepr repr) {
  EmbodimentSpec e;
  e.id = id;
  e.dof = static_cast<int>(links.size());
  e.link_lengths = std::move(links);
  e.action_repr = repr;
  e.action_dim = e.dof;
  e.validate();
  return e;
}

EmbodimentSpec two_link_arm() { return EmbodimentSpec::planar("planar2", {0.5, 0.4}); }
EmbodimentSpec three_link_arm() { return EmbodimentSpec::planar("planar3", {0.4, 0.3, 0.25}); }
EmbodimentSpec four_link_arm() {
  return EmbodimentSpec::planar("planar4", {0.3, 0.25, 0.2, 0.15});
}

const char* to_string(ActionRepr repr) {
  return repr == ActionRepr::joint_deltas ? "joint_deltas" : "joint_positions";
}

ActionRepr action_repr_from_string(const std::string& s) {
  if (s == "joint_deltas") return ActionRepr::joint_deltas;
  if (s == "joint_positions") return ActionRepr::joint_positions;
  throw ConfigError("unknown action representation '" + s + "'");
}

}  // namespace ate
