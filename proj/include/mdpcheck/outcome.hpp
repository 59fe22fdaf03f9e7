#ifndef MDPCHECK_OUTCOME_HPP_
#define MDPCHECK_OUTCOME_HPP_

#include <optional>
#include <string_view>

namespace mdpcheck {

/// Outcome of the feature-analysis decision flow.
enum class Outcome {
  NoRewardSignal,       // no state feature predicts reward: bandit at best
  NoActionControl,      // reward features exist but actions cannot move them
  PotentiallySuitable,  // some reward feature is also action-sensitive
};

constexpr std::string_view to_string(Outcome o) noexcept {
  switch (o) {
    case Outcome::NoRewardSignal: return "NoRewardSignal";
    case Outcome::NoActionControl: return "NoActionControl";
    case Outcome::PotentiallySuitable: return "PotentiallySuitable";
  }
  return "?";
}

inline std::optional<Outcome> outcome_from_string(std::string_view s) noexcept {
  for (Outcome o : {Outcome::NoRewardSignal, Outcome::NoActionControl,
                    Outcome::PotentiallySuitable}) {
    if (to_string(o) == s) return o;
  }
  return std::nullopt;
}

}  // namespace mdpcheck

#endif  // MDPCHECK_OUTCOME_HPP_
