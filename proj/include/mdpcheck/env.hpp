#ifndef MDPCHECK_ENV_HPP_
#define MDPCHECK_ENV_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdpcheck/error.hpp"
#include "mdpcheck/outcome.hpp"
#include "mdpcheck/rng.hpp"

namespace mdpcheck {

/// Identifies one of the seven constructed environments.
///
///   1  null relation: counters drift, reward is a fair coin
///   2  action -> reward: as 1, but a=1 always pays 1
///   3  action -> state: as 1 when a=1, every counter frozen when a=0
///   4  state -> reward: transitions as 1, reward = [f_0 > 4]
///   5  action -> state -> reward: transitions as 3, reward as 4
///   6  hidden h -> state and reward, actions irrelevant
///   7  hidden h -> state and reward, plus a=0 freezes the state
///
/// Features are 0-based: feature i increments with probability 1 - i/d in the
/// "forward" regime and i/d in the "reversed" regime (env 6/7, h=0).
struct EnvSpec {
  int env_id = 1;
  int d = 10;
  int T = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (env_id < 1 || env_id > 7) {
      throw ConfigError("unknown env_id " + std::to_string(env_id) +
                        " (expected 1..7)");
    }
    if (d < 1) throw ConfigError("state dimension d must be >= 1");
    if (T < 1) throw ConfigError("episode length T must be >= 1");
  }

  bool has_hidden_factor() const noexcept { return env_id == 6 || env_id == 7; }

  bool operator==(const EnvSpec&) const = default;
};

struct EnvState {
  std::vector<double> features;
  std::optional<int> hidden_h;  // env 6/7 only, fixed for the episode
  int t = 0;

  bool operator==(const EnvState&) const = default;
};

struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  std::int64_t episode_id = 0;
  int t = 0;

  bool operator==(const Transition&) const = default;
};

using Episode = std::vector<Transition>;

struct StepResult {
  std::vector<double> next_state;
  double reward = 0.0;
  bool done = false;
};

/// A seeded simulator instance. Owns its RNG; not thread-safe, but distinct
/// handles share nothing.
class Env {
 public:
  explicit Env(const EnvSpec& spec) : spec_(spec), rng_(spec.seed) {
    spec_.validate();
    state_.features.assign(static_cast<std::size_t>(spec_.d), 0.0);
    finished_ = true;
  }

  const EnvSpec& spec() const noexcept { return spec_; }
  const EnvState& state() const noexcept { return state_; }
  std::int64_t episode_index() const noexcept { return episode_index_; }

  /// Zero counters, t = 0, fresh hidden factor for env 6/7.
  const EnvState& reset() {
    state_.features.assign(static_cast<std::size_t>(spec_.d), 0.0);
    state_.t = 0;
    if (spec_.has_hidden_factor()) {
      state_.hidden_h = rng_.coin();
    } else {
      state_.hidden_h.reset();
    }
    finished_ = false;
    ++episode_index_;
    return state_;
  }

  StepResult step(int action) {
    if (finished_) {
      throw UsageError("step() on a terminated episode; call reset() first");
    }
    if (action != 0 && action != 1) {
      throw UsageError("action must be 0 or 1, got " + std::to_string(action));
    }
    const auto d = static_cast<std::size_t>(spec_.d);
    StepResult out;
    out.next_state = state_.features;
    // One uniform per feature, then one for the reward, on every step, so the
    // RNG stream position never depends on the branch taken.
    for (std::size_t i = 0; i < d; ++i) {
      const double u = rng_.uniform();
      if (u < increment_probability(i, action)) out.next_state[i] += 1.0;
    }
    out.reward = draw_reward(action, rng_.uniform()) ? 1.0 : 0.0;

    state_.features = out.next_state;
    ++state_.t;
    out.done = state_.t == spec_.T;
    finished_ = out.done;
    return out;
  }

  /// Per-step increment probability of feature i under the current episode's
  /// hidden factor.
  double increment_probability(std::size_t i, int action) const noexcept {
    const double forward = 1.0 - static_cast<double>(i) / spec_.d;
    const double reversed = static_cast<double>(i) / spec_.d;
    switch (spec_.env_id) {
      case 1: case 2: case 4:
        return forward;
      case 3: case 5:
        return action == 1 ? forward : 0.0;
      case 6:
        return state_.hidden_h.value_or(0) == 1 ? forward : reversed;
      case 7:
        if (action == 0) return 0.0;
        return state_.hidden_h.value_or(0) == 1 ? forward : reversed;
    }
    return 0.0;
  }

  /// P(r = 1) for the current (pre-transition) state and action.
  double reward_probability(int action) const noexcept {
    switch (spec_.env_id) {
      case 1: case 3:
        return 0.5;
      case 2:
        return action == 1 ? 1.0 : 0.5;
      case 4: case 5:
        return state_.features[0] > 4.0 ? 1.0 : 0.0;
      case 6: case 7:
        return state_.hidden_h.value_or(0) == 1 ? 0.8 : 0.2;
    }
    return 0.0;
  }

  /// Resets and plays one full episode with a fair-coin policy whose coin is
  /// seeded by `policy_seed`. Always returns exactly T transitions.
  Episode rollout_episode(std::uint64_t policy_seed) {
    Rng policy(policy_seed);
    return rollout_episode(policy);
  }

  Episode rollout_episode(Rng& policy) {
    reset();
    Episode ep;
    ep.reserve(static_cast<std::size_t>(spec_.T));
    while (!finished_) {
      Transition tr;
      tr.state = state_.features;
      tr.t = state_.t;
      tr.episode_id = episode_index_ - 1;
      tr.action = policy.coin();
      auto res = step(tr.action);
      tr.reward = res.reward;
      tr.next_state = std::move(res.next_state);
      ep.push_back(std::move(tr));
    }
    return ep;
  }

 private:
  bool draw_reward(int action, double u) const noexcept {
    return u < reward_probability(action);
  }

  EnvSpec spec_;
  Rng rng_;
  EnvState state_;
  bool finished_ = true;
  std::int64_t episode_index_ = 0;
};

inline Env make_env(const EnvSpec& spec) { return Env(spec); }

/// Per-feature expectation used by the acceptance oracle.
enum class Expect { yes, no, any };

/// What the analysis should find on a given environment.
struct ExpectedPattern {
  int env_id = 0;
  std::vector<Expect> reward;  // reward-contributing, per feature
  std::vector<Expect> action;  // offset action-sensitive, per feature
  bool reward_nonempty = false;
  Outcome verdict = Outcome::NoRewardSignal;

  /// True when the observed significance sets and outcome agree with this
  /// pattern on every constrained feature.
  bool matches(const std::vector<bool>& reward_sig,
               const std::vector<bool>& action_sig, Outcome observed) const {
    if (observed != verdict) return false;
    auto agree = [](const std::vector<Expect>& want,
                    const std::vector<bool>& got) {
      if (want.size() != got.size()) return false;
      for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i] == Expect::yes && !got[i]) return false;
        if (want[i] == Expect::no && got[i]) return false;
      }
      return true;
    };
    if (!agree(reward, reward_sig) || !agree(action, action_sig)) return false;
    if (reward_nonempty) {
      bool any = false;
      for (bool b : reward_sig) any = any || b;
      if (!any) return false;
    }
    return true;
  }
};

inline ExpectedPattern expected_significance(int env_id, int d = 10) {
  EnvSpec{env_id, d, 1, 0}.validate();
  const auto n = static_cast<std::size_t>(d);
  ExpectedPattern p;
  p.env_id = env_id;
  p.reward.assign(n, Expect::no);
  p.action.assign(n, Expect::no);
  switch (env_id) {
    case 1:
      p.verdict = Outcome::NoRewardSignal;
      break;
    case 2:
      // Only the verdict is pinned; the action-driven reward may leak into the
      // transition heads through the shared trunk.
      p.action.assign(n, Expect::any);
      p.verdict = Outcome::NoRewardSignal;
      break;
    case 3:
      p.action.assign(n, Expect::yes);
      p.verdict = Outcome::NoRewardSignal;
      break;
    case 4:
      p.reward[0] = Expect::yes;
      p.action.assign(n, Expect::any);
      p.verdict = Outcome::NoActionControl;
      break;
    case 5:
      p.reward[0] = Expect::yes;
      p.action.assign(n, Expect::yes);
      p.verdict = Outcome::PotentiallySuitable;
      break;
    case 6:
      // Confounded through h: which features pick up the signal is not fixed.
      p.reward.assign(n, Expect::any);
      p.reward_nonempty = true;
      p.verdict = Outcome::NoActionControl;
      break;
    case 7:
      p.reward.assign(n, Expect::yes);
      p.action.assign(n, Expect::yes);
      p.verdict = Outcome::PotentiallySuitable;
      break;
  }
  return p;
}

}  // namespace mdpcheck

#endif  // MDPCHECK_ENV_HPP_
