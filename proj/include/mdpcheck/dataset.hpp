#ifndef MDPCHECK_DATASET_HPP_
#define MDPCHECK_DATASET_HPP_

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdpcheck/env.hpp"
#include "mdpcheck/error.hpp"
#include "mdpcheck/rng.hpp"

namespace mdpcheck {

/// Provenance of a dataset. env_id is empty for externally produced data.
struct DatasetMeta {
  std::optional<int> env_id;
  int T = 0;
  std::uint64_t env_seed = 0;
  std::uint64_t policy_seed = 0;
  std::int64_t num_episodes = 0;

  bool operator==(const DatasetMeta&) const = default;
};

/// Logged (s, a, r, s') tuples, stored column-wise. Immutable once built in
/// practice; all readers take it by const reference.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(int d, DatasetMeta meta = {}) : d_(d), meta_(meta) {
    if (d < 1) throw ConfigError("dataset dimension must be >= 1");
  }

  int d() const noexcept { return d_; }
  std::size_t size() const noexcept { return actions_.size(); }
  bool empty() const noexcept { return actions_.empty(); }
  const DatasetMeta& meta() const noexcept { return meta_; }
  DatasetMeta& meta() noexcept { return meta_; }

  void reserve(std::size_t n) {
    const auto w = static_cast<std::size_t>(d_);
    states_.reserve(n * w);
    next_states_.reserve(n * w);
    actions_.reserve(n);
    rewards_.reserve(n);
    episode_ids_.reserve(n);
    steps_.reserve(n);
  }

  void push_back(const Transition& tr) {
    const auto w = static_cast<std::size_t>(d_);
    if (tr.state.size() != w || tr.next_state.size() != w) {
      throw ValidationError("transition dimension " +
                            std::to_string(tr.state.size()) + "/" +
                            std::to_string(tr.next_state.size()) +
                            " does not match dataset d=" + std::to_string(d_));
    }
    if (!episode_ids_.empty() && tr.episode_id != episode_ids_.back() &&
        tr.episode_id < episode_ids_.back()) {
      throw ValidationError("episode ids must be non-decreasing");
    }
    states_.insert(states_.end(), tr.state.begin(), tr.state.end());
    next_states_.insert(next_states_.end(), tr.next_state.begin(),
                        tr.next_state.end());
    actions_.push_back(tr.action);
    rewards_.push_back(tr.reward);
    episode_ids_.push_back(tr.episode_id);
    steps_.push_back(tr.t);
  }

  void truncate(std::size_t n) {
    if (n >= size()) return;
    const auto w = static_cast<std::size_t>(d_);
    states_.resize(n * w);
    next_states_.resize(n * w);
    actions_.resize(n);
    rewards_.resize(n);
    episode_ids_.resize(n);
    steps_.resize(n);
  }

  Transition operator[](std::size_t i) const {
    Transition tr;
    auto s = state(i);
    auto ns = next_state(i);
    tr.state.assign(s.begin(), s.end());
    tr.next_state.assign(ns.begin(), ns.end());
    tr.action = actions_[i];
    tr.reward = rewards_[i];
    tr.episode_id = episode_ids_[i];
    tr.t = steps_[i];
    return tr;
  }

  std::span<const double> state(std::size_t i) const {
    const auto w = static_cast<std::size_t>(d_);
    return {states_.data() + i * w, w};
  }
  std::span<const double> next_state(std::size_t i) const {
    const auto w = static_cast<std::size_t>(d_);
    return {next_states_.data() + i * w, w};
  }
  int action(std::size_t i) const { return actions_[i]; }
  double reward(std::size_t i) const { return rewards_[i]; }
  std::int64_t episode_id(std::size_t i) const { return episode_ids_[i]; }
  int step(std::size_t i) const { return steps_[i]; }

  bool operator==(const Dataset&) const = default;

 private:
  int d_ = 0;
  DatasetMeta meta_;
  std::vector<double> states_;       // size() x d, row-major
  std::vector<double> next_states_;  // size() x d, row-major
  std::vector<int> actions_;
  std::vector<double> rewards_;
  std::vector<std::int64_t> episode_ids_;
  std::vector<int> steps_;
};

/// A training or evaluation batch. Matrices are row-major, one row per example.
struct MiniBatch {
  int d = 0;
  std::vector<double> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> next_states;

  std::size_t size() const noexcept { return actions.size(); }
  std::span<const double> state(std::size_t i) const {
    const auto w = static_cast<std::size_t>(d);
    return {states.data() + i * w, w};
  }
  std::span<const double> next_state(std::size_t i) const {
    const auto w = static_cast<std::size_t>(d);
    return {next_states.data() + i * w, w};
  }

  bool operator==(const MiniBatch&) const = default;
};

/// Gathers the given rows of `ds` into a batch.
inline MiniBatch gather(const Dataset& ds, std::span<const std::size_t> rows) {
  MiniBatch b;
  b.d = ds.d();
  const auto w = static_cast<std::size_t>(ds.d());
  b.states.reserve(rows.size() * w);
  b.next_states.reserve(rows.size() * w);
  b.actions.reserve(rows.size());
  b.rewards.reserve(rows.size());
  for (std::size_t r : rows) {
    auto s = ds.state(r);
    auto ns = ds.next_state(r);
    b.states.insert(b.states.end(), s.begin(), s.end());
    b.next_states.insert(b.next_states.end(), ns.begin(), ns.end());
    b.actions.push_back(ds.action(r));
    b.rewards.push_back(ds.reward(r));
  }
  return b;
}

enum class RemainderPolicy {
  strict,        // batch_size must be a multiple of T
  pad_episodes,  // collect whole episodes, then truncate to the exact count
};

/// Plays fair-coin episodes on `env` until num_batches * batch_size
/// transitions are logged. Episode ids are renumbered 0, 1, ... in order.
inline Dataset collect(Env& env, std::size_t num_batches, std::size_t batch_size,
                       std::uint64_t policy_seed,
                       RemainderPolicy policy = RemainderPolicy::strict) {
  const auto T = static_cast<std::size_t>(env.spec().T);
  if (batch_size == 0 || num_batches == 0) {
    throw ConfigError("collect: num_batches and batch_size must be positive");
  }
  if (policy == RemainderPolicy::strict && batch_size % T != 0) {
    throw ConfigError("collect: batch_size " + std::to_string(batch_size) +
                      " is not a multiple of episode length " +
                      std::to_string(T) + " (use the pad-episodes policy)");
  }
  const std::size_t total = num_batches * batch_size;
  const std::size_t episodes = (total + T - 1) / T;

  DatasetMeta meta;
  meta.env_id = env.spec().env_id;
  meta.T = env.spec().T;
  meta.env_seed = env.spec().seed;
  meta.policy_seed = policy_seed;
  meta.num_episodes = static_cast<std::int64_t>(episodes);

  Dataset ds(env.spec().d, meta);
  ds.reserve(episodes * T);
  Rng coin(policy_seed);
  for (std::size_t e = 0; e < episodes; ++e) {
    for (auto& tr : env.rollout_episode(coin)) {
      tr.episode_id = static_cast<std::int64_t>(e);
      ds.push_back(tr);
    }
  }
  ds.truncate(total);
  return ds;
}

struct BatchOptions {
  std::optional<std::uint64_t> shuffle_seed;
  bool allow_partial = false;  // keep a short final batch instead of dropping it
};

/// Row indices of each batch for one pass over `n` rows.
inline std::vector<std::vector<std::size_t>> batch_indices(
    std::size_t n, std::size_t batch_size, const BatchOptions& opt = {}) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (batch_size > n && !opt.allow_partial) {
    throw ConfigError("batch_size " + std::to_string(batch_size) +
                      " exceeds dataset size " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (opt.shuffle_seed) {
    Rng rng(*opt.shuffle_seed);
    shuffle(std::span<std::size_t>(order), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < batch_size && !opt.allow_partial) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

inline std::vector<MiniBatch> batches(const Dataset& ds, std::size_t batch_size,
                                      const BatchOptions& opt = {}) {
  std::vector<MiniBatch> out;
  for (const auto& rows : batch_indices(ds.size(), batch_size, opt)) {
    out.push_back(gather(ds, rows));
  }
  return out;
}

/// Uniform random permutation of the batch's actions; everything else as is.
inline void shuffle_actions_in_place(MiniBatch& b, Rng& rng) {
  shuffle(std::span<int>(b.actions), rng);
}

inline MiniBatch shuffle_actions_within_batch(MiniBatch b, std::uint64_t seed) {
  Rng rng(seed);
  shuffle_actions_in_place(b, rng);
  return b;
}

// ---------------------------------------------------------------------------
// JSON Lines persistence. Line 1 is a header object; each following line is one
// transition {"episode_id","t","state","action","reward","next_state"}.
// A ".gz" suffix selects gzip compression.

namespace detail {

inline bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path + " for writing");
    std::size_t off = 0;
    while (off < bytes.size()) {
      const auto chunk = static_cast<unsigned>(
          std::min<std::size_t>(bytes.size() - off, 1u << 20));
      if (gzwrite(f, bytes.data() + off, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw IoError("write failed: " + path);
      }
      off += chunk;
    }
    if (gzclose(f) != Z_OK) throw IoError("close failed: " + path);
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open " + path);
    std::string out;
    std::vector<char> buf(1 << 20);
    int got;
    while ((got = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) {
      out.append(buf.data(), static_cast<std::size_t>(got));
    }
    const bool failed = got < 0;
    gzclose(f);
    if (failed) throw IoError("gzip read failed: " + path);
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline nlohmann::json meta_to_json(const Dataset& ds) {
  nlohmann::json m;
  if (ds.meta().env_id) {
    m["env_id"] = *ds.meta().env_id;
  } else {
    m["env_id"] = "external";
  }
  m["T"] = ds.meta().T;
  m["env_seed"] = ds.meta().env_seed;
  m["policy_seed"] = ds.meta().policy_seed;
  m["num_episodes"] = ds.meta().num_episodes;
  return m;
}

inline std::string serialize_dataset(const Dataset& ds) {
  std::string out;
  nlohmann::json header;
  header["format"] = "mdpcheck-dataset";
  header["version"] = 1;
  header["d"] = ds.d();
  header["count"] = ds.size();
  header["meta"] = meta_to_json(ds);
  out += header.dump();
  out += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    nlohmann::json line;
    line["episode_id"] = ds.episode_id(i);
    line["t"] = ds.step(i);
    auto s = ds.state(i);
    line["state"] = std::vector<double>(s.begin(), s.end());
    line["action"] = ds.action(i);
    line["reward"] = ds.reward(i);
    auto ns = ds.next_state(i);
    line["next_state"] = std::vector<double>(ns.begin(), ns.end());
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline void save(const Dataset& ds, const std::string& path) {
  detail::write_file(path, serialize_dataset(ds));
}

inline Dataset parse_dataset(const std::string& text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    line = std::string_view(text).substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    return true;
  };
  auto parse = [&](std::string_view line) {
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
  };

  std::string_view line;
  if (!next_line(line)) throw ParseError("empty dataset file", 0);
  const auto header = parse(line);
  std::size_t count = 0;
  int d = 0;
  DatasetMeta meta;
  try {
    if (header.at("format") != "mdpcheck-dataset") {
      throw ParseError("not a dataset header", line_no);
    }
    d = header.at("d").get<int>();
    count = header.at("count").get<std::size_t>();
    const auto& m = header.at("meta");
    if (m.at("env_id").is_number_integer()) meta.env_id = m["env_id"].get<int>();
    meta.T = m.at("T").get<int>();
    meta.env_seed = m.at("env_seed").get<std::uint64_t>();
    meta.policy_seed = m.at("policy_seed").get<std::uint64_t>();
    meta.num_episodes = m.at("num_episodes").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), line_no);
  }
  if (d < 1) throw ValidationError("header d must be >= 1");

  Dataset ds(d, meta);
  ds.reserve(count);
  Transition tr;
  while (next_line(line)) {
    if (line.empty()) continue;
    const auto j = parse(line);
    try {
      tr.episode_id = j.at("episode_id").get<std::int64_t>();
      tr.t = j.at("t").get<int>();
      tr.state = j.at("state").get<std::vector<double>>();
      tr.action = j.at("action").get<int>();
      tr.reward = j.at("reward").get<double>();
      tr.next_state = j.at("next_state").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad transition: ") + e.what(), line_no);
    }
    if (tr.action != 0 && tr.action != 1) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": action must be 0 or 1");
    }
    try {
      ds.push_back(tr);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (ds.size() != count) {
    throw ParseError("expected " + std::to_string(count) +
                         " transitions, found " + std::to_string(ds.size()) +
                         " (truncated file?)",
                     line_no);
  }
  return ds;
}

inline Dataset load(const std::string& path) {
  return parse_dataset(detail::read_file(path));
}

}  // namespace mdpcheck

#endif  // MDPCHECK_DATASET_HPP_
