#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curate/common.hpp"
#include "curate/hierarchy.hpp"
#include "curate/stats.hpp"

namespace curate::imageability {

inline constexpr int kMinRating = 1;
inline constexpr int kMaxRating = 5;
/// Workers whose gold-standard RMSE reaches this value are excluded.
inline constexpr double kExclusionError = 2.0;
inline constexpr std::size_t kDefaultCap = 50;
/// Size of the trailing window tested against the earlier ratings.
inline constexpr std::size_t kWindow = 3;

enum class Verdict { Continue, Converged };
enum class TaskState { Collecting, Converged, Capped };
enum class WorkerStatus { Active, Excluded };

inline std::string_view to_string(TaskState s) {
  switch (s) {
    case TaskState::Collecting: return "collecting";
    case TaskState::Converged: return "converged";
    case TaskState::Capped: return "capped";
  }
  return "collecting";
}

inline std::string_view to_string(WorkerStatus s) {
  return s == WorkerStatus::Active ? "active" : "excluded";
}

struct GoldAnswer {
  int truth = 0;
  int value = 0;
};

/// Root-mean-square error of a worker's gold-standard answers.
inline double worker_error(std::span<const GoldAnswer> answers) {
  if (answers.empty()) throw ValidationError("worker_error: no gold answers");
  std::int64_t ss = 0;
  for (const auto& a : answers) ss += static_cast<std::int64_t>(a.value - a.truth) * (a.value - a.truth);
  return std::sqrt(static_cast<double>(ss) / static_cast<double>(answers.size()));
}

inline WorkerStatus status_for_error(double error) {
  return error >= kExclusionError ? WorkerStatus::Excluded : WorkerStatus::Active;
}

/// Exact form of `worker_error(answers) >= 2.0`: sum of squares >= 4 |Q|.
inline bool fails_screening(std::span<const GoldAnswer> answers) {
  if (answers.empty()) return false;
  std::int64_t ss = 0;
  for (const auto& a : answers) ss += static_cast<std::int64_t>(a.value - a.truth) * (a.value - a.truth);
  const auto threshold = static_cast<std::int64_t>(kExclusionError * kExclusionError);
  return ss >= threshold * static_cast<std::int64_t>(answers.size());
}

/// Adaptive stopping rule. With m >= 4 ratings, the last three must all lie
/// within one population standard deviation of the mean of the earlier ones.
/// Evaluated in integers: |x - S/n| <= sigma  <=>  (n x - S)^2 <= n Q - S^2.
inline Verdict check_convergence(std::span<const int> ratings) {
  if (ratings.size() < kWindow + 1) return Verdict::Continue;
  const auto old = ratings.first(ratings.size() - kWindow);
  const auto n = static_cast<std::int64_t>(old.size());
  std::int64_t sum = 0, sum_sq = 0;
  for (int x : old) {
    sum += x;
    sum_sq += static_cast<std::int64_t>(x) * x;
  }
  const std::int64_t spread = n * sum_sq - sum * sum;
  for (int x : ratings.last(kWindow)) {
    const std::int64_t d = n * x - sum;
    if (d * d > spread) return Verdict::Continue;
  }
  return Verdict::Converged;
}

struct GoldQuestion {
  SynsetId synset;
  std::string lemmas;
  int truth = 0;
};

/// The 20 fixed gold-standard synsets: ten obviously imageable (5), ten
/// obviously non-imageable (1).
inline std::vector<GoldQuestion> default_gold_standard() {
  const std::pair<const char*, std::pair<const char*, int>> rows[] = {
      {"n10101634", {"football player, footballer", 5}},
      {"n10605253", {"skier", 5}},
      {"n09834885", {"ballet master", 5}},
      {"n10366966", {"nurse", 5}},
      {"n10701644", {"tennis pro, professional tennis player", 5}},
      {"n09874725", {"bride", 5}},
      {"n10772092", {"weatherman, weather forecaster", 5}},
      {"n10536416", {"rock star", 5}},
      {"n09624168", {"male, male person", 5}},
      {"n10087434", {"fighter pilot", 5}},
      {"n10217208", {"irreligionist", 1}},
      {"n10743356", {"Utopian", 1}},
      {"n09848110", {"theist", 1}},
      {"n09755788", {"abecedarian", 1}},
      {"n09794668", {"animist", 1}},
      {"n09778927", {"agnostic", 1}},
      {"n10355142", {"neutral", 1}},
      {"n10344774", {"namer", 1}},
      {"n09789898", {"analogist", 1}},
      {"n10000787", {"delegate", 1}},
  };
  std::vector<GoldQuestion> out;
  for (const auto& [id, rest] : rows) out.push_back({SynsetId(id), rest.first, rest.second});
  return out;
}

/// `<synset_id>\t<lemmas>\t<truth>`; truth must be 1 or 5.
inline std::vector<GoldQuestion> parse_gold_file(std::istream& in, const std::string& name = "gold") {
  std::vector<GoldQuestion> out;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (detail::trim(raw).empty() || raw.front() == '#') continue;
    const auto f = detail::split(raw, '\t');
    if (f.size() != 3) throw ParseError(name, lineno, "expected '<synset_id>\\t<lemmas>\\t<truth>'");
    if (!SynsetId::is_valid(f[0])) throw ParseError(name, lineno, "invalid synset id '" + f[0] + "'");
    const auto truth = detail::trim(f[2]);
    if (truth != "1" && truth != "5") throw ParseError(name, lineno, "gold truth must be 1 or 5");
    out.push_back({SynsetId(f[0]), f[1], truth == "1" ? 1 : 5});
  }
  return out;
}

struct Rating {
  WorkerId worker;
  int value = 0;

  friend bool operator==(const Rating&, const Rating&) = default;
};

struct Task {
  SynsetId synset;
  /// Arrival-ordered surviving ratings; position i has sequence index i + 1.
  std::vector<Rating> ratings;
  TaskState state = TaskState::Collecting;
  std::optional<double> final_score;
  /// Every rating ever accepted, including ones cut off by an earlier
  /// stopping point. Exclusion rebuilds `ratings` from this.
  std::vector<Rating> accepted;

  bool finalized() const { return state != TaskState::Collecting; }
  /// Capped tasks finalized without converging.
  bool flagged() const { return state == TaskState::Capped; }
  std::vector<int> values() const {
    std::vector<int> v;
    v.reserve(ratings.size());
    for (const auto& r : ratings) v.push_back(r.value);
    return v;
  }
  bool has_rating_from(const WorkerId& w) const {
    for (const auto& r : ratings)
      if (r.worker == w) return true;
    return false;
  }
};

struct WorkerRecord {
  WorkerId id;
  /// Gold answers in arrival order, keyed by the gold synset.
  std::vector<std::pair<SynsetId, GoldAnswer>> gold_answers;
  WorkerStatus status = WorkerStatus::Active;

  std::vector<GoldAnswer> answers() const {
    std::vector<GoldAnswer> a;
    for (const auto& [s, g] : gold_answers) a.push_back(g);
    return a;
  }
  std::optional<double> error() const {
    if (gold_answers.empty()) return std::nullopt;
    const auto a = answers();
    return worker_error(a);
  }
};

struct EngineConfig {
  std::size_t cap = kDefaultCap;
  std::map<SynsetId, int> gold;

  static EngineConfig with_gold(std::span<const GoldQuestion> questions, std::size_t cap = kDefaultCap) {
    EngineConfig c;
    c.cap = cap;
    for (const auto& q : questions) c.gold[q.synset] = q.truth;
    return c;
  }
};

struct SubmitOutcome {
  bool gold = false;
  /// Set when this submission pushed the worker over the error threshold.
  bool excluded_worker = false;
  TaskState state = TaskState::Collecting;
};

struct ScoreSummary {
  std::size_t count = 0;
  double median = 0;
  std::size_t at_least_threshold = 0;
  std::size_t capped = 0;
};

struct FinalScores {
  std::map<SynsetId, double> scores;
  ScoreSummary summary;
};

/// Median and count of scores >= `threshold`.
inline ScoreSummary summarize(const std::map<SynsetId, double>& scores, double threshold = kImageableThreshold) {
  ScoreSummary s;
  s.count = scores.size();
  std::vector<double> v;
  for (const auto& [id, x] : scores) {
    v.push_back(x);
    if (x >= threshold) ++s.at_least_threshold;
  }
  if (!v.empty()) s.median = stats::median(std::move(v));
  return s;
}

/// Collects ratings per synset, screens workers on interleaved gold questions
/// and finalizes scores once the stopping rule fires. All state is a pure fold
/// over the sequence of submit/exclude calls. Single writer.
class Engine {
 public:
  explicit Engine(EngineConfig config = {}) : config_(std::move(config)) {
    if (config_.cap < kWindow + 1) throw ValidationError("imageability cap must be at least 4");
  }

  const EngineConfig& config() const { return config_; }
  bool is_gold(const SynsetId& s) const { return config_.gold.count(s) != 0; }

  /// Registers a synset to be rated. Tasks are also created on first rating.
  void open_task(const SynsetId& s) {
    if (is_gold(s)) throw ValidationError(s.str() + " is a gold-standard synset");
    tasks_.try_emplace(s, Task{s, {}, TaskState::Collecting, std::nullopt, {}});
  }

  /// Throws `Rejected` if `submit` would refuse this rating; never mutates.
  void validate(const WorkerId& worker, const SynsetId& synset, int value) const {
    if (worker.empty()) throw Rejected("BAD_WORKER", "empty worker id");
    if (value < kMinRating || value > kMaxRating)
      throw Rejected("BAD_VALUE", "rating " + std::to_string(value) + " outside 1..5");
    const auto w = workers_.find(worker);
    if (w != workers_.end() && w->second.status == WorkerStatus::Excluded)
      throw Rejected("EXCLUDED_WORKER", "worker " + worker + " is excluded");
    if (is_gold(synset)) {
      if (w != workers_.end())
        for (const auto& [s, g] : w->second.gold_answers)
          if (s == synset) throw Rejected("DUPLICATE", "worker " + worker + " already answered gold " + synset.str());
      return;
    }
    const auto t = tasks_.find(synset);
    if (t == tasks_.end()) return;
    if (t->second.finalized()) throw Rejected("FINALIZED", "task " + synset.str() + " is finalized");
    if (t->second.has_rating_from(worker))
      throw Rejected("DUPLICATE", "worker " + worker + " already rated " + synset.str());
  }

  SubmitOutcome submit(const WorkerId& worker, const SynsetId& synset, int value) {
    validate(worker, synset, value);
    auto& rec = workers_.try_emplace(worker, WorkerRecord{worker, {}, WorkerStatus::Active}).first->second;
    SubmitOutcome out;
    if (is_gold(synset)) {
      out.gold = true;
      rec.gold_answers.push_back({synset, GoldAnswer{config_.gold.at(synset), value}});
      if (fails_screening(rec.answers())) {
        exclude(worker);
        out.excluded_worker = true;
      }
      return out;
    }
    auto& task = tasks_.try_emplace(synset, Task{synset, {}, TaskState::Collecting, std::nullopt, {}}).first->second;
    task.ratings.push_back({worker, value});
    task.accepted.push_back({worker, value});
    settle(task);
    out.state = task.state;
    return out;
  }

  /// Excludes a worker and removes every one of their ratings. Each affected
  /// task is rebuilt by replaying its accepted ratings from non-excluded
  /// workers through the stopping rule, so it ends where it would have had
  /// none of the excluded workers ever rated.
  /// Returns false if the worker was already excluded.
  bool exclude(const WorkerId& worker) {
    auto& rec = workers_.try_emplace(worker, WorkerRecord{worker, {}, WorkerStatus::Active}).first->second;
    if (rec.status == WorkerStatus::Excluded) return false;
    rec.status = WorkerStatus::Excluded;
    for (auto& [id, task] : tasks_) {
      bool touched = false;
      for (const auto& r : task.accepted) touched = touched || r.worker == worker;
      if (!touched) continue;
      task.ratings.clear();
      task.state = TaskState::Collecting;
      task.final_score.reset();
      for (const auto& r : task.accepted) {
        if (status(r.worker) == WorkerStatus::Excluded) continue;
        task.ratings.push_back(r);
        settle(task);
        if (task.finalized()) break;
      }
    }
    return true;
  }

  const std::map<SynsetId, Task>& tasks() const { return tasks_; }
  const std::map<WorkerId, WorkerRecord>& workers() const { return workers_; }

  const Task& task(const SynsetId& s) const {
    const auto it = tasks_.find(s);
    if (it == tasks_.end()) throw ValidationError("no imageability task for " + s.str());
    return it->second;
  }

  WorkerStatus status(const WorkerId& w) const {
    const auto it = workers_.find(w);
    return it == workers_.end() ? WorkerStatus::Active : it->second.status;
  }

  bool all_finalized() const {
    for (const auto& [id, t] : tasks_)
      if (!t.finalized()) return false;
    return true;
  }

  /// Final scores for every task; throws if any task is still collecting.
  FinalScores finalize() const {
    FinalScores out;
    for (const auto& [id, t] : tasks_) {
      if (!t.finalized()) throw ValidationError("task " + id.str() + " is still collecting");
      out.scores[id] = *t.final_score;
    }
    out.summary = summarize(out.scores);
    for (const auto& [id, t] : tasks_) out.summary.capped += t.flagged() ? 1 : 0;
    return out;
  }

  /// Attaches final scores to the hierarchy (synsets not present are skipped)
  /// and returns the summary.
  ScoreSummary finalize_into(Hierarchy& h) const {
    auto f = finalize();
    for (const auto& [id, s] : f.scores)
      if (h.contains(id)) h.set_imageability(id, s);
    return f.summary;
  }

  /// Canonical content digest. Empty tasks and workers with neither gold
  /// answers nor an exclusion carry no state and are skipped.
  void digest_into(detail::Digest& d) const {
    d.add(std::string_view("imageability"));
    for (const auto& [id, t] : tasks_) {
      if (t.ratings.empty() && !t.finalized()) continue;
      d.add(id.str()).add(to_string(t.state));
      d.add(t.ratings.size());
      for (const auto& r : t.ratings) d.add(r.worker).add(r.value);
      d.add(t.final_score ? *t.final_score : -1.0);
    }
    for (const auto& [id, w] : workers_) {
      if (w.gold_answers.empty() && w.status == WorkerStatus::Active) continue;
      d.add(id).add(to_string(w.status)).add(w.gold_answers.size());
      for (const auto& [s, g] : w.gold_answers) d.add(s.str()).add(g.value);
    }
  }

 private:
  void settle(Task& task) const {
    const auto values = task.values();
    if (check_convergence(values) == Verdict::Converged) {
      task.state = TaskState::Converged;
    } else if (task.ratings.size() >= config_.cap) {
      task.state = TaskState::Capped;
    } else {
      return;
    }
    task.final_score = stats::mean(std::span<const int>(values));
  }

  EngineConfig config_;
  std::map<SynsetId, Task> tasks_;
  std::map<WorkerId, WorkerRecord> workers_;
};

}  // namespace curate::imageability
