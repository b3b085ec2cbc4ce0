#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "curate/common.hpp"
#include "curate/demographics.hpp"
#include "curate/hierarchy.hpp"
#include "curate/imageability.hpp"
#include "curate/store.hpp"

namespace curate::sim {

using demographics::Attribute;
using demographics::Category;
using demographics::CategorySet;
using nlohmann::json;

enum class ProfileKind { Reliable, Noisy, Spammer, Biased };

inline std::string_view to_string(ProfileKind k) {
  switch (k) {
    case ProfileKind::Reliable: return "reliable";
    case ProfileKind::Noisy: return "noisy";
    case ProfileKind::Spammer: return "spammer";
    case ProfileKind::Biased: return "biased";
  }
  return "reliable";
}

inline std::optional<ProfileKind> parse_profile_kind(std::string_view s) {
  for (auto k : {ProfileKind::Reliable, ProfileKind::Noisy, ProfileKind::Spammer, ProfileKind::Biased})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct WorkerProfile {
  ProfileKind kind = ProfileKind::Reliable;
  /// Standard deviation of the Gaussian added to the true imageability.
  double noise = 0.3;
  /// Probability that a demographic judgment misreports one attribute.
  double disagreement = 0.0;
  /// Category substitutions applied to every demographic judgment.
  std::map<Category, Category> bias;
  std::uint64_t seed = 0;

  static WorkerProfile reliable(double noise = 0.3, double disagreement = 0.0) {
    return {ProfileKind::Reliable, noise, disagreement, {}, 0};
  }
  static WorkerProfile noisy(double noise = 1.0, double disagreement = 0.3) {
    return {ProfileKind::Noisy, noise, disagreement, {}, 0};
  }
  static WorkerProfile spammer() { return {ProfileKind::Spammer, 0.0, 0.0, {}, 0}; }
  static WorkerProfile biased(std::map<Category, Category> table = {{Category::Over40, Category::Adult}},
                              double noise = 0.3) {
    return {ProfileKind::Biased, noise, 0.0, std::move(table), 0};
  }
};

struct ProfileGroup {
  WorkerProfile profile;
  std::size_t count = 1;
};

struct SimConfig {
  std::uint64_t seed = 0;
  std::vector<ProfileGroup> groups;
  /// Real items per batch; each batch also carries `gold_per_batch` gold items.
  std::size_t batch_size = 10;
  std::size_t gold_per_batch = 1;
  std::size_t imageability_cap = imageability::kDefaultCap;
  std::size_t demographic_cap = demographics::kDefaultCap;
};

/// Parses a simulation config; see README for the schema.
inline SimConfig parse_sim_config(const json& j) {
  SimConfig c;
  try {
    c.seed = j.value("seed", std::uint64_t{0});
    c.batch_size = j.value("batch_size", c.batch_size);
    c.gold_per_batch = j.value("gold_per_batch", c.gold_per_batch);
    c.imageability_cap = j.value("imageability_cap", c.imageability_cap);
    c.demographic_cap = j.value("demographic_cap", c.demographic_cap);
    for (const auto& p : j.value("profiles", json::array())) {
      const auto kind = parse_profile_kind(p.at("kind").get<std::string>());
      if (!kind) throw ValidationError("unknown worker profile '" + p.at("kind").get<std::string>() + "'");
      WorkerProfile prof;
      switch (*kind) {
        case ProfileKind::Reliable: prof = WorkerProfile::reliable(); break;
        case ProfileKind::Noisy: prof = WorkerProfile::noisy(); break;
        case ProfileKind::Spammer: prof = WorkerProfile::spammer(); break;
        case ProfileKind::Biased: prof = WorkerProfile::biased(); break;
      }
      prof.noise = p.value("noise", prof.noise);
      prof.disagreement = p.value("disagreement", prof.disagreement);
      prof.seed = p.value("seed", std::uint64_t{0});
      if (p.contains("bias")) {
        prof.bias.clear();
        for (const auto& [from, to] : p.at("bias").items()) {
          const auto a = demographics::parse_category(from);
          const auto b = demographics::parse_category(to.get<std::string>());
          if (!a || !b || demographics::attribute_of(*a) != demographics::attribute_of(*b))
            throw ValidationError("bad bias entry '" + from + "'");
          prof.bias[*a] = *b;
        }
      }
      if (prof.noise < 0 || prof.disagreement < 0 || prof.disagreement > 1)
        throw ValidationError("profile noise must be >= 0 and disagreement in [0, 1]");
      c.groups.push_back({prof, p.value("count", std::size_t{1})});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid simulation config: ") + e.what());
  }
  if (c.batch_size == 0) throw ValidationError("batch_size must be positive");
  return c;
}

inline SimConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return parse_sim_config(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError("invalid simulation config '" + path + "': " + e.what());
  }
}

struct SimWorker {
  WorkerId id;
  WorkerProfile profile;
  std::mt19937_64 rng;
};

/// Instantiates the pool and applies the seeded arrival shuffle.
inline std::vector<SimWorker> make_pool(const SimConfig& c) {
  std::vector<SimWorker> pool;
  std::map<ProfileKind, std::size_t> next;
  for (const auto& g : c.groups) {
    for (std::size_t i = 0; i < g.count; ++i) {
      const auto n = next[g.profile.kind]++;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s-%03zu", std::string(to_string(g.profile.kind)).c_str(), n);
      const std::uint64_t s = ::curate::detail::mix64(c.seed ^ ::curate::detail::fnv1a(buf) ^ ::curate::detail::mix64(g.profile.seed));
      pool.push_back({buf, g.profile, std::mt19937_64(s)});
    }
  }
  std::mt19937_64 order(::curate::detail::mix64(c.seed));
  std::shuffle(pool.begin(), pool.end(), order);
  return pool;
}

/// Gaussian perturbation, rounded and clamped to 1..5. Spammers answer uniformly.
inline int simulate_rating(SimWorker& w, double truth) {
  if (w.profile.kind == ProfileKind::Spammer) return std::uniform_int_distribution<int>(1, 5)(w.rng);
  double x = truth;
  if (w.profile.noise > 0) x += std::normal_distribution<double>(0.0, w.profile.noise)(w.rng);
  return std::clamp(static_cast<int>(std::lround(x)), imageability::kMinRating, imageability::kMaxRating);
}

struct ImageabilityWorld {
  std::map<SynsetId, double> truth;
  std::vector<imageability::GoldQuestion> gold;
};

/// Uniform true imageability per synset, derived from (seed, id) only.
inline double seeded_truth(std::uint64_t seed, const SynsetId& id) {
  const auto h = ::curate::detail::mix64(seed ^ ::curate::detail::fnv1a(id.str()));
  return 1.0 + 4.0 * static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53);
}

inline ImageabilityWorld make_imageability_world(std::size_t synsets, std::uint64_t seed) {
  ImageabilityWorld w;
  for (std::size_t i = 0; i < synsets; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "n%08zu", 20000000 + i);
    const SynsetId id(buf);
    w.truth[id] = seeded_truth(seed, id);
  }
  w.gold = imageability::default_gold_standard();
  return w;
}

struct ImageabilityReport {
  std::map<SynsetId, double> scores;
  std::map<WorkerId, imageability::WorkerStatus> statuses;
  /// Surviving ratings per finalized synset -> number of synsets.
  std::map<std::size_t, std::size_t> ratings_histogram;
  double mean_ratings = 0;
  std::size_t collecting = 0;
  std::size_t capped = 0;
  std::uint64_t submissions = 0;
};

namespace detail {

/// Collecting items the worker has not touched, fewest-annotated first.
template <typename Map, typename Pred>
std::vector<typename Map::key_type> pick_batch(const Map& items, std::size_t n, Pred eligible) {
  std::vector<std::pair<std::size_t, const typename Map::key_type*>> cand;
  for (const auto& [key, item] : items) {
    const auto load = eligible(item);
    if (load) cand.emplace_back(*load, &key);
  }
  n = std::min(n, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first < b.first : *a.second < *b.second; });
  std::vector<typename Map::key_type> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(*cand[i].second);
  return out;
}

}  // namespace detail

inline store::EngineConfig imageability_engine_config(const ImageabilityWorld& world, const SimConfig& c) {
  store::EngineConfig ec;
  ec.imageability = imageability::EngineConfig::with_gold(world.gold, c.imageability_cap);
  return ec;
}

/// Runs collect/screen/converge until every task is finalized or no active
/// worker can contribute. Every submission goes through `Pipeline`, so the
/// log is a complete replayable trace.
inline ImageabilityReport simulate_imageability(const ImageabilityWorld& world, const SimConfig& config,
                                                store::JudgmentLog& log, store::EngineState& state) {
  store::Pipeline pipe(log, state);
  auto& engine = state.imageability;
  for (const auto& [id, t] : world.truth)
    if (!engine.is_gold(id)) engine.open_task(id);

  std::map<SynsetId, int> gold_truth;
  for (const auto& g : world.gold) gold_truth[g.synset] = g.truth;

  auto pool = make_pool(config);
  std::int64_t clock = 0;
  ImageabilityReport report;
  bool progress = true;
  while (progress && !engine.all_finalized()) {
    progress = false;
    for (auto& w : pool) {
      if (engine.status(w.id) == imageability::WorkerStatus::Excluded) continue;
      auto batch = detail::pick_batch(engine.tasks(), config.batch_size,
                                      [&](const imageability::Task& t) -> std::optional<std::size_t> {
                                        if (t.finalized() || t.has_rating_from(w.id)) return std::nullopt;
                                        return t.ratings.size();
                                      });
      if (batch.empty()) continue;
      // Interleave unanswered gold questions at random positions.
      std::vector<SynsetId> unanswered;
      const auto wit = engine.workers().find(w.id);
      for (const auto& [gid, truth] : gold_truth) {
        bool seen = false;
        if (wit != engine.workers().end())
          for (const auto& [s, a] : wit->second.gold_answers) seen = seen || s == gid;
        if (!seen) unanswered.push_back(gid);
      }
      std::shuffle(unanswered.begin(), unanswered.end(), w.rng);
      for (std::size_t g = 0; g < config.gold_per_batch && g < unanswered.size(); ++g) {
        const auto pos = std::uniform_int_distribution<std::size_t>(0, batch.size())(w.rng);
        batch.insert(batch.begin() + static_cast<std::ptrdiff_t>(pos), unanswered[g]);
      }
      for (const auto& s : batch) {
        const double truth = engine.is_gold(s) ? gold_truth.at(s) : world.truth.at(s);
        const int v = simulate_rating(w, truth);
        pipe.submit_rating(w.id, s, v, clock++);
        ++report.submissions;
        progress = true;
        if (engine.status(w.id) == imageability::WorkerStatus::Excluded) break;
      }
    }
  }

  std::size_t rated = 0, total = 0;
  for (const auto& [id, t] : engine.tasks()) {
    if (!t.finalized()) {
      ++report.collecting;
      continue;
    }
    report.scores[id] = *t.final_score;
    report.capped += t.flagged() ? 1 : 0;
    ++report.ratings_histogram[t.ratings.size()];
    total += t.ratings.size();
    ++rated;
  }
  report.mean_ratings = rated ? static_cast<double>(total) / static_cast<double>(rated) : 0.0;
  for (const auto& w : pool) report.statuses[w.id] = engine.status(w.id);
  return report;
}

struct WorldImage {
  ImageId id;
  SynsetId synset;
  std::array<CategorySet, 3> truth{};
  bool no_person = false;

  CategorySet operator[](Attribute a) const { return truth[static_cast<std::size_t>(a)]; }
  CategorySet all() const { return truth[0] | truth[1] | truth[2]; }
};

struct DemographicWorld {
  std::vector<WorldImage> images;
  std::vector<WorldImage> gold;
};

struct LabelPriors {
  std::array<double, 3> gender{0.55, 0.40, 0.05};
  std::array<double, 3> skin{0.60, 0.25, 0.15};
  std::array<double, 4> age{0.10, 0.55, 0.28, 0.07};
  /// Probability of a second person adding another category per attribute.
  double multi_person = 0.1;
  double no_person = 0.0;
};

namespace detail {

inline Category draw(std::mt19937_64& rng, Attribute a, std::span<const double> weights) {
  std::discrete_distribution<std::size_t> d(weights.begin(), weights.end());
  return demographics::categories_of(a)[d(rng)];
}

inline std::array<CategorySet, 3> draw_truth(std::mt19937_64& rng, const LabelPriors& p) {
  std::array<CategorySet, 3> t{};
  const bool two = std::bernoulli_distribution(p.multi_person)(rng);
  for (int k = 0; k < (two ? 2 : 1); ++k) {
    t[0].insert(draw(rng, Attribute::Gender, p.gender));
    t[1].insert(draw(rng, Attribute::Skin, p.skin));
    t[2].insert(draw(rng, Attribute::Age, p.age));
  }
  return t;
}

}  // namespace detail

/// `images` spread round-robin over `synsets` synthetic synsets plus 20 gold images.
inline DemographicWorld make_demographic_world(std::size_t synsets, std::size_t images, std::uint64_t seed,
                                               const LabelPriors& priors = {}) {
  DemographicWorld w;
  std::mt19937_64 rng(::curate::detail::mix64(seed ^ 0xd3e0ULL));
  for (std::size_t i = 0; i < images; ++i) {
    char sid[32], img[64];
    std::snprintf(sid, sizeof sid, "n%08zu", 30000000 + i % std::max<std::size_t>(synsets, 1));
    std::snprintf(img, sizeof img, "%s_%zu", sid, i);
    WorldImage im{img, SynsetId(sid), {}, std::bernoulli_distribution(priors.no_person)(rng)};
    if (!im.no_person) im.truth = detail::draw_truth(rng, priors);
    w.images.push_back(std::move(im));
  }
  for (std::size_t g = 0; g < 20; ++g) {
    char img[32];
    std::snprintf(img, sizeof img, "gold_%02zu", g);
    w.gold.push_back({img, SynsetId("n00007846"), detail::draw_truth(rng, priors), false});
  }
  return w;
}

/// Assigns seeded synthetic truth labels to every image of an index.
inline DemographicWorld world_from_index(const Hierarchy& h, std::span<const demographics::DemographicGold> gold,
                                         std::uint64_t seed, const LabelPriors& priors = {}) {
  DemographicWorld w;
  for (const auto& [id, s] : h.synsets()) {
    for (const auto& img : h.images(id)) {
      std::mt19937_64 rng(::curate::detail::mix64(seed ^ ::curate::detail::fnv1a(img) ^ ::curate::detail::fnv1a(id.str())));
      WorldImage im{img, id, {}, std::bernoulli_distribution(priors.no_person)(rng)};
      if (!im.no_person) im.truth = detail::draw_truth(rng, priors);
      w.images.push_back(std::move(im));
    }
  }
  for (const auto& g : gold) {
    WorldImage im{g.image, SynsetId("n00007846"), {}, false};
    for (auto c : g.truth.members()) im.truth[static_cast<std::size_t>(demographics::attribute_of(c))].insert(c);
    w.gold.push_back(im);
  }
  return w;
}

inline demographics::Judgment simulate_judgment(SimWorker& w, const WorldImage& img) {
  demographics::Judgment j;
  j.worker = w.id;
  j.image = img.id;
  j.synset = img.synset;
  if (w.profile.kind == ProfileKind::Spammer) {
    if (std::bernoulli_distribution(0.1)(w.rng)) {
      j.none_found = true;
      return j;
    }
    for (auto a : demographics::kAttributes) {
      const auto cats = demographics::categories_of(a);
      j[a].insert(cats[std::uniform_int_distribution<std::size_t>(0, cats.size() - 1)(w.rng)]);
    }
    return j;
  }
  if (img.no_person) {
    j.none_found = true;
    return j;
  }
  j.labels = img.truth;
  // Attributes the image has truth for; gold images may cover only some.
  std::vector<Attribute> present;
  for (auto a : demographics::kAttributes)
    if (!j[a].empty()) present.push_back(a);
  if (!present.empty() && std::bernoulli_distribution(w.profile.disagreement)(w.rng)) {
    const auto a = present[std::uniform_int_distribution<std::size_t>(0, present.size() - 1)(w.rng)];
    std::vector<Category> others;
    for (auto c : demographics::categories_of(a))
      if (!j[a].contains(c)) others.push_back(c);
    if (!others.empty()) j[a] = {others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(w.rng)]};
  }
  for (auto a : demographics::kAttributes) {
    CategorySet mapped;
    for (auto c : j[a].members()) {
      const auto it = w.profile.bias.find(c);
      mapped.insert(it == w.profile.bias.end() ? c : it->second);
    }
    j[a] = mapped;
  }
  // A gold image may lack an attribute; fill from the worker's own draw.
  for (auto a : demographics::kAttributes)
    if (j[a].empty()) {
      const auto cats = demographics::categories_of(a);
      j[a].insert(cats[std::uniform_int_distribution<std::size_t>(0, cats.size() - 1)(w.rng)]);
    }
  return j;
}

struct DemographicReport {
  std::size_t images = 0;
  std::size_t resolved = 0;
  std::size_t capped = 0;
  std::size_t collecting = 0;
  /// Judgment count at resolution -> number of images.
  std::map<std::size_t, std::size_t> depth_histogram;
  double resolved_at_two = 0;
  double resolved_within_four = 0;
  std::map<WorkerId, demographics::WorkerStatus> statuses;
  std::uint64_t submissions = 0;
};

inline store::EngineConfig demographic_engine_config(const DemographicWorld& world, const SimConfig& c) {
  std::vector<demographics::DemographicGold> gold;
  for (const auto& g : world.gold) gold.push_back({g.id, g.all()});
  store::EngineConfig ec;
  ec.demographics = demographics::EngineConfig::with_gold(gold, c.demographic_cap);
  return ec;
}

inline DemographicReport simulate_demographics(const DemographicWorld& world, const SimConfig& config,
                                               store::JudgmentLog& log, store::EngineState& state) {
  store::Pipeline pipe(log, state);
  auto& engine = state.demographics;
  std::map<demographics::RecordKey, const WorldImage*> by_key;
  for (const auto& im : world.images) {
    engine.open_record(im.synset, im.id);
    by_key[{im.synset, im.id}] = &im;
  }

  auto pool = make_pool(config);
  std::int64_t clock = 0;
  DemographicReport report;
  auto open = [&] {
    for (const auto& [k, r] : engine.records())
      if (!r.finalized()) return true;
    return false;
  };
  bool progress = true;
  while (progress && open()) {
    progress = false;
    for (auto& w : pool) {
      if (engine.status(w.id) == demographics::WorkerStatus::Excluded) continue;
      const auto keys = detail::pick_batch(engine.records(), config.batch_size,
                                           [&](const demographics::ConsensusRecord& r) -> std::optional<std::size_t> {
                                             if (r.finalized() || r.has_judgment_from(w.id)) return std::nullopt;
                                             return r.judgments.size();
                                           });
      if (keys.empty()) continue;
      std::vector<const WorldImage*> batch;
      for (const auto& k : keys) batch.push_back(by_key.at(k));
      std::vector<const WorldImage*> unanswered;
      const auto wit = engine.workers().find(w.id);
      for (const auto& g : world.gold) {
        bool seen = false;
        if (wit != engine.workers().end())
          for (const auto& [img, r] : wit->second.gold_ious) seen = seen || img == g.id;
        if (!seen) unanswered.push_back(&g);
      }
      std::shuffle(unanswered.begin(), unanswered.end(), w.rng);
      for (std::size_t g = 0; g < config.gold_per_batch && g < unanswered.size(); ++g) {
        const auto pos = std::uniform_int_distribution<std::size_t>(0, batch.size())(w.rng);
        batch.insert(batch.begin() + static_cast<std::ptrdiff_t>(pos), unanswered[g]);
      }
      for (const auto* im : batch) {
        pipe.submit_judgment(simulate_judgment(w, *im), clock++);
        ++report.submissions;
        progress = true;
        if (engine.status(w.id) == demographics::WorkerStatus::Excluded) break;
      }
    }
  }

  std::size_t at_two = 0, within_four = 0;
  for (const auto& [k, r] : engine.records()) {
    ++report.images;
    switch (r.state) {
      case demographics::RecordState::Collecting: ++report.collecting; break;
      case demographics::RecordState::Capped: ++report.capped; break;
      case demographics::RecordState::Resolved:
        ++report.resolved;
        ++report.depth_histogram[r.judgments.size()];
        at_two += r.judgments.size() == 2;
        within_four += r.judgments.size() <= 4;
        break;
    }
  }
  if (report.images) {
    report.resolved_at_two = static_cast<double>(at_two) / static_cast<double>(report.images);
    report.resolved_within_four = static_cast<double>(within_four) / static_cast<double>(report.images);
  }
  for (const auto& w : pool) report.statuses[w.id] = engine.status(w.id);
  return report;
}

}  // namespace curate::sim
