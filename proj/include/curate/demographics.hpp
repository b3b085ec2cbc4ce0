#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curate/common.hpp"
#include "curate/hierarchy.hpp"

namespace curate::demographics {

enum class Attribute : std::uint8_t { Gender, Skin, Age };
inline constexpr std::array<Attribute, 3> kAttributes{Attribute::Gender, Attribute::Skin, Attribute::Age};

// Child < 18, Adult 18-40, Over40 40-65, Over65 65+.
enum class Category : std::uint8_t { Male, Female, Unsure, Light, Medium, Dark, Child, Adult, Over40, Over65 };
inline constexpr std::size_t kCategoryCount = 10;

inline constexpr std::array<std::string_view, kCategoryCount> kCategoryNames{
    "Male", "Female", "Unsure", "Light", "Medium", "Dark", "Child", "Adult", "Over40", "Over65"};

inline std::string_view to_string(Category c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

inline std::string_view to_string(Attribute a) {
  switch (a) {
    case Attribute::Gender: return "gender";
    case Attribute::Skin: return "skin";
    case Attribute::Age: return "age";
  }
  return "gender";
}

inline std::optional<Category> parse_category(std::string_view s) {
  for (std::size_t i = 0; i < kCategoryCount; ++i)
    if (kCategoryNames[i] == s) return static_cast<Category>(i);
  return std::nullopt;
}

inline std::optional<Attribute> parse_attribute(std::string_view s) {
  for (auto a : kAttributes)
    if (to_string(a) == s) return a;
  return std::nullopt;
}

inline Attribute attribute_of(Category c) {
  const auto i = static_cast<std::size_t>(c);
  return i < 3 ? Attribute::Gender : i < 6 ? Attribute::Skin : Attribute::Age;
}

inline std::span<const Category> categories_of(Attribute a) {
  static constexpr std::array<Category, 3> kGender{Category::Male, Category::Female, Category::Unsure};
  static constexpr std::array<Category, 3> kSkin{Category::Light, Category::Medium, Category::Dark};
  static constexpr std::array<Category, 4> kAge{Category::Child, Category::Adult, Category::Over40, Category::Over65};
  switch (a) {
    case Attribute::Gender: return kGender;
    case Attribute::Skin: return kSkin;
    case Attribute::Age: return kAge;
  }
  return kGender;
}

/// Set of categories as a bitmask.
class CategorySet {
 public:
  constexpr CategorySet() = default;
  CategorySet(std::initializer_list<Category> cs) {
    for (auto c : cs) insert(c);
  }
  static constexpr CategorySet from_bits(std::uint16_t b) {
    CategorySet s;
    s.bits_ = b;
    return s;
  }
  static CategorySet of(Attribute a) {
    CategorySet s;
    for (auto c : categories_of(a)) s.insert(c);
    return s;
  }

  void insert(Category c) { bits_ |= bit(c); }
  void erase(Category c) { bits_ &= static_cast<std::uint16_t>(~bit(c)); }
  bool contains(Category c) const { return (bits_ & bit(c)) != 0; }
  std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits_)); }
  bool empty() const { return bits_ == 0; }
  std::uint16_t bits() const { return bits_; }

  CategorySet operator&(CategorySet o) const { return from_bits(bits_ & o.bits_); }
  CategorySet operator|(CategorySet o) const { return from_bits(bits_ | o.bits_); }
  bool subset_of(CategorySet o) const { return (bits_ & ~o.bits_) == 0; }

  std::vector<Category> members() const {
    std::vector<Category> out;
    for (std::size_t i = 0; i < kCategoryCount; ++i)
      if (bits_ & (1u << i)) out.push_back(static_cast<Category>(i));
    return out;
  }

  std::optional<Category> singleton() const {
    if (size() != 1) return std::nullopt;
    return static_cast<Category>(std::countr_zero(bits_));
  }

  friend bool operator==(CategorySet, CategorySet) = default;

 private:
  static constexpr std::uint16_t bit(Category c) { return static_cast<std::uint16_t>(1u << static_cast<unsigned>(c)); }
  std::uint16_t bits_ = 0;
};

/// Parses a comma-separated list of category names.
inline CategorySet parse_categories(std::string_view list) {
  CategorySet out;
  for (const auto& part : detail::split(list, ',')) {
    const auto name = detail::trim(part);
    if (name.empty()) continue;
    const auto c = parse_category(name);
    if (!c) throw ValidationError("unknown category '" + std::string(name) + "'");
    out.insert(*c);
  }
  return out;
}

inline std::string join(CategorySet s, char sep = ',') {
  std::string out;
  for (auto c : s.members()) {
    if (!out.empty()) out += sep;
    out += to_string(c);
  }
  return out;
}

/// Intersection over union of an annotation against a non-empty truth set.
inline Ratio iou_fraction(CategorySet annotated, CategorySet truth) {
  if (truth.empty()) throw ValidationError("iou: empty truth set");
  return Ratio::make(static_cast<std::int64_t>((annotated & truth).size()),
                     static_cast<std::int64_t>((annotated | truth).size()));
}

inline double iou(CategorySet annotated, CategorySet truth) { return iou_fraction(annotated, truth).value(); }

/// Minimum supporting workers for a category among n judgments: max{2, ceil(n/2)}.
inline constexpr std::size_t consensus_threshold(std::size_t n) {
  return std::max<std::size_t>(2, (n + 1) / 2);
}

inline constexpr double kMinMeanIou = 0.5;
inline constexpr std::size_t kDefaultCap = 10;

enum class WorkerStatus { Active, Excluded };
enum class RecordState { Collecting, Resolved, Capped };

inline std::string_view to_string(WorkerStatus s) { return s == WorkerStatus::Active ? "active" : "excluded"; }
inline std::string_view to_string(RecordState s) {
  switch (s) {
    case RecordState::Collecting: return "collecting";
    case RecordState::Resolved: return "resolved";
    case RecordState::Capped: return "capped";
  }
  return "collecting";
}

/// Excluded strictly below a mean IOU of 0.5.
inline WorkerStatus status_for_mean_iou(double mean_iou) {
  return mean_iou < kMinMeanIou ? WorkerStatus::Excluded : WorkerStatus::Active;
}

inline WorkerStatus screen_worker(std::span<const double> gold_ious) {
  if (gold_ious.empty()) return WorkerStatus::Active;
  double sum = 0;
  for (double x : gold_ious) sum += x;
  return status_for_mean_iou(sum / static_cast<double>(gold_ious.size()));
}

/// Exact variant: mean < 1/2  <=>  2 * sum < n.
inline WorkerStatus screen_worker(std::span<const Ratio> gold_ious) {
  if (gold_ious.empty()) return WorkerStatus::Active;
  Ratio sum;
  for (const auto& r : gold_ious) sum = sum + r;
  return Ratio{2 * sum.num, sum.den} < Ratio{static_cast<std::int64_t>(gold_ious.size()), 1} ? WorkerStatus::Excluded
                                                                                            : WorkerStatus::Active;
}

struct Judgment {
  WorkerId worker;
  ImageId image;
  SynsetId synset;
  /// Indexed by Attribute.
  std::array<CategorySet, 3> labels{};
  bool none_found = false;

  CategorySet& operator[](Attribute a) { return labels[static_cast<std::size_t>(a)]; }
  CategorySet operator[](Attribute a) const { return labels[static_cast<std::size_t>(a)]; }

  CategorySet all_labels() const { return labels[0] | labels[1] | labels[2]; }

  /// Throws if the judgment is not schema-closed or mixes labels with none_found.
  void validate() const {
    if (worker.empty()) throw ValidationError("judgment has empty worker id");
    if (image.empty()) throw ValidationError("judgment has empty image id");
    for (auto a : kAttributes) {
      const auto set = (*this)[a];
      if (!set.subset_of(CategorySet::of(a)))
        throw ValidationError("judgment carries categories outside the " + std::string(to_string(a)) + " schema");
      if (none_found && !set.empty()) throw ValidationError("none_found judgment carries labels");
      if (!none_found && set.empty())
        throw ValidationError("judgment has no " + std::string(to_string(a)) + " category");
    }
  }
};

struct Consensus {
  std::array<CategorySet, 3> sets{};
  std::size_t n = 0;
  std::size_t threshold = 0;
  std::size_t none_found_support = 0;

  CategorySet operator[](Attribute a) const { return sets[static_cast<std::size_t>(a)]; }
  bool every_attribute() const { return !sets[0].empty() && !sets[1].empty() && !sets[2].empty(); }
};

/// Category supports over a fixed set of judgments. Independent of order.
inline Consensus compute_consensus(std::span<const Judgment> judgments) {
  Consensus c;
  c.n = judgments.size();
  if (c.n == 0) return c;
  c.threshold = consensus_threshold(c.n);
  std::array<std::size_t, kCategoryCount> support{};
  for (const auto& j : judgments) {
    if (j.none_found) {
      ++c.none_found_support;
      continue;
    }
    for (auto cat : j.all_labels().members()) ++support[static_cast<std::size_t>(cat)];
  }
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    if (support[i] < c.threshold) continue;
    const auto cat = static_cast<Category>(i);
    c.sets[static_cast<std::size_t>(attribute_of(cat))].insert(cat);
  }
  return c;
}

struct ConsensusRecord {
  ImageId image;
  SynsetId synset;
  std::vector<Judgment> judgments;
  RecordState state = RecordState::Collecting;
  /// Categories meeting the threshold at the current judgment count.
  std::array<CategorySet, 3> consensus{};
  /// Resolved as "no matching person"; excluded from distributions.
  bool no_person = false;
  /// Every judgment ever accepted, including ones past an earlier stop.
  std::vector<Judgment> accepted;

  CategorySet operator[](Attribute a) const { return consensus[static_cast<std::size_t>(a)]; }
  bool finalized() const { return state != RecordState::Collecting; }
  bool flagged() const { return state == RecordState::Capped; }
  bool has_person_consensus() const { return state == RecordState::Resolved && !no_person; }
  bool has_judgment_from(const WorkerId& w) const {
    for (const auto& j : judgments)
      if (j.worker == w) return true;
    return false;
  }
};

struct DemographicGold {
  ImageId image;
  CategorySet truth;
};

/// `<image_id>\t<comma-separated truth categories>`.
inline std::vector<DemographicGold> parse_gold_file(std::istream& in, const std::string& name = "gold") {
  std::vector<DemographicGold> out;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (detail::trim(raw).empty() || raw.front() == '#') continue;
    const auto f = detail::split(raw, '\t');
    if (f.size() != 2 || f[0].empty()) throw ParseError(name, lineno, "expected '<image_id>\\t<categories>'");
    CategorySet truth;
    try {
      truth = parse_categories(f[1]);
    } catch (const ValidationError& e) {
      throw ParseError(name, lineno, e.what());
    }
    if (truth.empty()) throw ParseError(name, lineno, "empty truth set");
    out.push_back({f[0], truth});
  }
  return out;
}

struct WorkerRecord {
  WorkerId id;
  std::vector<std::pair<ImageId, Ratio>> gold_ious;
  WorkerStatus status = WorkerStatus::Active;

  std::optional<double> mean_iou() const {
    if (gold_ious.empty()) return std::nullopt;
    double s = 0;
    for (const auto& [img, r] : gold_ious) s += r.value();
    return s / static_cast<double>(gold_ious.size());
  }
};

struct EngineConfig {
  std::size_t cap = kDefaultCap;
  std::map<ImageId, CategorySet> gold;

  static EngineConfig with_gold(std::span<const DemographicGold> items, std::size_t cap = kDefaultCap) {
    EngineConfig c;
    c.cap = cap;
    for (const auto& g : items) c.gold[g.image] = g.truth;
    return c;
  }
};

struct SubmitOutcome {
  bool gold = false;
  bool excluded_worker = false;
  RecordState state = RecordState::Collecting;
};

using RecordKey = std::pair<SynsetId, ImageId>;

/// Aggregates image-level judgments into per-attribute consensus and screens
/// workers by mean IOU on gold images. Single writer.
class Engine {
 public:
  explicit Engine(EngineConfig config = {}) : config_(std::move(config)) {
    if (config_.cap < 2) throw ValidationError("demographic judgment cap must be at least 2");
  }

  const EngineConfig& config() const { return config_; }
  bool is_gold(const ImageId& image) const { return config_.gold.count(image) != 0; }

  void open_record(const SynsetId& synset, const ImageId& image) {
    if (is_gold(image)) throw ValidationError(image + " is a gold-standard image");
    records_.try_emplace({synset, image}, ConsensusRecord{image, synset, {}, RecordState::Collecting, {}, false, {}});
  }

  void validate(const Judgment& j) const {
    try {
      j.validate();
    } catch (const ValidationError& e) {
      throw Rejected("BAD_JUDGMENT", e.what());
    }
    const auto w = workers_.find(j.worker);
    if (w != workers_.end() && w->second.status == WorkerStatus::Excluded)
      throw Rejected("EXCLUDED_WORKER", "worker " + j.worker + " is excluded");
    if (is_gold(j.image)) {
      if (w != workers_.end())
        for (const auto& [img, r] : w->second.gold_ious)
          if (img == j.image) throw Rejected("DUPLICATE", "worker " + j.worker + " already answered gold " + j.image);
      return;
    }
    const auto r = records_.find({j.synset, j.image});
    if (r == records_.end()) return;
    if (r->second.finalized()) throw Rejected("FINALIZED", "record " + j.image + " is finalized");
    if (r->second.has_judgment_from(j.worker))
      throw Rejected("DUPLICATE", "worker " + j.worker + " already judged " + j.image);
  }

  SubmitOutcome submit(const Judgment& j) {
    validate(j);
    auto& rec = workers_.try_emplace(j.worker, WorkerRecord{j.worker, {}, WorkerStatus::Active}).first->second;
    SubmitOutcome out;
    if (is_gold(j.image)) {
      out.gold = true;
      rec.gold_ious.emplace_back(j.image, iou_fraction(j.all_labels(), config_.gold.at(j.image)));
      std::vector<Ratio> ious;
      for (const auto& [img, r] : rec.gold_ious) ious.push_back(r);
      if (screen_worker(std::span<const Ratio>(ious)) == WorkerStatus::Excluded) {
        exclude(j.worker);
        out.excluded_worker = true;
      }
      return out;
    }
    auto& r = records_
                  .try_emplace({j.synset, j.image},
                               ConsensusRecord{j.image, j.synset, {}, RecordState::Collecting, {}, false, {}})
                  .first->second;
    r.judgments.push_back(j);
    r.accepted.push_back(j);
    settle(r);
    out.state = r.state;
    return out;
  }

  /// Excludes the worker, drops their judgments and replays each affected
  /// record's accepted judgments from non-excluded workers through the
  /// stopping rule.
  bool exclude(const WorkerId& worker) {
    auto& rec = workers_.try_emplace(worker, WorkerRecord{worker, {}, WorkerStatus::Active}).first->second;
    if (rec.status == WorkerStatus::Excluded) return false;
    rec.status = WorkerStatus::Excluded;
    for (auto& [key, r] : records_) {
      bool touched = false;
      for (const auto& j : r.accepted) touched = touched || j.worker == worker;
      if (!touched) continue;
      r.judgments.clear();
      r.state = RecordState::Collecting;
      r.consensus = {};
      r.no_person = false;
      for (const auto& j : r.accepted) {
        if (status(j.worker) == WorkerStatus::Excluded) continue;
        r.judgments.push_back(j);
        settle(r);
        if (r.finalized()) break;
      }
    }
    return true;
  }

  const std::map<RecordKey, ConsensusRecord>& records() const { return records_; }
  const std::map<WorkerId, WorkerRecord>& workers() const { return workers_; }

  const ConsensusRecord& record(const SynsetId& s, const ImageId& image) const {
    const auto it = records_.find({s, image});
    if (it == records_.end()) throw ValidationError("no consensus record for " + image + " in " + s.str());
    return it->second;
  }

  std::vector<const ConsensusRecord*> records_for(const SynsetId& s) const {
    std::vector<const ConsensusRecord*> out;
    for (auto it = records_.lower_bound({s, ImageId{}}); it != records_.end() && it->first.first == s; ++it)
      out.push_back(&it->second);
    return out;
  }

  std::vector<SynsetId> synsets() const {
    std::vector<SynsetId> out;
    for (const auto& [key, r] : records_)
      if (out.empty() || out.back() != key.first) out.push_back(key.first);
    return out;
  }

  WorkerStatus status(const WorkerId& w) const {
    const auto it = workers_.find(w);
    return it == workers_.end() ? WorkerStatus::Active : it->second.status;
  }

  void digest_into(detail::Digest& d) const {
    d.add(std::string_view("demographics"));
    for (const auto& [key, r] : records_) {
      if (r.judgments.empty() && !r.finalized()) continue;
      d.add(key.first.str()).add(key.second).add(to_string(r.state)).add(r.no_person);
      for (const auto& s : r.consensus) d.add(s.bits());
      d.add(r.judgments.size());
      for (const auto& j : r.judgments) {
        d.add(j.worker).add(j.none_found);
        for (const auto& s : j.labels) d.add(s.bits());
      }
    }
    for (const auto& [id, w] : workers_) {
      if (w.gold_ious.empty() && w.status == WorkerStatus::Active) continue;
      d.add(id).add(to_string(w.status)).add(w.gold_ious.size());
      for (const auto& [img, r] : w.gold_ious) d.add(img).add(r.num).add(r.den);
    }
  }

 private:
  void settle(ConsensusRecord& r) const {
    const auto c = compute_consensus(r.judgments);
    r.consensus = c.sets;
    r.no_person = false;
    if (c.n >= 2 && c.every_attribute()) {
      r.state = RecordState::Resolved;
    } else if (c.n >= 2 && c.none_found_support >= c.threshold) {
      r.state = RecordState::Resolved;
      r.no_person = true;
      r.consensus = {};
    } else if (c.n >= config_.cap) {
      r.state = RecordState::Capped;
    }
  }

  EngineConfig config_;
  std::map<RecordKey, ConsensusRecord> records_;
  std::map<WorkerId, WorkerRecord> workers_;
};

/// Percentage of resolved person images whose consensus for `attribute`
/// contains each category. Multi-category images count toward each member,
/// so percentages may sum past 100.
struct Distribution {
  std::size_t resolved_images = 0;
  /// Images supporting each category, indexed by category within attribute.
  std::map<Category, std::size_t> counts;

  double percent(Category c) const {
    const auto it = counts.find(c);
    const auto k = it == counts.end() ? 0 : it->second;
    return 100.0 * static_cast<double>(k) / static_cast<double>(resolved_images);
  }
  Ratio fraction(Category c) const {
    const auto it = counts.find(c);
    return Ratio::make(static_cast<std::int64_t>(it == counts.end() ? 0 : it->second),
                       static_cast<std::int64_t>(resolved_images));
  }
};

/// Uses only records resolved with a person consensus; throws if there are none.
inline Distribution synset_distribution(std::span<const ConsensusRecord* const> records, Attribute attribute) {
  Distribution d;
  for (auto c : categories_of(attribute)) d.counts[c] = 0;
  for (const auto* r : records) {
    if (!r->has_person_consensus()) continue;
    ++d.resolved_images;
    for (auto c : (*r)[attribute].members()) ++d.counts[c];
  }
  if (d.resolved_images == 0) throw ValidationError("no resolved records for distribution");
  return d;
}

}  // namespace curate::demographics
