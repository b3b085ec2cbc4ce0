#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curate/common.hpp"
#include "curate/demographics.hpp"

namespace curate::balancing {

using demographics::Attribute;
using demographics::Category;
using demographics::CategorySet;
using demographics::ConsensusRecord;

inline constexpr std::size_t kMinCategories = 2;
inline constexpr std::size_t kMinPoolSize = 10;
inline constexpr double kWeightTolerance = 1e-9;

/// At most 90% of a category's eligible images may appear in any output.
inline constexpr std::size_t retention_cap(std::size_t pool_size) { return pool_size * 9 / 10; }

/// floor(N * w), tolerant of representation error in w (e.g. 0.29 * 100).
inline std::size_t weighted_share(std::size_t total, double weight) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(total) * weight + kWeightTolerance));
}

enum class Reason { TooFewCategories, PoolBelowMinimum, BadWeights, InvalidRequest };

inline std::string_view to_string(Reason r) {
  switch (r) {
    case Reason::TooFewCategories: return "TOO_FEW_CATEGORIES";
    case Reason::PoolBelowMinimum: return "POOL_BELOW_MINIMUM";
    case Reason::BadWeights: return "BAD_WEIGHTS";
    case Reason::InvalidRequest: return "INVALID_REQUEST";
  }
  return "INVALID_REQUEST";
}

class BalanceError : public ValidationError {
 public:
  BalanceError(Reason reason, const std::string& what) : ValidationError(what), reason_(reason) {}
  Reason reason() const { return reason_; }
  std::string_view code() const { return to_string(reason_); }
  /// Guard violations map to HTTP 422; malformed requests to 400.
  bool is_guard() const { return reason_ != Reason::InvalidRequest; }

 private:
  Reason reason_;
};

struct BalanceRequest {
  SynsetId synset;
  Attribute attribute = Attribute::Gender;
  std::vector<Category> categories;
  /// Target share per category; uniform when absent.
  std::optional<std::map<Category, double>> weights;
  std::uint64_t seed = 0;
};

using Pools = std::map<Category, std::vector<ImageId>>;

struct Allocation {
  /// The maximal nominal total N; the selected total is the sum of the shares.
  std::size_t nominal = 0;
  std::map<Category, std::size_t> per_category;
  std::size_t total = 0;

  friend bool operator==(const Allocation&, const Allocation&) = default;
};

struct BalanceResult {
  /// Sorted by image id so the listing does not reveal category membership.
  std::vector<ImageId> selected;
  std::map<Category, std::size_t> counts;
  std::map<Category, std::size_t> pool_sizes;
  std::size_t total = 0;
};

/// Images are eligible for category c only when their consensus on the
/// attribute is exactly {c} and c is requested. Pools are sorted by id.
inline Pools eligible_pool(std::span<const ConsensusRecord* const> records, Attribute attribute,
                           CategorySet requested) {
  Pools pools;
  for (auto c : requested.members())
    if (demographics::attribute_of(c) == attribute) pools[c];
  for (const auto* r : records) {
    if (!r->has_person_consensus()) continue;
    const auto only = (*r)[attribute].singleton();
    if (!only || !requested.contains(*only)) continue;
    pools[*only].push_back(r->image);
  }
  for (auto& [c, v] : pools) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return pools;
}

/// Checks schema membership, category count and weights. Pool sizes are
/// checked separately since they depend on data.
inline void validate_request(const BalanceRequest& req) {
  CategorySet seen;
  for (auto c : req.categories) {
    if (demographics::attribute_of(c) != req.attribute)
      throw BalanceError(Reason::InvalidRequest, std::string(demographics::to_string(c)) + " is not a " +
                                                     std::string(demographics::to_string(req.attribute)) + " category");
    if (seen.contains(c))
      throw BalanceError(Reason::InvalidRequest, "category " + std::string(demographics::to_string(c)) + " repeated");
    seen.insert(c);
  }
  if (req.categories.size() < kMinCategories)
    throw BalanceError(Reason::TooFewCategories, "at least 2 categories must be requested");
  if (!req.weights) return;
  if (req.weights->size() != req.categories.size())
    throw BalanceError(Reason::BadWeights, "weights must name exactly the requested categories");
  double sum = 0;
  for (auto c : req.categories) {
    const auto it = req.weights->find(c);
    if (it == req.weights->end())
      throw BalanceError(Reason::BadWeights, "missing weight for " + std::string(demographics::to_string(c)));
    if (!(it->second > 0) || !std::isfinite(it->second))
      throw BalanceError(Reason::BadWeights, "weights must be positive");
    sum += it->second;
  }
  if (std::fabs(sum - 1.0) > kWeightTolerance) throw BalanceError(Reason::BadWeights, "weights must sum to 1");
}

/// Largest N with weighted_share(N, w_c) <= cap_c for every c. Each
/// constraint is monotone in N, so N is the minimum of the per-category
/// maxima; each maximum is found in closed form and nudged across any
/// floating-point boundary.
inline Allocation solve_allocation(const std::map<Category, std::size_t>& caps,
                                   const std::optional<std::map<Category, double>>& weights) {
  Allocation a;
  if (caps.empty()) return a;
  if (!weights) {
    std::size_t min_cap = caps.begin()->second;
    for (const auto& [c, cap] : caps) min_cap = std::min(min_cap, cap);
    const auto k = caps.size();
    a.nominal = k * min_cap + (k - 1);
    for (const auto& [c, cap] : caps) a.per_category[c] = min_cap;
    a.total = k * min_cap;
    return a;
  }
  std::optional<std::size_t> best;
  for (const auto& [c, cap] : caps) {
    const double w = weights->at(c);
    const double bound = (static_cast<double>(cap) + 1.0 - kWeightTolerance) / w;
    auto n = static_cast<std::size_t>(std::max(0.0, std::ceil(bound) - 1.0));
    while (weighted_share(n + 1, w) <= cap) ++n;
    while (n > 0 && weighted_share(n, w) > cap) --n;
    best = best ? std::min(*best, n) : n;
  }
  a.nominal = *best;
  for (const auto& [c, cap] : caps) {
    a.per_category[c] = weighted_share(a.nominal, weights->at(c));
    a.total += a.per_category[c];
  }
  return a;
}

/// Portable per-image sort key: splitmix64 over seed xor FNV-1a(id).
inline std::uint64_t selection_key(std::uint64_t seed, std::string_view image) {
  return detail::mix64(seed ^ detail::fnv1a(image));
}

/// The n images with the smallest selection keys (ties by id).
inline std::vector<ImageId> select_images(std::span<const ImageId> pool, std::size_t n, std::uint64_t seed) {
  std::vector<std::pair<std::uint64_t, const ImageId*>> keyed;
  keyed.reserve(pool.size());
  for (const auto& img : pool) keyed.emplace_back(selection_key(seed, img), &img);
  n = std::min(n, keyed.size());
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(n), keyed.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first < b.first : *a.second < *b.second; });
  std::vector<ImageId> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(*keyed[i].second);
  return out;
}

inline BalanceResult balance(const BalanceRequest& req, const Pools& pools) {
  validate_request(req);
  std::map<Category, std::size_t> caps;
  BalanceResult result;
  for (auto c : req.categories) {
    const auto it = pools.find(c);
    const auto size = it == pools.end() ? 0 : it->second.size();
    result.pool_sizes[c] = size;
    if (size < kMinPoolSize)
      throw BalanceError(Reason::PoolBelowMinimum, "needs at least 10 images in " +
                                                       std::string(demographics::to_string(c)) + ", found " +
                                                       std::to_string(size));
    caps[c] = retention_cap(size);
  }
  const auto alloc = solve_allocation(caps, req.weights);
  for (auto c : req.categories) {
    auto chosen = select_images(pools.at(c), alloc.per_category.at(c), req.seed);
    result.counts[c] = chosen.size();
    result.selected.insert(result.selected.end(), std::make_move_iterator(chosen.begin()),
                           std::make_move_iterator(chosen.end()));
  }
  std::sort(result.selected.begin(), result.selected.end());
  result.total = result.selected.size();
  return result;
}

/// Synsets that satisfy the balancing guards for the given request shape.
inline std::vector<SynsetId> balanceable_synsets(const demographics::Engine& engine, Attribute attribute,
                                                 CategorySet categories) {
  std::vector<SynsetId> out;
  if (categories.size() < kMinCategories) return out;
  for (const auto& s : engine.synsets()) {
    const auto records = engine.records_for(s);
    const auto pools = eligible_pool(records, attribute, categories);
    bool ok = pools.size() == categories.size();
    for (const auto& [c, v] : pools) ok = ok && v.size() >= kMinPoolSize;
    if (ok) out.push_back(s);
  }
  return out;
}

}  // namespace curate::balancing
