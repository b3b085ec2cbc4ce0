#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "curate/common.hpp"

namespace curate {

enum class SafetyLabel { UnsafeOffensive, UnsafeSensitive, Safe, Unlabeled };

inline std::string_view to_string(SafetyLabel l) {
  switch (l) {
    case SafetyLabel::UnsafeOffensive: return "unsafe_offensive";
    case SafetyLabel::UnsafeSensitive: return "unsafe_sensitive";
    case SafetyLabel::Safe: return "safe";
    case SafetyLabel::Unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

inline bool is_unsafe(SafetyLabel l) {
  return l == SafetyLabel::UnsafeOffensive || l == SafetyLabel::UnsafeSensitive;
}

inline constexpr double kMinImageability = 1.0;
inline constexpr double kMaxImageability = 5.0;
/// Scores below this are treated as non-imageable.
inline constexpr double kImageableThreshold = 4.0;

struct Synset {
  SynsetId id;
  std::vector<std::string> lemmas;
  std::string gloss;
  std::set<SynsetId> parents;
  std::set<SynsetId> children;
  SafetyLabel safety = SafetyLabel::Unlabeled;
  std::optional<double> imageability;
};

struct LabelCounts {
  std::size_t unsafe_offensive = 0;
  std::size_t unsafe_sensitive = 0;
  std::size_t safe = 0;
  std::size_t unlabeled = 0;
  /// Listed ids that were not in the hierarchy.
  std::size_t skipped_unknown = 0;
  std::vector<std::string> warnings;

  std::size_t unsafe() const { return unsafe_offensive + unsafe_sensitive; }
};

struct ScoreLoadReport {
  std::size_t attached = 0;
  std::size_t skipped_unknown = 0;
  std::vector<std::string> warnings;
};

struct FilterOptions {
  bool require_safe = false;
  std::optional<double> min_imageability;
  /// Restrict the view to this synset and its descendants.
  std::optional<SynsetId> scope;
};

struct FilterReport {
  std::vector<SynsetId> kept;
  std::vector<SynsetId> removed;
  std::size_t kept_images = 0;
  std::size_t removed_images = 0;

  friend bool operator==(const FilterReport&, const FilterReport&) = default;
};

struct SubtreeCount {
  std::size_t inclusive = 0;
  std::size_t exclusive = 0;
};

/// Four-way classification of every labeled synset.
struct ClassificationReport {
  std::vector<SynsetId> unsafe_offensive;
  std::vector<SynsetId> unsafe_sensitive;
  std::vector<SynsetId> safe_non_imageable;
  std::vector<SynsetId> safe_imageable;
  std::vector<SynsetId> unlabeled;
};

/// An entry from a safety list file. Unsafe lists may carry an optional second
/// column `offensive` or `sensitive`; bare ids are treated as offensive.
struct ListedSynset {
  std::string id;
  SafetyLabel label = SafetyLabel::Unlabeled;
  std::size_t line = 0;
};

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return in;
}

}  // namespace detail

inline std::vector<ListedSynset> parse_synset_list(std::istream& in, const std::string& name,
                                                   SafetyLabel default_label) {
  std::vector<ListedSynset> out;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields{std::string(line)};
    std::string id, tag, extra;
    fields >> id >> tag >> extra;
    if (!extra.empty()) throw ParseError(name, lineno, "too many columns");
    if (!SynsetId::is_valid(id)) throw ParseError(name, lineno, "invalid synset id '" + id + "'");
    SafetyLabel label = default_label;
    if (!tag.empty()) {
      if (default_label == SafetyLabel::Safe) throw ParseError(name, lineno, "unexpected column '" + tag + "'");
      if (tag == "offensive") label = SafetyLabel::UnsafeOffensive;
      else if (tag == "sensitive") label = SafetyLabel::UnsafeSensitive;
      else throw ParseError(name, lineno, "unknown unsafe category '" + tag + "'");
    }
    out.push_back({id, label, lineno});
  }
  return out;
}

/// Parses `<synset_id><whitespace><score>` lines. Scores outside [1, 5] are rejected.
inline std::vector<std::pair<std::string, double>> parse_score_file(std::istream& in, const std::string& name) {
  std::vector<std::pair<std::string, double>> out;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields{std::string(line)};
    std::string id, score_text, extra;
    fields >> id >> score_text >> extra;
    if (score_text.empty() || !extra.empty()) throw ParseError(name, lineno, "expected '<synset_id> <score>'");
    if (!SynsetId::is_valid(id)) throw ParseError(name, lineno, "invalid synset id '" + id + "'");
    double score = 0;
    std::size_t used = 0;
    try {
      score = std::stod(score_text, &used);
    } catch (const std::exception&) {
      throw ParseError(name, lineno, "invalid score '" + score_text + "'");
    }
    if (used != score_text.size()) throw ParseError(name, lineno, "invalid score '" + score_text + "'");
    if (!(score >= kMinImageability && score <= kMaxImageability))
      throw ParseError(name, lineno, "score out of range [1, 5]");
    out.emplace_back(id, score);
  }
  return out;
}

/// The is-a graph with per-synset safety and imageability metadata plus the
/// image index. Mutated only during setup; afterwards safe for concurrent reads.
class Hierarchy {
 public:
  static Hierarchy load(std::istream& graph, std::istream& images, const std::string& graph_name = "graph",
                        const std::string& images_name = "images") {
    Hierarchy h;
    h.read_graph(graph, graph_name);
    h.read_images(images, images_name);
    return h;
  }

  static Hierarchy load_files(const std::string& graph_file, const std::string& image_index_file) {
    auto g = detail::open_input(graph_file);
    auto i = detail::open_input(image_index_file);
    return load(g, i, graph_file, image_index_file);
  }

  /// Graph only, empty image index.
  static Hierarchy load_graph(std::istream& graph, const std::string& graph_name = "graph") {
    std::istringstream none;
    return load(graph, none, graph_name);
  }

  std::size_t size() const { return synsets_.size(); }
  bool contains(const SynsetId& id) const { return synsets_.count(id) != 0; }
  bool contains(const std::string& id) const {
    return SynsetId::is_valid(id) && contains(SynsetId(id));
  }

  const Synset& at(const SynsetId& id) const {
    const auto it = synsets_.find(id);
    if (it == synsets_.end()) throw ValidationError("unknown synset " + id.str());
    return it->second;
  }

  const std::map<SynsetId, Synset>& synsets() const { return synsets_; }

  const std::vector<ImageId>& images(const SynsetId& id) const {
    static const std::vector<ImageId> kEmpty;
    const auto it = images_.find(id);
    return it == images_.end() ? kEmpty : it->second;
  }

  std::size_t image_count(const SynsetId& id) const { return images(id).size(); }

  std::set<SynsetId> descendants(const SynsetId& root) const { return closure(root, &Synset::children); }
  std::set<SynsetId> ancestors(const SynsetId& node) const { return closure(node, &Synset::parents); }

  SubtreeCount subtree_count(const SynsetId& root) const {
    const auto d = descendants(root).size();
    return {d + 1, d};
  }

  /// Labels each listed synset individually; nothing cascades to descendants.
  LabelCounts apply_safety_labels(std::istream& unsafe, std::istream& safe, const std::string& unsafe_name = "unsafe",
                                  const std::string& safe_name = "safe") {
    const auto unsafe_list = parse_synset_list(unsafe, unsafe_name, SafetyLabel::UnsafeOffensive);
    const auto safe_list = parse_synset_list(safe, safe_name, SafetyLabel::Safe);

    std::map<std::string, const ListedSynset*> seen;
    for (const auto& e : unsafe_list) seen.emplace(e.id, &e);
    for (const auto& e : safe_list)
      if (seen.count(e.id))
        throw ParseError(safe_name, e.line, "synset " + e.id + " is listed as both unsafe and safe");

    LabelCounts counts;
    auto assign = [&](const ListedSynset& e, const std::string& file) {
      const SynsetId id(e.id);
      auto it = synsets_.find(id);
      if (it == synsets_.end()) {
        ++counts.skipped_unknown;
        counts.warnings.push_back(file + ":" + std::to_string(e.line) + ": " + e.id + " not in hierarchy, skipped");
        return;
      }
      it->second.safety = e.label;
    };
    for (const auto& e : unsafe_list) assign(e, unsafe_name);
    for (const auto& e : safe_list) assign(e, safe_name);

    for (const auto& [id, s] : synsets_) {
      switch (s.safety) {
        case SafetyLabel::UnsafeOffensive: ++counts.unsafe_offensive; break;
        case SafetyLabel::UnsafeSensitive: ++counts.unsafe_sensitive; break;
        case SafetyLabel::Safe: ++counts.safe; break;
        case SafetyLabel::Unlabeled: ++counts.unlabeled; break;
      }
    }
    return counts;
  }

  LabelCounts apply_safety_label_files(const std::string& unsafe_file, const std::string& safe_file) {
    auto u = detail::open_input(unsafe_file);
    auto s = detail::open_input(safe_file);
    return apply_safety_labels(u, s, unsafe_file, safe_file);
  }

  void set_imageability(const SynsetId& id, double score) {
    if (!(score >= kMinImageability && score <= kMaxImageability))
      throw ValidationError("imageability score out of range for " + id.str());
    auto it = synsets_.find(id);
    if (it == synsets_.end()) throw ValidationError("unknown synset " + id.str());
    it->second.imageability = score;
  }

  ScoreLoadReport attach_scores(std::istream& in, const std::string& name = "scores") {
    ScoreLoadReport report;
    std::size_t n = 0;
    for (const auto& [id, score] : parse_score_file(in, name)) {
      ++n;
      const SynsetId sid(id);
      if (!contains(sid)) {
        ++report.skipped_unknown;
        report.warnings.push_back(name + ": " + id + " not in hierarchy, skipped");
        continue;
      }
      set_imageability(sid, score);
      ++report.attached;
    }
    return report;
  }

  FilterReport filter_view(const FilterOptions& opt) const {
    FilterReport r;
    std::optional<std::set<SynsetId>> scope;
    if (opt.scope) {
      scope = descendants(*opt.scope);
      scope->insert(*opt.scope);
    }
    for (const auto& [id, s] : synsets_) {
      if (scope && !scope->count(id)) continue;
      bool keep = true;
      if (opt.require_safe && s.safety != SafetyLabel::Safe) keep = false;
      if (opt.min_imageability && !(s.imageability && *s.imageability >= *opt.min_imageability)) keep = false;
      if (keep) {
        r.kept.push_back(id);
        r.kept_images += image_count(id);
      } else {
        r.removed.push_back(id);
        r.removed_images += image_count(id);
      }
    }
    return r;
  }

  ClassificationReport classify() const {
    ClassificationReport r;
    for (const auto& [id, s] : synsets_) {
      switch (s.safety) {
        case SafetyLabel::UnsafeOffensive: r.unsafe_offensive.push_back(id); break;
        case SafetyLabel::UnsafeSensitive: r.unsafe_sensitive.push_back(id); break;
        case SafetyLabel::Safe:
          if (s.imageability && *s.imageability >= kImageableThreshold) r.safe_imageable.push_back(id);
          else r.safe_non_imageable.push_back(id);
          break;
        case SafetyLabel::Unlabeled: r.unlabeled.push_back(id); break;
      }
    }
    return r;
  }

 private:
  std::set<SynsetId> closure(const SynsetId& start, std::set<SynsetId> Synset::*edges) const {
    const auto& first = at(start);
    std::set<SynsetId> out;
    std::vector<const Synset*> stack{&first};
    while (!stack.empty()) {
      const Synset* s = stack.back();
      stack.pop_back();
      for (const auto& next : s->*edges)
        if (out.insert(next).second) stack.push_back(&synsets_.at(next));
    }
    out.erase(start);
    return out;
  }

  void read_graph(std::istream& in, const std::string& name) {
    std::map<SynsetId, std::size_t> line_of;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      if (detail::trim(raw).empty() || raw.front() == '#') continue;
      const auto fields = detail::split(raw, '\t');
      if (fields.size() != 4) throw ParseError(name, lineno, "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
      if (!SynsetId::is_valid(fields[0])) throw ParseError(name, lineno, "invalid synset id '" + fields[0] + "'");
      Synset s;
      s.id = SynsetId(fields[0]);
      for (auto& lemma : detail::split(fields[1], '|')) {
        if (detail::trim(lemma).empty()) throw ParseError(name, lineno, "empty lemma");
        s.lemmas.push_back(std::move(lemma));
      }
      s.gloss = fields[2];
      if (!fields[3].empty()) {
        for (const auto& p : detail::split(fields[3], ',')) {
          const auto pid = detail::trim(p);
          if (!SynsetId::is_valid(pid)) throw ParseError(name, lineno, "invalid parent id '" + std::string(pid) + "'");
          s.parents.insert(SynsetId(std::string(pid)));
        }
      }
      if (s.parents.count(s.id)) throw ParseError(name, lineno, "synset is its own parent");
      if (line_of.count(s.id)) throw ParseError(name, lineno, "duplicate synset " + s.id.str());
      line_of[s.id] = lineno;
      synsets_.emplace(s.id, std::move(s));
    }

    for (auto& [id, s] : synsets_) {
      for (const auto& p : s.parents) {
        auto it = synsets_.find(p);
        if (it == synsets_.end())
          throw ParseError(name, line_of[id], "dangling parent reference " + p.str());
        it->second.children.insert(id);
      }
    }

    // Kahn's algorithm; whatever is left over sits on a cycle.
    std::map<SynsetId, std::size_t> indegree;
    std::queue<SynsetId> ready;
    for (const auto& [id, s] : synsets_) {
      indegree[id] = s.parents.size();
      if (s.parents.empty()) ready.push(id);
    }
    std::size_t visited = 0;
    while (!ready.empty()) {
      const auto id = ready.front();
      ready.pop();
      ++visited;
      for (const auto& c : synsets_.at(id).children)
        if (--indegree[c] == 0) ready.push(c);
    }
    if (visited != synsets_.size()) {
      for (const auto& [id, d] : indegree)
        if (d > 0) throw ParseError(name, line_of[id], "cycle detected through " + id.str());
    }
  }

  void read_images(std::istream& in, const std::string& name) {
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      if (detail::trim(raw).empty() || raw.front() == '#') continue;
      const auto tab = raw.find('\t');
      if (tab == std::string::npos || raw.find('\t', tab + 1) != std::string::npos)
        throw ParseError(name, lineno, "expected '<image_id>\\t<synset_id>'");
      std::string image = raw.substr(0, tab);
      const std::string sid = raw.substr(tab + 1);
      if (image.empty()) throw ParseError(name, lineno, "empty image id");
      if (!SynsetId::is_valid(sid)) throw ParseError(name, lineno, "invalid synset id '" + sid + "'");
      SynsetId id(sid);
      if (!contains(id)) throw ParseError(name, lineno, "dangling synset reference " + sid);
      images_[id].push_back(std::move(image));
    }
    for (auto& [id, v] : images_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }

  std::map<SynsetId, Synset> synsets_;
  std::map<SynsetId, std::vector<ImageId>> images_;
};

}  // namespace curate
