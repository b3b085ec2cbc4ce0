#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "curate/common.hpp"
#include "curate/demographics.hpp"
#include "curate/hierarchy.hpp"
#include "curate/imageability.hpp"

namespace curate::store {

using nlohmann::json;

/// I/O failure while persisting or reading the log (exit code 1, not 2).
class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A log line that fails to parse, validate, or match its checkpoint.
class CorruptLog : public std::runtime_error {
 public:
  CorruptLog(std::uint64_t offset, const std::string& what)
      : std::runtime_error("corrupt log record at offset " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

enum class Kind { Imageability, Demographic, Exclusion, Admin };

inline std::optional<Kind> parse_kind(std::string_view s) {
  if (s == "imageability") return Kind::Imageability;
  if (s == "demographic") return Kind::Demographic;
  if (s == "exclusion") return Kind::Exclusion;
  if (s == "admin") return Kind::Admin;
  return std::nullopt;
}

inline json imageability_record(const WorkerId& worker, const SynsetId& synset, int value, std::int64_t timestamp) {
  return {{"kind", "imageability"}, {"worker", worker}, {"synset", synset.str()}, {"value", value},
          {"timestamp", timestamp}};
}

inline json demographic_record(const demographics::Judgment& j, std::int64_t timestamp) {
  auto names = [](demographics::CategorySet s) {
    json arr = json::array();
    for (auto c : s.members()) arr.push_back(std::string(demographics::to_string(c)));
    return arr;
  };
  return {{"kind", "demographic"},
          {"worker", j.worker},
          {"image", j.image},
          {"synset", j.synset.str()},
          {"gender", names(j[demographics::Attribute::Gender])},
          {"skin", names(j[demographics::Attribute::Skin])},
          {"age", names(j[demographics::Attribute::Age])},
          {"none_found", j.none_found},
          {"timestamp", timestamp}};
}

/// `engine` is "imageability" or "demographics".
inline json exclusion_record(std::string_view engine, const WorkerId& worker, std::string_view reason,
                             std::int64_t timestamp) {
  return {{"kind", "exclusion"}, {"engine", engine}, {"worker", worker}, {"reason", reason}, {"timestamp", timestamp}};
}

inline json checkpoint_record(const std::string& digest, std::int64_t timestamp) {
  return {{"kind", "admin"}, {"op", "checkpoint"}, {"digest", digest}, {"timestamp", timestamp}};
}

namespace detail {

inline const json& field(const json& rec, const char* name) {
  const auto it = rec.find(name);
  if (it == rec.end()) throw ValidationError(std::string("missing field '") + name + "'");
  return *it;
}

inline std::string string_field(const json& rec, const char* name) {
  const auto& v = field(rec, name);
  if (!v.is_string() || v.get<std::string>().empty())
    throw ValidationError(std::string("field '") + name + "' must be a non-empty string");
  return v.get<std::string>();
}

inline SynsetId synset_field(const json& rec, const char* name) {
  const auto s = string_field(rec, name);
  if (!SynsetId::is_valid(s)) throw ValidationError("invalid synset id '" + s + "'");
  return SynsetId(s);
}

inline demographics::CategorySet category_field(const json& rec, const char* name, demographics::Attribute a) {
  const auto& v = field(rec, name);
  if (!v.is_array()) throw ValidationError(std::string("field '") + name + "' must be an array");
  demographics::CategorySet out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ValidationError(std::string("field '") + name + "' must hold category names");
    const auto c = demographics::parse_category(e.get<std::string>());
    if (!c || demographics::attribute_of(*c) != a)
      throw ValidationError("'" + e.get<std::string>() + "' is not a " + std::string(demographics::to_string(a)) +
                            " category");
    out.insert(*c);
  }
  return out;
}

}  // namespace detail

inline demographics::Judgment judgment_from(const json& rec) {
  demographics::Judgment j;
  j.worker = detail::string_field(rec, "worker");
  j.image = detail::string_field(rec, "image");
  j.synset = detail::synset_field(rec, "synset");
  for (auto a : demographics::kAttributes)
    j[a] = detail::category_field(rec, std::string(demographics::to_string(a)).c_str(), a);
  const auto& nf = detail::field(rec, "none_found");
  if (!nf.is_boolean()) throw ValidationError("field 'none_found' must be a boolean");
  j.none_found = nf.get<bool>();
  return j;
}

/// Schema validation for a record payload (offset excluded). Throws
/// ValidationError describing the first problem.
inline Kind validate_record(const json& rec) {
  if (!rec.is_object()) throw ValidationError("record must be an object");
  const auto& k = detail::field(rec, "kind");
  if (!k.is_string()) throw ValidationError("field 'kind' must be a string");
  const auto kind = parse_kind(k.get<std::string>());
  if (!kind) throw ValidationError("unknown record kind '" + k.get<std::string>() + "'");
  const auto& ts = detail::field(rec, "timestamp");
  if (!ts.is_number_integer()) throw ValidationError("field 'timestamp' must be an integer");
  switch (*kind) {
    case Kind::Imageability: {
      detail::string_field(rec, "worker");
      detail::synset_field(rec, "synset");
      const auto& v = detail::field(rec, "value");
      if (!v.is_number_integer()) throw ValidationError("field 'value' must be an integer");
      const auto x = v.get<std::int64_t>();
      if (x < imageability::kMinRating || x > imageability::kMaxRating)
        throw ValidationError("rating value must be in 1..5");
      break;
    }
    case Kind::Demographic: judgment_from(rec).validate(); break;
    case Kind::Exclusion: {
      const auto engine = detail::string_field(rec, "engine");
      if (engine != "imageability" && engine != "demographics")
        throw ValidationError("exclusion engine must be 'imageability' or 'demographics'");
      detail::string_field(rec, "worker");
      detail::string_field(rec, "reason");
      break;
    }
    case Kind::Admin: {
      const auto op = detail::string_field(rec, "op");
      if (op == "checkpoint") detail::string_field(rec, "digest");
      else if (op != "note") throw ValidationError("unknown admin op '" + op + "'");
      break;
    }
  }
  return *kind;
}

struct EngineConfig {
  imageability::EngineConfig imageability;
  demographics::EngineConfig demographics;
};

/// Everything derived from the log: a pure fold of its records.
struct EngineState {
  explicit EngineState(const EngineConfig& c = {}) : imageability(c.imageability), demographics(c.demographics) {}

  imageability::Engine imageability;
  demographics::Engine demographics;

  std::string digest() const {
    ::curate::detail::Digest d;
    imageability.digest_into(d);
    demographics.digest_into(d);
    return d.hex();
  }
};

/// Throws `Rejected` without mutating if the engines would refuse `rec`.
inline void check(const EngineState& s, const json& rec) {
  switch (validate_record(rec)) {
    case Kind::Imageability:
      s.imageability.validate(rec.at("worker").get<std::string>(), SynsetId(rec.at("synset").get<std::string>()),
                              rec.at("value").get<int>());
      break;
    case Kind::Demographic: s.demographics.validate(judgment_from(rec)); break;
    case Kind::Exclusion:
    case Kind::Admin: break;
  }
}

struct ApplyOutcome {
  Kind kind = Kind::Admin;
  /// Worker newly excluded as a consequence of this record's gold answer.
  std::optional<WorkerId> excluded;
};

inline ApplyOutcome apply(EngineState& s, const json& rec) {
  ApplyOutcome out;
  out.kind = validate_record(rec);
  switch (out.kind) {
    case Kind::Imageability: {
      const auto worker = rec.at("worker").get<std::string>();
      const auto r = s.imageability.submit(worker, SynsetId(rec.at("synset").get<std::string>()),
                                           rec.at("value").get<int>());
      if (r.excluded_worker) out.excluded = worker;
      break;
    }
    case Kind::Demographic: {
      const auto j = judgment_from(rec);
      if (s.demographics.submit(j).excluded_worker) out.excluded = j.worker;
      break;
    }
    case Kind::Exclusion: {
      const auto worker = rec.at("worker").get<std::string>();
      if (rec.at("engine") == "imageability") s.imageability.exclude(worker);
      else s.demographics.exclude(worker);
      break;
    }
    case Kind::Admin: break;
  }
  return out;
}

struct LogOptions {
  /// fsync after every append. Acknowledged appends survive a crash.
  bool sync = true;
  /// Records between automatic chain checkpoints; 0 disables them.
  std::size_t checkpoint_interval = 1000;
};

struct ReplayOptions {
  /// Skip records the engines reject instead of halting. Used when rebuilding
  /// from a filtered log, where later records may target finalized tasks.
  bool skip_rejected = false;
};

struct ReplayStats {
  std::uint64_t applied = 0;
  std::uint64_t skipped = 0;
};

/// Append-only, line-delimited JSON judgment log. Offsets are dense from 0.
/// Every record contributes to a rolling FNV-1a chain; periodic `admin`
/// checkpoint records carry the chain value over all earlier lines.
/// Single appender.
class JudgmentLog {
 public:
  JudgmentLog() = default;
  JudgmentLog(const JudgmentLog&) = delete;
  JudgmentLog& operator=(const JudgmentLog&) = delete;
  JudgmentLog(JudgmentLog&& o) noexcept { *this = std::move(o); }
  JudgmentLog& operator=(JudgmentLog&& o) noexcept {
    if (this != &o) {
      close();
      records_ = std::move(o.records_);
      chain_ = o.chain_;
      fd_ = o.fd_;
      o.fd_ = -1;
      path_ = std::move(o.path_);
      options_ = o.options_;
      since_checkpoint_ = o.since_checkpoint_;
    }
    return *this;
  }
  ~JudgmentLog() { close(); }

  /// In-memory log (no persistence).
  static JudgmentLog in_memory(LogOptions options = {}) {
    JudgmentLog log;
    log.options_ = options;
    return log;
  }

  /// Opens or creates a file-backed log, verifying every existing record.
  static JudgmentLog open(const std::string& path, LogOptions options = {}) {
    JudgmentLog log;
    log.options_ = options;
    log.path_ = path;
    {
      std::ifstream in(path);
      if (in) log.load(in);
    }
    log.fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (log.fd_ < 0) throw StorageError("cannot open log '" + path + "': " + std::strerror(errno));
    return log;
  }

  /// Reads and verifies a log without opening it for writing.
  static JudgmentLog read(std::istream& in) {
    JudgmentLog log;
    log.load(in);
    return log;
  }

  static JudgmentLog read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open log '" + path + "'");
    return read(in);
  }

  std::uint64_t head() const { return records_.size(); }
  const json& at(std::uint64_t offset) const { return records_.at(offset); }
  const std::vector<json>& records() const { return records_; }
  std::string chain_digest() const { return ::curate::detail::hex64(chain_); }

  /// Validates the payload, assigns the next offset and persists it before
  /// returning. The log is unchanged if validation or the write fails.
  std::uint64_t append(json payload) {
    validate_record(payload);
    const auto offset = write(std::move(payload));
    if (options_.checkpoint_interval && ++since_checkpoint_ >= options_.checkpoint_interval) {
      since_checkpoint_ = 0;
      const auto ts = records_.back().at("timestamp").get<std::int64_t>();
      write(checkpoint_record(chain_digest(), ts));
    }
    return offset;
  }

  /// Applies records in [from, to) to `state`.
  ReplayStats replay(EngineState& state, std::uint64_t from = 0, std::optional<std::uint64_t> to = std::nullopt,
                     ReplayOptions options = {}) const {
    const auto end = to.value_or(head());
    if (from > end || end > head()) throw ValidationError("replay range beyond log head");
    ReplayStats stats;
    for (auto off = from; off < end; ++off) {
      try {
        apply(state, records_[off]);
        ++stats.applied;
      } catch (const Rejected& e) {
        if (!options.skip_rejected) throw CorruptLog(off, std::string("rejected by engine: ") + e.what());
        ++stats.skipped;
      }
    }
    return stats;
  }

  EngineState rebuild(const EngineConfig& config, ReplayOptions options = {}) const {
    EngineState s(config);
    replay(s, 0, std::nullopt, options);
    return s;
  }

 private:
  static std::string serialize(const json& rec) { return rec.dump(); }

  std::uint64_t write(json payload) {
    const auto offset = head();
    payload["offset"] = offset;
    const auto line = serialize(payload);
    if (fd_ >= 0) {
      const std::string buf = line + "\n";
      std::size_t done = 0;
      while (done < buf.size()) {
        const auto n = ::write(fd_, buf.data() + done, buf.size() - done);
        if (n < 0) {
          if (errno == EINTR) continue;
          throw StorageError("write to '" + path_ + "' failed: " + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
      }
      if (options_.sync && ::fsync(fd_) != 0)
        throw StorageError("fsync of '" + path_ + "' failed: " + std::strerror(errno));
    }
    chain_ = ::curate::detail::fnv1a(line, chain_);
    records_.push_back(std::move(payload));
    return offset;
  }

  void load(std::istream& in) {
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
      if (line.empty()) throw CorruptLog(offset, "empty line");
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::exception& e) {
        throw CorruptLog(offset, e.what());
      }
      const auto it = rec.find("offset");
      if (it == rec.end() || !it->is_number_unsigned() || it->get<std::uint64_t>() != offset)
        throw CorruptLog(offset, "offset field missing or out of sequence");
      json payload = rec;
      payload.erase("offset");
      try {
        validate_record(payload);
      } catch (const ValidationError& e) {
        throw CorruptLog(offset, e.what());
      }
      if (payload.at("kind") == "admin" && payload.at("op") == "checkpoint") {
        if (payload.at("digest").get<std::string>() != chain_digest())
          throw CorruptLog(offset, "checkpoint digest mismatch");
        since_checkpoint_ = 0;
      } else {
        ++since_checkpoint_;
      }
      chain_ = ::curate::detail::fnv1a(line, chain_);
      records_.push_back(std::move(rec));
      ++offset;
    }
  }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  std::vector<json> records_;
  std::uint64_t chain_ = ::curate::detail::kFnvOffset;
  int fd_ = -1;
  std::string path_;
  LogOptions options_;
  std::size_t since_checkpoint_ = 0;
};

/// Front door for live ingestion: checks a record against the engines,
/// persists it, then applies it. A gold answer that excludes its worker is
/// followed by an explicit exclusion record for the audit trail.
class Pipeline {
 public:
  Pipeline(JudgmentLog& log, EngineState& state) : log_(log), state_(state) {}

  std::uint64_t submit(const json& rec) {
    check(state_, rec);
    const auto offset = log_.append(rec);
    const auto out = apply(state_, log_.at(offset));
    if (out.excluded) {
      const bool img = out.kind == Kind::Imageability;
      log_.append(exclusion_record(img ? "imageability" : "demographics", *out.excluded,
                                   img ? "gold_rmse" : "gold_iou", rec.at("timestamp").get<std::int64_t>()));
    }
    return offset;
  }

  std::uint64_t submit_rating(const WorkerId& w, const SynsetId& s, int value, std::int64_t ts) {
    return submit(imageability_record(w, s, value, ts));
  }
  std::uint64_t submit_judgment(const demographics::Judgment& j, std::int64_t ts) {
    return submit(demographic_record(j, ts));
  }

  const EngineState& state() const { return state_; }
  const JudgmentLog& log() const { return log_; }

 private:
  JudgmentLog& log_;
  EngineState& state_;
};

/// Four-column TSV of the safety/imageability classification, with a
/// leading comment line of column counts.
inline std::string classification_table(const Hierarchy& h) {
  const auto r = h.classify();
  const std::vector<const std::vector<SynsetId>*> cols{&r.unsafe_offensive, &r.unsafe_sensitive,
                                                       &r.safe_non_imageable, &r.safe_imageable};
  std::ostringstream out;
  out << "# counts";
  std::size_t rows = 0;
  for (const auto* c : cols) {
    out << '\t' << c->size();
    rows = std::max(rows, c->size());
  }
  out << "\tunlabeled=" << r.unlabeled.size() << '\n';
  out << "unsafe_offensive\tunsafe_sensitive\tsafe_non_imageable\tsafe_imageable\n";
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) out << '\t';
      if (i < cols[c]->size()) out << (*cols[c])[i].str();
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace curate::store
