#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "curate/balancing.hpp"
#include "curate/demographics.hpp"
#include "curate/hierarchy.hpp"
#include "curate/store.hpp"

namespace curate::service {

using nlohmann::json;

/// Immutable view served to request handlers.
struct Snapshot {
  Hierarchy hierarchy;
  store::EngineState state;
  std::uint64_t offset = 0;
};

struct ApiResponse {
  int status = 200;
  json body;
};

inline ApiResponse error(int status, std::string_view code, const std::string& message) {
  return {status, {{"error", code}, {"message", message}}};
}

namespace detail {

inline std::optional<SynsetId> parse_id(const std::string& s) {
  if (!SynsetId::is_valid(s)) return std::nullopt;
  return SynsetId(s);
}

inline json distribution_json(const demographics::Distribution& d) {
  json dist = json::object();
  for (const auto& [c, n] : d.counts) dist[std::string(demographics::to_string(c))] = d.percent(c);
  return {{"resolved_images", d.resolved_images}, {"distribution", dist}};
}

}  // namespace detail

/// Request handlers over a snapshot. None of them ever emits a per-image
/// attribute label: only aggregate distributions and balanced id lists.
class Api {
 public:
  explicit Api(std::shared_ptr<const Snapshot> snap) : snap_(std::move(snap)) {}

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(mu_);
    return snap_;
  }
  void swap(std::shared_ptr<const Snapshot> next) {
    std::lock_guard lock(mu_);
    snap_ = std::move(next);
  }

  ApiResponse healthz() const { return {200, {{"status", "ok"}, {"offset", snapshot()->offset}}}; }

  /// `safety`: safe | unsafe | unsafe_offensive | unsafe_sensitive | unlabeled.
  ApiResponse list_synsets(const std::optional<std::string>& safety, const std::optional<std::string>& min_imageability,
                           const std::optional<std::string>& root = std::nullopt) const {
    const auto snap = snapshot();
    std::optional<double> min_score;
    if (min_imageability) {
      try {
        std::size_t used = 0;
        min_score = std::stod(*min_imageability, &used);
        if (used != min_imageability->size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        return error(400, "INVALID_REQUEST", "min_imageability must be a number");
      }
    }
    if (safety && *safety != "safe" && *safety != "unsafe" && *safety != "unsafe_offensive" &&
        *safety != "unsafe_sensitive" && *safety != "unlabeled")
      return error(400, "INVALID_REQUEST", "unknown safety filter '" + *safety + "'");
    std::optional<std::set<SynsetId>> scope;
    if (root) {
      const auto id = detail::parse_id(*root);
      if (!id || !snap->hierarchy.contains(*id)) return error(404, "UNKNOWN_SYNSET", "unknown synset " + *root);
      scope = snap->hierarchy.descendants(*id);
      scope->insert(*id);
    }
    json ids = json::array();
    for (const auto& [id, s] : snap->hierarchy.synsets()) {
      if (scope && !scope->count(id)) continue;
      if (safety) {
        const bool match = *safety == "unsafe" ? is_unsafe(s.safety) : to_string(s.safety) == *safety;
        if (!match) continue;
      }
      if (min_score && !(s.imageability && *s.imageability >= *min_score)) continue;
      ids.push_back(id.str());
    }
    return {200, {{"offset", snap->offset}, {"count", ids.size()}, {"synsets", ids}}};
  }

  ApiResponse get_synset(const std::string& raw) const {
    const auto snap = snapshot();
    const auto id = detail::parse_id(raw);
    if (!id || !snap->hierarchy.contains(*id)) return error(404, "UNKNOWN_SYNSET", "unknown synset " + raw);
    const auto& s = snap->hierarchy.at(*id);
    json parents = json::array(), children = json::array();
    for (const auto& p : s.parents) parents.push_back(p.str());
    for (const auto& c : s.children) children.push_back(c.str());
    json body = {{"offset", snap->offset},
                 {"id", s.id.str()},
                 {"lemmas", s.lemmas},
                 {"gloss", s.gloss},
                 {"parents", parents},
                 {"children", children},
                 {"safety", to_string(s.safety)},
                 {"image_count", snap->hierarchy.image_count(*id)}};
    body["imageability"] = s.imageability ? json(*s.imageability) : json(nullptr);
    return {200, body};
  }

  ApiResponse demographics(const std::string& raw, const std::optional<std::string>& attribute) const {
    const auto snap = snapshot();
    const auto id = detail::parse_id(raw);
    if (!id) return error(404, "UNKNOWN_SYNSET", "unknown synset " + raw);
    const auto records = snap->state.demographics.records_for(*id);
    if (!snap->hierarchy.contains(*id) && records.empty())
      return error(404, "UNKNOWN_SYNSET", "unknown synset " + raw);
    json body = {{"offset", snap->offset}, {"synset", id->str()}};
    try {
      if (attribute) {
        const auto a = demographics::parse_attribute(*attribute);
        if (!a) return error(400, "INVALID_REQUEST", "unknown attribute '" + *attribute + "'");
        body["attribute"] = *attribute;
        body.update(detail::distribution_json(demographics::synset_distribution(records, *a)));
      } else {
        json all = json::object();
        for (auto a : demographics::kAttributes)
          all[std::string(demographics::to_string(a))] =
              detail::distribution_json(demographics::synset_distribution(records, a));
        body["attributes"] = all;
      }
    } catch (const ValidationError& e) {
      return error(404, "NO_RESOLVED_RECORDS", e.what());
    }
    return {200, body};
  }

  ApiResponse balance(const std::string& text) const {
    const auto snap = snapshot();
    json req;
    try {
      req = json::parse(text);
    } catch (const json::exception& e) {
      return error(400, "INVALID_REQUEST", std::string("body is not valid JSON: ") + e.what());
    }
    balancing::BalanceRequest r;
    try {
      if (!req.is_object()) throw ValidationError("body must be an object");
      const auto sid = req.at("synset").get<std::string>();
      const auto id = detail::parse_id(sid);
      if (!id) throw ValidationError("invalid synset id '" + sid + "'");
      r.synset = *id;
      const auto a = demographics::parse_attribute(req.at("attribute").get<std::string>());
      if (!a) throw ValidationError("unknown attribute");
      r.attribute = *a;
      for (const auto& c : req.at("categories")) {
        const auto cat = demographics::parse_category(c.get<std::string>());
        if (!cat) throw ValidationError("unknown category '" + c.get<std::string>() + "'");
        r.categories.push_back(*cat);
      }
      if (req.contains("weights") && !req["weights"].is_null()) {
        std::map<demographics::Category, double> w;
        for (const auto& [k, v] : req["weights"].items()) {
          const auto cat = demographics::parse_category(k);
          if (!cat) return error(422, "BAD_WEIGHTS", "weight for unknown category '" + k + "'");
          w[*cat] = v.get<double>();
        }
        r.weights = std::move(w);
      }
      r.seed = req.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
      return error(400, "INVALID_REQUEST", e.what());
    } catch (const ValidationError& e) {
      return error(400, "INVALID_REQUEST", e.what());
    }
    try {
      balancing::validate_request(r);
      const auto records = snap->state.demographics.records_for(r.synset);
      demographics::CategorySet want;
      for (auto c : r.categories) want.insert(c);
      const auto pools = balancing::eligible_pool(records, r.attribute, want);
      const auto result = balancing::balance(r, pools);
      json counts = json::object(), before = json::object();
      for (const auto& [c, n] : result.counts) counts[std::string(demographics::to_string(c))] = n;
      for (const auto& [c, n] : result.pool_sizes) before[std::string(demographics::to_string(c))] = n;
      return {200,
              {{"offset", snap->offset},
               {"selected", result.selected},
               {"counts", counts},
               {"pool_sizes", before},
               {"total", result.total}}};
    } catch (const balancing::BalanceError& e) {
      return error(e.is_guard() ? 422 : 400, e.code(), e.what());
    }
  }

  ApiResponse report() const {
    const auto snap = snapshot();
    const auto r = snap->hierarchy.classify();
    auto ids = [](const std::vector<SynsetId>& v) {
      json a = json::array();
      for (const auto& id : v) a.push_back(id.str());
      return a;
    };
    return {200,
            {{"offset", snap->offset},
             {"counts",
              {{"unsafe_offensive", r.unsafe_offensive.size()},
               {"unsafe_sensitive", r.unsafe_sensitive.size()},
               {"safe_non_imageable", r.safe_non_imageable.size()},
               {"safe_imageable", r.safe_imageable.size()},
               {"unlabeled", r.unlabeled.size()}}},
             {"columns",
              {{"unsafe_offensive", ids(r.unsafe_offensive)},
               {"unsafe_sensitive", ids(r.unsafe_sensitive)},
               {"safe_non_imageable", ids(r.safe_non_imageable)},
               {"safe_imageable", ids(r.safe_imageable)}}}}};
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const Snapshot> snap_;
};

/// Appends line-delimited records through the pipeline on a private copy of
/// the current state, then publishes the copy. Serialized by `mu_`.
class Ingestor {
 public:
  Ingestor(Api& api, store::JudgmentLog& log) : api_(api), log_(log) {}

  ApiResponse ingest(const std::string& body) {
    std::lock_guard lock(mu_);
    const auto current = api_.snapshot();
    auto next = std::make_shared<Snapshot>(*current);
    store::Pipeline pipe(log_, next->state);
    std::istringstream lines(body);
    std::string line;
    std::size_t accepted = 0, lineno = 0;
    std::optional<ApiResponse> failure;
    while (std::getline(lines, line)) {
      ++lineno;
      if (::curate::detail::trim(line).empty()) continue;
      try {
        pipe.submit(json::parse(line));
        ++accepted;
      } catch (const Rejected& e) {
        failure = error(409, e.code(), "line " + std::to_string(lineno) + ": " + e.what());
        break;
      } catch (const ValidationError& e) {
        failure = error(400, "INVALID_RECORD", "line " + std::to_string(lineno) + ": " + e.what());
        break;
      } catch (const json::exception& e) {
        failure = error(400, "INVALID_RECORD", "line " + std::to_string(lineno) + ": " + e.what());
        break;
      }
    }
    next->offset = log_.head();
    api_.swap(next);
    if (failure) {
      failure->body["accepted"] = accepted;
      failure->body["offset"] = next->offset;
      return *failure;
    }
    return {200, {{"accepted", accepted}, {"offset", next->offset}}};
  }

 private:
  Api& api_;
  store::JudgmentLog& log_;
  std::mutex mu_;
};

inline void reply(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

inline std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

/// Registers all routes. `ingestor` may be null, which disables POST /ingest.
inline void install_routes(httplib::Server& server, Api& api, Ingestor* ingestor = nullptr) {
  server.Get("/healthz", [&api](const httplib::Request&, httplib::Response& res) { reply(res, api.healthz()); });
  server.Get("/synsets", [&api](const httplib::Request& req, httplib::Response& res) {
    reply(res, api.list_synsets(param(req, "safety"), param(req, "min_imageability"), param(req, "root")));
  });
  server.Get(R"(/synsets/([^/]+))", [&api](const httplib::Request& req, httplib::Response& res) {
    reply(res, api.get_synset(req.matches[1]));
  });
  server.Get(R"(/synsets/([^/]+)/demographics)", [&api](const httplib::Request& req, httplib::Response& res) {
    reply(res, api.demographics(req.matches[1], param(req, "attribute")));
  });
  server.Post("/balance", [&api](const httplib::Request& req, httplib::Response& res) {
    reply(res, api.balance(req.body));
  });
  server.Get("/report", [&api](const httplib::Request&, httplib::Response& res) { reply(res, api.report()); });
  if (ingestor) {
    server.Post("/ingest", [ingestor](const httplib::Request& req, httplib::Response& res) {
      reply(res, ingestor->ingest(req.body));
    });
  }
}

}  // namespace curate::service
