#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "curate/balancing.hpp"
#include "curate/demographics.hpp"
#include "curate/hierarchy.hpp"
#include "curate/imageability.hpp"
#include "curate/service.hpp"
#include "curate/stats.hpp"
#include "curate/store.hpp"
#include "curate/worker_sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace curate;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kInvalid = 2;

std::string data_dir() {
  const char* env = std::getenv("CURATE_DATA_DIR");
  return env && *env ? env : "data";
}

/// A file path that falls back to a default under the data root. Explicit
/// paths must exist; a missing default just means "not provided".
struct PathArg {
  std::string value;
  std::string fallback;
  CLI::Option* opt = nullptr;

  bool explicit_() const { return opt && opt->count() > 0; }
  std::optional<std::string> resolve() const {
    if (explicit_()) {
      if (!fs::exists(value)) throw ValidationError("file not found: " + value);
      return value;
    }
    const auto p = (fs::path(data_dir()) / fallback).string();
    if (fs::exists(p)) return p;
    return std::nullopt;
  }
  std::string require(const char* what) const {
    const auto p = resolve();
    if (!p) throw ValidationError(std::string("missing ") + what + " (pass a path or set CURATE_DATA_DIR)");
    return *p;
  }
  /// Path for an output file, e.g. a log that may not exist yet.
  std::string target() const { return explicit_() ? value : (fs::path(data_dir()) / fallback).string(); }
};

PathArg* add_path(CLI::App* app, std::vector<std::unique_ptr<PathArg>>& keep, const std::string& flag,
                  const std::string& fallback, const std::string& help) {
  keep.push_back(std::make_unique<PathArg>());
  auto* p = keep.back().get();
  p->fallback = fallback;
  p->opt = app->add_option(flag, p->value, help + " (default $CURATE_DATA_DIR/" + fallback + ")");
  return p;
}

struct Inputs {
  PathArg* graph = nullptr;
  PathArg* images = nullptr;
  PathArg* unsafe = nullptr;
  PathArg* safe = nullptr;
  PathArg* scores = nullptr;
  PathArg* image_gold = nullptr;
  PathArg* demo_gold = nullptr;
  PathArg* log = nullptr;
};

void add_hierarchy_inputs(CLI::App* app, std::vector<std::unique_ptr<PathArg>>& keep, Inputs& in) {
  in.graph = add_path(app, keep, "--graph", "graph.tsv", "synset graph file");
  in.images = add_path(app, keep, "--images", "images.tsv", "image index file");
  in.unsafe = add_path(app, keep, "--unsafe", "unsafe_synsets.txt", "unsafe synset list");
  in.safe = add_path(app, keep, "--safe", "safe_synsets.txt", "safe synset list");
  in.scores = add_path(app, keep, "--scores", "imageability_scores.txt", "imageability score file");
}

void add_engine_inputs(CLI::App* app, std::vector<std::unique_ptr<PathArg>>& keep, Inputs& in) {
  in.image_gold = add_path(app, keep, "--imageability-gold", "imageability_gold.tsv", "imageability gold questions");
  in.demo_gold = add_path(app, keep, "--demographic-gold", "demographic_gold.tsv", "demographic gold images");
  in.log = add_path(app, keep, "--log", "judgments.log", "judgment log");
}

Hierarchy load_hierarchy(const Inputs& in, bool labels = true, bool scores = true) {
  const auto graph = in.graph->require("graph file");
  Hierarchy h;
  if (const auto images = in.images->resolve()) {
    h = Hierarchy::load_files(graph, *images);
  } else {
    auto g = detail::open_input(graph);
    h = Hierarchy::load_graph(g, graph);
  }
  if (labels) {
    const auto u = in.unsafe->resolve();
    const auto s = in.safe->resolve();
    if (u || s) {
      std::ifstream uf, sf;
      std::istringstream none;
      if (u) uf = detail::open_input(*u);
      if (s) sf = detail::open_input(*s);
      std::istream& ui = u ? static_cast<std::istream&>(uf) : none;
      std::istream& si = s ? static_cast<std::istream&>(sf) : none;
      const auto counts = h.apply_safety_labels(ui, si, u.value_or("unsafe"), s.value_or("safe"));
      for (const auto& w : counts.warnings) std::cerr << "warning: " << w << '\n';
    }
  }
  if (scores) {
    if (const auto p = in.scores->resolve()) {
      auto f = detail::open_input(*p);
      for (const auto& w : h.attach_scores(f, *p).warnings) std::cerr << "warning: " << w << '\n';
    }
  }
  return h;
}

std::vector<imageability::GoldQuestion> load_image_gold(const Inputs& in) {
  if (const auto p = in.image_gold->resolve()) {
    auto f = detail::open_input(*p);
    return imageability::parse_gold_file(f, *p);
  }
  return imageability::default_gold_standard();
}

std::vector<demographics::DemographicGold> load_demo_gold(const Inputs& in) {
  if (const auto p = in.demo_gold->resolve()) {
    auto f = detail::open_input(*p);
    return demographics::parse_gold_file(f, *p);
  }
  return {};
}

store::EngineConfig engine_config(const Inputs& in, std::size_t image_cap = imageability::kDefaultCap,
                                  std::size_t demo_cap = demographics::kDefaultCap) {
  store::EngineConfig c;
  const auto ig = load_image_gold(in);
  const auto dg = load_demo_gold(in);
  c.imageability = imageability::EngineConfig::with_gold(ig, image_cap);
  c.demographics = demographics::EngineConfig::with_gold(dg, demo_cap);
  return c;
}

store::JudgmentLog open_log(const std::string& path, bool sync) {
  store::LogOptions o;
  o.sync = sync;
  return store::JudgmentLog::open(path, o);
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

void write_scores(const std::string& path, const std::map<SynsetId, double>& scores) {
  std::ofstream out(path);
  if (!out) throw store::StorageError("cannot write '" + path + "'");
  char buf[64];
  for (const auto& [id, s] : scores) {
    std::snprintf(buf, sizeof buf, "%s\t%.6f\n", id.str().c_str(), s);
    out << buf;
  }
  if (!out) throw store::StorageError("write to '" + path + "' failed");
}

std::map<SynsetId, double> read_scores(const std::string& path) {
  auto f = detail::open_input(path);
  std::map<SynsetId, double> out;
  for (const auto& [id, s] : parse_score_file(f, path))
    if (!out.emplace(SynsetId(id), s).second) throw ValidationError(path + ": duplicate synset " + id);
  return out;
}

/// `<synset_id><whitespace><number>` with no range restriction.
std::map<SynsetId, double> read_values(const std::string& path) {
  auto f = detail::open_input(path);
  std::map<SynsetId, double> out;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(f, raw)) {
    ++lineno;
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields{std::string(line)};
    std::string id;
    double v = 0;
    if (!(fields >> id >> v) || !SynsetId::is_valid(id)) throw ParseError(path, lineno, "expected '<synset_id> <value>'");
    out[SynsetId(id)] = v;
  }
  return out;
}

std::map<demographics::Category, double> parse_weights(const std::string& text) {
  std::map<demographics::Category, double> w;
  for (const auto& part : detail::split(text, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ValidationError("weights must look like Category=0.5,...");
    const auto c = demographics::parse_category(detail::trim(part.substr(0, eq)));
    if (!c) throw ValidationError("unknown category in weights: " + part);
    try {
      w[*c] = std::stod(part.substr(eq + 1));
    } catch (const std::exception&) {
      throw ValidationError("bad weight: " + part);
    }
  }
  return w;
}

int from_response(const service::ApiResponse& r) {
  print_json(r.body);
  if (r.status >= 500) return kInternal;
  return r.status >= 400 ? kInvalid : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset curation: safety filtering, imageability scoring, demographic balancing"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<PathArg>> keep;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Append line-delimited records to the judgment log");
  Inputs ingest_in;
  add_engine_inputs(ingest, keep, ingest_in);
  std::vector<std::string> ingest_files;
  bool ingest_verify = false, no_fsync = false;
  ingest->add_option("files", ingest_files, "JSONL files to append ('-' or none reads stdin)");
  ingest->add_flag("--verify", ingest_verify, "only verify and replay the log");
  ingest->add_flag("--no-fsync", no_fsync, "skip fsync after each append");

  // label
  auto* label = app.add_subcommand("label", "Apply safety labels and report filter impact");
  Inputs label_in;
  add_hierarchy_inputs(label, keep, label_in);
  std::optional<std::string> label_root;
  double label_min = kImageableThreshold;
  label->add_option("--root", label_root, "restrict counts to this subtree");
  label->add_option("--min-imageability", label_min, "threshold for the imageability filter")->capture_default_str();

  // imageability run
  auto* image = app.add_subcommand("imageability", "Imageability collection");
  image->require_subcommand(1);
  auto* image_run = image->add_subcommand("run", "Simulate rating collection over the graph");
  Inputs image_in;
  add_hierarchy_inputs(image_run, keep, image_in);
  image_in.image_gold = add_path(image_run, keep, "--gold", "imageability_gold.tsv", "gold questions");
  image_in.demo_gold = add_path(image_run, keep, "--demographic-gold", "demographic_gold.tsv", "demographic gold");
  image_in.log = add_path(image_run, keep, "--log", "judgments.log", "judgment log to append to");
  std::string image_workers, image_out;
  std::size_t image_cap = imageability::kDefaultCap;
  bool image_safe_only = false, image_no_fsync = false;
  image_run->add_option("--workers", image_workers, "simulation config (JSON)")->required();
  image_run->add_option("--cap", image_cap, "ratings cap per synset")->capture_default_str();
  image_run->add_option("--out", image_out, "write final scores here");
  image_run->add_flag("--safe-only", image_safe_only, "rate only synsets labeled safe");
  image_run->add_flag("--no-fsync", image_no_fsync, "skip fsync after each append");

  // demographics run
  auto* demo = app.add_subcommand("demographics", "Demographic annotation");
  demo->require_subcommand(1);
  auto* demo_run = demo->add_subcommand("run", "Simulate demographic judgments");
  Inputs demo_in;
  add_hierarchy_inputs(demo_run, keep, demo_in);
  demo_in.image_gold = add_path(demo_run, keep, "--imageability-gold", "imageability_gold.tsv", "imageability gold");
  demo_in.demo_gold = add_path(demo_run, keep, "--gold", "demographic_gold.tsv", "gold images");
  demo_in.log = add_path(demo_run, keep, "--log", "judgments.log", "judgment log to append to");
  std::string demo_workers;
  std::size_t demo_cap = demographics::kDefaultCap, synth_synsets = 0, synth_images = 0;
  bool demo_no_fsync = false;
  demo_run->add_option("--workers", demo_workers, "simulation config (JSON)")->required();
  demo_run->add_option("--cap", demo_cap, "judgment cap per image")->capture_default_str();
  demo_run->add_option("--synthetic-synsets", synth_synsets, "use a synthetic world with this many synsets");
  demo_run->add_option("--synthetic-images", synth_images, "images in the synthetic world");
  demo_run->add_flag("--no-fsync", demo_no_fsync, "skip fsync after each append");

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "Score summaries, correlations and distributions");
  Inputs stats_in;
  add_engine_inputs(stats_cmd, keep, stats_in);
  std::string stats_scores, stats_accuracy;
  double stats_threshold = kImageableThreshold;
  std::optional<std::string> stats_synset, stats_attribute;
  stats_cmd->add_option("--scores", stats_scores, "imageability score file");
  stats_cmd->add_option("--threshold", stats_threshold, "imageable threshold")->capture_default_str();
  stats_cmd->add_option("--accuracy", stats_accuracy, "per-synset accuracy file to correlate with scores");
  stats_cmd->add_option("--synset", stats_synset, "print the demographic distribution of this synset");
  stats_cmd->add_option("--attribute", stats_attribute, "restrict the distribution to gender, skin or age");

  // balance
  auto* bal = app.add_subcommand("balance", "Select a balanced, privacy-capped image subset");
  Inputs bal_in;
  add_engine_inputs(bal, keep, bal_in);
  std::string bal_synset, bal_attribute, bal_categories, bal_weights;
  std::uint64_t bal_seed = 0;
  bal->add_option("--synset", bal_synset, "synset id")->required();
  bal->add_option("--attribute", bal_attribute, "gender, skin or age")->required();
  bal->add_option("--categories", bal_categories, "comma-separated categories")->required();
  bal->add_option("--weights", bal_weights, "target shares, e.g. Male=0.5,Female=0.5");
  bal->add_option("--seed", bal_seed, "selection seed")->capture_default_str();

  // export
  auto* exp = app.add_subcommand("export", "Export a snapshot");
  Inputs exp_in;
  add_hierarchy_inputs(exp, keep, exp_in);
  std::string exp_format = "report";
  exp->add_option("--format", exp_format, "report | json")->check(CLI::IsMember({"report", "json"}));

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  Inputs serve_in;
  add_hierarchy_inputs(serve, keep, serve_in);
  add_engine_inputs(serve, keep, serve_in);
  std::string serve_host = "127.0.0.1", serve_config;
  int serve_port = 8080;
  bool serve_ingest = false;
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--port", serve_port, "0 picks a free port")->capture_default_str();
  serve->add_option("--config", serve_config, "JSON config; its keys override flags");
  serve->add_flag("--ingest", serve_ingest, "enable POST /ingest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (*ingest) {
      const auto config = engine_config(ingest_in);
      const auto path = ingest_in.log->target();
      if (ingest_verify) {
        const auto log = store::JudgmentLog::read_file(path);
        const auto state = log.rebuild(config);
        print_json({{"head", log.head()}, {"chain", log.chain_digest()}, {"digest", state.digest()}});
        return kOk;
      }
      auto log = open_log(path, !no_fsync);
      auto state = log.rebuild(config);
      store::Pipeline pipe(log, state);
      std::size_t accepted = 0;
      auto feed = [&](std::istream& in, const std::string& name) {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
          ++lineno;
          if (detail::trim(line).empty()) continue;
          json rec;
          try {
            rec = json::parse(line);
          } catch (const json::exception& e) {
            throw ParseError(name, lineno, e.what());
          }
          try {
            pipe.submit(rec);
          } catch (const ValidationError& e) {
            throw ParseError(name, lineno, e.what());
          }
          ++accepted;
        }
      };
      if (ingest_files.empty()) ingest_files.push_back("-");
      for (const auto& f : ingest_files) {
        if (f == "-") {
          feed(std::cin, "stdin");
        } else {
          auto in = detail::open_input(f);
          feed(in, f);
        }
      }
      print_json({{"accepted", accepted}, {"head", log.head()}, {"digest", state.digest()}});
      return kOk;
    }

    if (*label) {
      auto h = load_hierarchy(label_in, false, true);
      LabelCounts counts;
      {
        auto u = detail::open_input(label_in.unsafe->require("unsafe list"));
        auto s = detail::open_input(label_in.safe->require("safe list"));
        counts = h.apply_safety_labels(u, s, label_in.unsafe->value, label_in.safe->value);
      }
      for (const auto& w : counts.warnings) std::cerr << "warning: " << w << '\n';
      FilterOptions safe_only;
      safe_only.require_safe = true;
      if (label_root) safe_only.scope = SynsetId(*label_root);
      auto both = safe_only;
      both.min_imageability = label_min;
      const auto a = h.filter_view(safe_only);
      const auto b = h.filter_view(both);
      json out = {{"unsafe_offensive", counts.unsafe_offensive},
                  {"unsafe_sensitive", counts.unsafe_sensitive},
                  {"unsafe", counts.unsafe()},
                  {"safe", counts.safe},
                  {"unlabeled", counts.unlabeled},
                  {"skipped_unknown", counts.skipped_unknown},
                  {"safety_filter",
                   {{"kept_synsets", a.kept.size()},
                    {"removed_synsets", a.removed.size()},
                    {"kept_images", a.kept_images},
                    {"removed_images", a.removed_images}}},
                  {"imageability_filter",
                   {{"threshold", label_min},
                    {"kept_synsets", b.kept.size()},
                    {"kept_images", b.kept_images},
                    {"flagged_synsets", a.kept.size() - b.kept.size()},
                    {"flagged_images", a.kept_images - b.kept_images}}}};
      if (label_root) {
        const auto sc = h.subtree_count(SynsetId(*label_root));
        out["subtree"] = {{"inclusive", sc.inclusive}, {"exclusive", sc.exclusive}};
      }
      print_json(out);
      return kOk;
    }

    if (*image_run) {
      auto h = load_hierarchy(image_in, image_safe_only, false);
      const auto cfg = sim::load_sim_config(image_workers);
      sim::ImageabilityWorld world;
      world.gold = load_image_gold(image_in);
      std::set<SynsetId> gold_ids;
      for (const auto& g : world.gold) gold_ids.insert(g.synset);
      for (const auto& [id, s] : h.synsets()) {
        if (gold_ids.count(id)) continue;
        if (image_safe_only && s.safety != SafetyLabel::Safe) continue;
        world.truth[id] = sim::seeded_truth(cfg.seed, id);
      }
      auto run_cfg = cfg;
      run_cfg.imageability_cap = image_cap;
      const auto config = engine_config(image_in, image_cap);
      auto log = open_log(image_in.log->target(), !image_no_fsync);
      auto state = log.rebuild(config);
      const auto report = sim::simulate_imageability(world, run_cfg, log, state);
      if (!image_out.empty()) write_scores(image_out, report.scores);
      const auto summary = imageability::summarize(report.scores);
      std::size_t excluded = 0;
      for (const auto& [w, s] : report.statuses) excluded += s == imageability::WorkerStatus::Excluded;
      json hist = json::object();
      for (const auto& [k, n] : report.ratings_histogram) hist[std::to_string(k)] = n;
      print_json({{"synsets", world.truth.size()},
                  {"scored", report.scores.size()},
                  {"collecting", report.collecting},
                  {"capped", report.capped},
                  {"mean_ratings", report.mean_ratings},
                  {"median", summary.median},
                  {"at_least_threshold", summary.at_least_threshold},
                  {"workers_excluded", excluded},
                  {"ratings_histogram", hist},
                  {"log_head", log.head()},
                  {"digest", state.digest()}});
      return report.collecting ? kInternal : kOk;
    }

    if (*demo_run) {
      const auto cfg = sim::load_sim_config(demo_workers);
      const auto gold = load_demo_gold(demo_in);
      if (gold.empty()) throw ValidationError("demographic gold file is required");
      sim::DemographicWorld world;
      if (synth_synsets || synth_images) {
        if (!synth_synsets || !synth_images)
          throw ValidationError("--synthetic-synsets and --synthetic-images go together");
        world = sim::make_demographic_world(synth_synsets, synth_images, cfg.seed);
        world.gold = sim::world_from_index(Hierarchy{}, gold, cfg.seed).gold;
      } else {
        const auto h = load_hierarchy(demo_in, false, false);
        world = sim::world_from_index(h, gold, cfg.seed);
      }
      auto run_cfg = cfg;
      run_cfg.demographic_cap = demo_cap;
      const auto config = engine_config(demo_in, imageability::kDefaultCap, demo_cap);
      auto log = open_log(demo_in.log->target(), !demo_no_fsync);
      auto state = log.rebuild(config);
      const auto report = sim::simulate_demographics(world, run_cfg, log, state);
      std::size_t excluded = 0;
      for (const auto& [w, s] : report.statuses) excluded += s == demographics::WorkerStatus::Excluded;
      json hist = json::object();
      for (const auto& [k, n] : report.depth_histogram) hist[std::to_string(k)] = n;
      print_json({{"images", report.images},
                  {"resolved", report.resolved},
                  {"capped", report.capped},
                  {"collecting", report.collecting},
                  {"resolved_at_two", report.resolved_at_two},
                  {"resolved_within_four", report.resolved_within_four},
                  {"depth_histogram", hist},
                  {"workers_excluded", excluded},
                  {"log_head", log.head()},
                  {"digest", state.digest()}});
      return report.collecting ? kInternal : kOk;
    }

    if (*stats_cmd) {
      bool did = false;
      if (!stats_scores.empty()) {
        did = true;
        const auto scores = read_scores(stats_scores);
        if (scores.empty()) throw ValidationError(stats_scores + ": no scores");
        const auto s = imageability::summarize(scores, stats_threshold);
        std::printf("synsets\t%zu\n", s.count);
        std::printf("median\t%.2f\n", s.median);
        std::printf("at_least_%g\t%zu\n", stats_threshold, s.at_least_threshold);
        if (!stats_accuracy.empty()) {
          const auto acc = read_values(stats_accuracy);
          std::vector<double> x, y;
          for (const auto& [id, a] : acc) {
            const auto it = scores.find(id);
            if (it == scores.end()) continue;
            x.push_back(it->second);
            y.push_back(a);
          }
          std::printf("paired\t%zu\n", x.size());
          std::printf("pearson\t%.4f\n", stats::pearson(x, y));
        }
      }
      if (stats_synset) {
        did = true;
        const auto config = engine_config(stats_in);
        const auto log = store::JudgmentLog::read_file(stats_in.log->require("judgment log"));
        auto snap = std::make_shared<service::Snapshot>(service::Snapshot{Hierarchy{}, log.rebuild(config), log.head()});
        service::Api api(snap);
        return from_response(api.demographics(*stats_synset, stats_attribute));
      }
      if (!did) throw ValidationError("stats needs --scores or --synset");
      return kOk;
    }

    if (*bal) {
      const auto config = engine_config(bal_in);
      const auto log = store::JudgmentLog::read_file(bal_in.log->require("judgment log"));
      auto snap = std::make_shared<service::Snapshot>(service::Snapshot{Hierarchy{}, log.rebuild(config), log.head()});
      json req = {{"synset", bal_synset}, {"attribute", bal_attribute}, {"seed", bal_seed}};
      json cats = json::array();
      for (const auto& c : detail::split(bal_categories, ','))
        if (!detail::trim(c).empty()) cats.push_back(std::string(detail::trim(c)));
      req["categories"] = cats;
      if (!bal_weights.empty()) {
        json w = json::object();
        for (const auto& [c, x] : parse_weights(bal_weights)) w[std::string(demographics::to_string(c))] = x;
        req["weights"] = w;
      }
      service::Api api(snap);
      return from_response(api.balance(req.dump()));
    }

    if (*exp) {
      const auto h = load_hierarchy(exp_in);
      if (exp_format == "report") {
        std::cout << store::classification_table(h);
      } else {
        auto snap = std::make_shared<service::Snapshot>(service::Snapshot{h, store::EngineState{}, 0});
        print_json(service::Api(snap).report().body);
      }
      return kOk;
    }

    if (*serve) {
      if (!serve_config.empty()) {
        std::ifstream f(serve_config);
        if (!f) throw ValidationError("cannot open config '" + serve_config + "'");
        json c;
        try {
          c = json::parse(f);
        } catch (const json::exception& e) {
          throw ValidationError("invalid config: " + std::string(e.what()));
        }
        if (!c.is_object()) throw ValidationError("config must be a JSON object");
        if (c.contains("data_dir")) ::setenv("CURATE_DATA_DIR", c["data_dir"].get<std::string>().c_str(), 1);
        serve_host = c.value("host", serve_host);
        serve_port = c.value("port", serve_port);
        serve_ingest = c.value("ingest", serve_ingest);
        const std::pair<const char*, PathArg*> paths[] = {
            {"graph", serve_in.graph},       {"images", serve_in.images},
            {"unsafe", serve_in.unsafe},     {"safe", serve_in.safe},
            {"scores", serve_in.scores},     {"imageability_gold", serve_in.image_gold},
            {"demographic_gold", serve_in.demo_gold}, {"log", serve_in.log}};
        for (const auto& [key, arg] : paths) {
          if (!c.contains(key)) continue;
          arg->value = c[key].get<std::string>();
          arg->opt->add_result(arg->value);
        }
      }
      auto h = load_hierarchy(serve_in);
      const auto config = engine_config(serve_in);
      auto log = open_log(serve_in.log->target(), true);
      auto snap = std::make_shared<service::Snapshot>(service::Snapshot{std::move(h), log.rebuild(config), log.head()});
      service::Api api(snap);
      service::Ingestor ingestor(api, log);
      httplib::Server server;
      service::install_routes(server, api, serve_ingest ? &ingestor : nullptr);
      int port = serve_port;
      if (port == 0) {
        port = server.bind_to_any_port(serve_host);
        if (port < 0) throw store::StorageError("cannot bind " + serve_host);
      } else if (!server.bind_to_port(serve_host, port)) {
        throw store::StorageError("port " + std::to_string(port) + " is busy or unavailable");
      }
      std::printf("listening on %s:%d\n", serve_host.c_str(), port);
      std::fflush(stdout);
      return server.listen_after_bind() ? kOk : kInternal;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
