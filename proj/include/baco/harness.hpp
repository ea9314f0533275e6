#pragma once

/**
 * Experiment harness: configuration, prompt ingestion, generation sweeps,
 * metric evaluation, and aggregation into trade-off summaries.
 *
 * A run lives in one output directory:
 *
 *   manifest.json                   config digest, seed, stage flags, file digests
 *   traces/<method>-<label>.jsonl   one line per trace, sorted by (prompt_id, sample_id)
 *   traces/.parts/                  transient per-worker append files
 *   metrics/<method>-<label>.json   per-prompt reports, prompt-averaged means
 *   aggregate/summary.csv           coverage/dominance rollup (deterministic bytes)
 *   aggregate/summary.json
 *   aggregate/spaces.json           per-space frontiers, curves, skip reasons
 *   aggregate/switch_report.json    routing statistics per method and sweep value
 *
 * Stage contracts:
 *   generate   resumable; a (prompt, sweep) pair is skipped when the final
 *              file already holds a full group whose config digest matches.
 *              Workers append to private part files; a final merge sorts by
 *              (prompt_id, sample_id), so bytes never depend on scheduling.
 *   evaluate   reads traces, never writes them. Missing scoring backend
 *              leaves the affected metrics missing; the rest proceed.
 *   aggregate  reads metrics, never writes them. Degenerate spaces are
 *              reported and skipped; the run continues.
 *
 * Determinism: generation draws come from counter-based streams keyed by
 * (seed, prompt, sample), so reruns with one seed reproduce traces bit for
 * bit and the summary CSV byte for byte. Manifest timestamps are the only
 * wall-clock output, and nothing downstream reads them.
 */

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "baco/backend.hpp"
#include "baco/cache.hpp"
#include "baco/decoder.hpp"
#include "baco/digest.hpp"
#include "baco/http_backend.hpp"
#include "baco/lexeme.hpp"
#include "baco/lexmetrics.hpp"
#include "baco/pareto.hpp"
#include "baco/router.hpp"
#include "baco/semmetrics.hpp"
#include "baco/synthetic.hpp"

namespace baco::harness {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Pipeline-level failure: bad configuration, missing stage inputs, or a
/// backend outage that survived the retry budget.
struct RunError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ============================================================================
// Small helpers
// ============================================================================

namespace detail {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Write-then-rename keeps readers from ever seeing a torn file.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RunError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw RunError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string iso_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Human-facing sweep value: "0.3", "1", "1.5".
inline std::string format_control(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Round-trip exact rendering for values that get re-parsed.
inline std::string exact_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline bool safe_name(std::string_view name) {
  if (name.empty()) return false;
  for (const char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '_' || c == '-' || c == '+';
    if (!ok) return false;
  }
  return true;
}

/// Paths in a config resolve against the config file's directory.
inline std::string resolve_path(const std::string& base_dir, const std::string& path) {
  if (path.empty() || base_dir.empty()) return path;
  const fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

}  // namespace detail

// ============================================================================
// Metric registry
// ============================================================================

/**
 * Every diversity metric carries its space group, its orientation, and the
 * best value theoretically reachable by a group of n outputs. The
 * theoretical end anchors the far edge of the feasible region; the near
 * edge comes from the aligned model at temperature 1.
 */
struct DiversityInfo {
  pareto::SpaceGroup group = pareto::SpaceGroup::lexical;
  pareto::Orientation orientation = pareto::Orientation::higher_better;
  double (*best)(int n) = nullptr;
};

inline const std::map<std::string, DiversityInfo>& diversity_registry() {
  using pareto::Orientation;
  using pareto::SpaceGroup;
  static const std::map<std::string, DiversityInfo> registry = {
      {"distinct_1", {SpaceGroup::lexical, Orientation::higher_better, [](int) { return 1.0; }}},
      {"distinct_2", {SpaceGroup::lexical, Orientation::higher_better, [](int) { return 1.0; }}},
      {"distinct_3", {SpaceGroup::lexical, Orientation::higher_better, [](int) { return 1.0; }}},
      {"ead_1", {SpaceGroup::lexical, Orientation::higher_better, [](int) { return 1.0; }}},
      {"ead_2", {SpaceGroup::lexical, Orientation::higher_better, [](int) { return 1.0; }}},
      {"ead_3", {SpaceGroup::lexical, Orientation::higher_better, [](int) { return 1.0; }}},
      {"self_bleu", {SpaceGroup::lexical, Orientation::lower_better, [](int) { return 0.0; }}},
      {"self_rouge_l", {SpaceGroup::lexical, Orientation::lower_better, [](int) { return 0.0; }}},
      {"cosine_dissimilarity",
       {SpaceGroup::semantic, Orientation::higher_better, [](int) { return 2.0; }}},
      {"vendi",
       {SpaceGroup::semantic, Orientation::higher_better,
        [](int n) { return static_cast<double>(n); }}},
      {"nli_diversity", {SpaceGroup::semantic, Orientation::lower_better, [](int) { return 0.0; }}},
      {"distinct_score",
       {SpaceGroup::semantic, Orientation::higher_better,
        [](int n) { return static_cast<double>(n); }}},
      {"semantic_entropy",
       {SpaceGroup::semantic, Orientation::higher_better,
        [](int n) { return std::log(static_cast<double>(std::max(n, 1))); }}},
  };
  return registry;
}

/// The standard battery. distinct_score and semantic_entropy stay opt-in:
/// both need the clustering path, which small smoke runs may not configure.
inline std::vector<std::string> default_diversity_metrics() {
  return {"distinct_1", "distinct_2",   "distinct_3", "ead_1",
          "ead_2",      "ead_3",        "self_bleu",  "self_rouge_l",
          "cosine_dissimilarity", "vendi", "nli_diversity"};
}

/// Quality metrics are stored higher-is-better so region anchors share one
/// orientation; perplexity enters negated.
inline bool quality_metric_known(std::string_view name) {
  return name == "neg_perplexity" || name == "reward" || name == "mean_logprob";
}

inline std::vector<std::string> default_quality_metrics() {
  return {"neg_perplexity", "reward"};
}

// ============================================================================
// Configuration
// ============================================================================

/// Exactly one of `http` (a server URL) or `synthetic` (an inline config
/// object, or the path of a JSON file holding one).
struct BackendSpec {
  std::string http_url;
  nlohmann::json synthetic;

  bool is_http() const { return !http_url.empty(); }

  static BackendSpec from_json(const nlohmann::json& j, const std::string& base_dir) {
    BackendSpec spec;
    const bool has_http = j.contains("http");
    const bool has_synth = j.contains("synthetic");
    if (has_http == has_synth)
      throw RunError("backend spec needs exactly one of 'http' or 'synthetic'");
    if (has_http) {
      spec.http_url = j.at("http").get<std::string>();
      if (spec.http_url.empty()) throw RunError("backend spec: empty 'http' url");
    } else {
      const auto& s = j.at("synthetic");
      if (s.is_string()) {
        const std::string path = detail::resolve_path(base_dir, s.get<std::string>());
        spec.synthetic = nlohmann::json::parse(detail::read_file(path));
      } else if (s.is_object()) {
        spec.synthetic = s;
      } else {
        throw RunError("backend spec: 'synthetic' must be a path or an object");
      }
    }
    return spec;
  }
};

struct MethodSpec {
  enum class Kind { baco, base_only, aligned_only };

  Kind kind = Kind::baco;
  std::string name;                  // output label; defaulted from the kind
  std::string strategy;              // baco only, e.g. "P" or "Punc-P"
  std::vector<double> gammas;        // baco sweep; empty only for gamma-free strategies
  std::vector<double> temperatures;  // single-model sweep
};

inline const char* to_string(MethodSpec::Kind k) {
  switch (k) {
    case MethodSpec::Kind::baco: return "baco";
    case MethodSpec::Kind::base_only: return "base_only";
    case MethodSpec::Kind::aligned_only: return "aligned_only";
  }
  return "?";
}

inline std::vector<double> default_gamma_grid() {
  return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
}

inline std::vector<double> default_temperature_grid() { return {0.6, 0.8, 1.0, 1.2, 1.5}; }

struct ExperimentConfig {
  std::string prompts_file;
  std::string output_dir;
  std::string lexicon_file;  // required only by strategies that classify words
  BackendSpec base;
  BackendSpec aligned;
  std::optional<BackendSpec> scoring;
  std::vector<MethodSpec> methods;
  decoding::GenerationConfig generation;
  std::vector<std::string> diversity_metrics = default_diversity_metrics();
  std::vector<std::string> quality_metrics = default_quality_metrics();
  int workers = 4;
  std::string digest;  // sha256 of the config document; key order never matters

  static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir) {
    ExperimentConfig cfg;
    cfg.digest = baco::detail::sha256_hex(j.dump());

    cfg.prompts_file = detail::resolve_path(base_dir, j.at("prompts_file").get<std::string>());
    cfg.output_dir = detail::resolve_path(base_dir, j.at("output_dir").get<std::string>());
    if (j.contains("lexicon_file"))
      cfg.lexicon_file = detail::resolve_path(base_dir, j.at("lexicon_file").get<std::string>());

    const auto& backends = j.at("backends");
    cfg.base = BackendSpec::from_json(backends.at("base"), base_dir);
    cfg.aligned = BackendSpec::from_json(backends.at("aligned"), base_dir);
    if (backends.contains("scoring"))
      cfg.scoring = BackendSpec::from_json(backends.at("scoring"), base_dir);

    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      cfg.generation.max_tokens = g.value("max_tokens", cfg.generation.max_tokens);
      cfg.generation.samples_per_prompt =
          g.value("samples_per_prompt", cfg.generation.samples_per_prompt);
      cfg.generation.seed = g.value("seed", cfg.generation.seed);
      cfg.generation.system = g.value("system", cfg.generation.system);
      cfg.generation.sampling.temperature =
          g.value("temperature", cfg.generation.sampling.temperature);
      cfg.generation.sampling.top_p = g.value("top_p", cfg.generation.sampling.top_p);
      cfg.generation.max_word_pieces = g.value("max_word_pieces", cfg.generation.max_word_pieces);
      cfg.generation.retry_limit = g.value("retry_limit", cfg.generation.retry_limit);
    }
    if (cfg.generation.max_tokens < 1) throw RunError("generation.max_tokens must be >= 1");
    if (cfg.generation.samples_per_prompt < 1)
      throw RunError("generation.samples_per_prompt must be >= 1");

    if (!j.contains("methods") || !j.at("methods").is_array() || j.at("methods").empty())
      throw RunError("config needs a non-empty 'methods' array");
    for (const auto& mj : j.at("methods")) cfg.methods.push_back(parse_method(mj));

    std::set<std::string> names;
    for (const MethodSpec& m : cfg.methods)
      if (!names.insert(m.name).second) throw RunError("duplicate method name '" + m.name + "'");

    if (j.contains("metrics")) {
      const auto& mj = j.at("metrics");
      if (mj.contains("diversity"))
        cfg.diversity_metrics = mj.at("diversity").get<std::vector<std::string>>();
      if (mj.contains("quality"))
        cfg.quality_metrics = mj.at("quality").get<std::vector<std::string>>();
    }
    validate_metric_list(cfg.diversity_metrics, true);
    validate_metric_list(cfg.quality_metrics, false);

    cfg.workers = j.value("workers", cfg.workers);
    if (cfg.workers < 1) throw RunError("workers must be >= 1");
    return cfg;
  }

  static ExperimentConfig load(const std::string& path) {
    const nlohmann::json j = nlohmann::json::parse(detail::read_file(path));
    return from_json(j, std::filesystem::path(path).parent_path().string());
  }

 private:
  static MethodSpec parse_method(const nlohmann::json& j) {
    MethodSpec m;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "baco")
      m.kind = MethodSpec::Kind::baco;
    else if (kind == "base_only")
      m.kind = MethodSpec::Kind::base_only;
    else if (kind == "aligned_only")
      m.kind = MethodSpec::Kind::aligned_only;
    else
      throw RunError("method kind '" + kind + "' unknown (baco | base_only | aligned_only)");

    if (m.kind == MethodSpec::Kind::baco) {
      m.strategy = j.at("strategy").get<std::string>();
      // Probe: thresholded strategies refuse to parse without a gamma.
      bool thresholded = false;
      try {
        router::StrategySpec::parse(m.strategy);
      } catch (const std::invalid_argument&) {
        thresholded = true;
      }
      if (j.contains("gammas")) {
        m.gammas = j.at("gammas").get<std::vector<double>>();
        if (m.gammas.empty()) throw RunError("method '" + m.strategy + "': empty gamma sweep");
        if (!thresholded)
          throw RunError("strategy '" + m.strategy + "' has no threshold to sweep");
      } else if (thresholded) {
        m.gammas = default_gamma_grid();
      }
      // Domain check up front so a bad sweep fails before any decoding.
      for (const double g : m.gammas)
        router::StrategySpec::parse(m.strategy + ":" + detail::exact_double(g));
      m.name = j.value("name", "baco-" + m.strategy);
    } else {
      if (j.contains("temperatures")) {
        m.temperatures = j.at("temperatures").get<std::vector<double>>();
        if (m.temperatures.empty()) throw RunError("empty temperature sweep");
      } else {
        m.temperatures = default_temperature_grid();
      }
      for (const double t : m.temperatures)
        if (!(t > 0.0)) throw RunError("temperatures must be > 0");
      m.name = j.value("name", m.kind == MethodSpec::Kind::base_only ? "base" : "aligned");
    }
    if (!detail::safe_name(m.name))
      throw RunError("method name '" + m.name + "' (letters, digits, . _ - + only)");
    return m;
  }

  static void validate_metric_list(const std::vector<std::string>& names, bool diversity) {
    if (names.empty()) throw RunError("metric list must be non-empty");
    std::set<std::string> seen;
    for (const std::string& n : names) {
      const bool known =
          diversity ? diversity_registry().count(n) > 0 : quality_metric_known(n);
      if (!known)
        throw RunError(std::string(diversity ? "diversity" : "quality") + " metric '" + n +
                       "' unknown");
      if (!seen.insert(n).second) throw RunError("metric '" + n + "' listed twice");
    }
  }
};

// ============================================================================
// Backends from specs
// ============================================================================

inline std::shared_ptr<ModelBackend> make_model(const BackendSpec& spec) {
  if (spec.is_http()) return std::make_shared<HttpModelBackend>(spec.http_url, HttpConfig{});
  return std::make_shared<SyntheticModel>(SyntheticModel::Config::from_json(spec.synthetic));
}

inline std::shared_ptr<ScoringBackends> make_scoring(const BackendSpec& spec) {
  if (spec.is_http()) return std::make_shared<HttpScoring>(spec.http_url, HttpConfig{});
  return std::make_shared<SyntheticScoring>(SyntheticScoring::Config::from_json(spec.synthetic));
}

// ============================================================================
// Prompts
// ============================================================================

/// JSONL, one {"prompt_id", "text"} object per line; blank lines skipped.
inline std::vector<decoding::Prompt> load_prompts(const std::string& path) {
  std::istringstream in(detail::read_file(path));
  std::vector<decoding::Prompt> prompts;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      decoding::Prompt p{j.at("prompt_id").get<std::string>(), j.at("text").get<std::string>()};
      if (p.id.empty() || p.text.empty())
        throw RunError("prompt_id and text must be non-empty");
      if (!ids.insert(p.id).second) throw RunError("duplicate prompt_id '" + p.id + "'");
      prompts.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw RunError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (prompts.empty()) throw RunError(path + ": no prompts");
  return prompts;
}

// ============================================================================
// Jobs: one (method, sweep value) unit
// ============================================================================

struct Job {
  std::string method;  // method name as reported in outputs
  MethodSpec::Kind kind = MethodSpec::Kind::baco;
  std::string label;      // "g0.3" | "T0.8" | "fixed"
  std::string stem;       // "<method>-<label>", the file basename
  double control = 0.0;   // gamma or temperature behind the label
  bool has_control = true;
  bool single = false;    // decode with one model instead of the pair
  bool use_base = false;  // which model a single-model job decodes with
  decoding::GenerationConfig cfg;
};

inline std::vector<Job> enumerate_jobs(const ExperimentConfig& config, std::uint64_t seed) {
  std::vector<Job> jobs;
  std::set<std::string> stems;
  for (const MethodSpec& m : config.methods) {
    const auto push = [&](Job job) {
      job.method = m.name;
      job.kind = m.kind;
      job.stem = m.name + "-" + job.label;
      job.cfg.seed = seed;
      if (!stems.insert(job.stem).second)
        throw RunError("duplicate sweep label '" + job.stem + "'");
      jobs.push_back(std::move(job));
    };
    if (m.kind == MethodSpec::Kind::baco) {
      if (m.gammas.empty()) {
        Job job;
        job.cfg = config.generation;
        job.cfg.strategy = router::StrategySpec::parse(m.strategy);
        job.label = "fixed";
        job.has_control = false;
        push(std::move(job));
      } else {
        for (const double g : m.gammas) {
          Job job;
          job.cfg = config.generation;
          job.cfg.strategy =
              router::StrategySpec::parse(m.strategy + ":" + detail::exact_double(g));
          job.label = "g" + detail::format_control(g);
          job.control = g;
          push(std::move(job));
        }
      }
    } else {
      for (const double t : m.temperatures) {
        Job job;
        job.cfg = config.generation;
        job.cfg.sampling.temperature = t;
        job.label = "T" + detail::format_control(t);
        job.control = t;
        job.single = true;
        job.use_base = m.kind == MethodSpec::Kind::base_only;
        push(std::move(job));
      }
    }
  }
  return jobs;
}

// ============================================================================
// Manifest
// ============================================================================

struct RunManifest {
  std::string config_digest;
  std::string code_version = kCodeVersion;
  std::uint64_t seed = 0;
  std::string created_at;
  std::string updated_at;
  std::map<std::string, bool> stages;        // generate / evaluate / aggregate
  std::map<std::string, std::string> files;  // path relative to output_dir -> sha256

  nlohmann::json to_json() const {
    return {{"config_digest", config_digest}, {"code_version", code_version},
            {"seed", seed},                   {"created_at", created_at},
            {"updated_at", updated_at},       {"stages", stages},
            {"files", files}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config_digest = j.at("config_digest").get<std::string>();
    m.code_version = j.value("code_version", std::string{});
    m.seed = j.at("seed").get<std::uint64_t>();
    m.created_at = j.value("created_at", std::string{});
    m.updated_at = j.value("updated_at", std::string{});
    if (j.contains("stages"))
      m.stages = j.at("stages").get<std::map<std::string, bool>>();
    if (j.contains("files"))
      m.files = j.at("files").get<std::map<std::string, std::string>>();
    return m;
  }

  void record_file(const std::string& output_dir, const std::string& rel_path) {
    files[rel_path] = baco::detail::sha256_hex(
        detail::read_file(std::filesystem::path(output_dir) / rel_path));
  }

  void save(const std::string& output_dir) {
    updated_at = detail::iso_timestamp();
    if (created_at.empty()) created_at = updated_at;
    detail::write_file_atomic(std::filesystem::path(output_dir) / "manifest.json",
                              to_json().dump(2) + "\n");
  }

  static std::optional<RunManifest> load(const std::string& output_dir) {
    const auto path = std::filesystem::path(output_dir) / "manifest.json";
    if (!std::filesystem::exists(path)) return std::nullopt;
    return from_json(nlohmann::json::parse(detail::read_file(path)));
  }
};

/// Load the directory's manifest or start a fresh one. A directory that
/// belongs to a different config (or, when checked, a different seed) is
/// refused rather than silently mixed.
inline RunManifest open_manifest(const ExperimentConfig& config,
                                 std::optional<std::uint64_t> expect_seed) {
  if (auto existing = RunManifest::load(config.output_dir)) {
    if (existing->config_digest != config.digest)
      throw RunError("output_dir '" + config.output_dir +
                     "' holds a run with a different config; use a fresh directory");
    if (expect_seed && existing->seed != *expect_seed)
      throw RunError("output_dir '" + config.output_dir + "' holds a run with seed " +
                     std::to_string(existing->seed) + "; rerun with it or use a fresh directory");
    return *existing;
  }
  RunManifest m;
  m.config_digest = config.digest;
  m.seed = expect_seed.value_or(config.generation.seed);
  return m;
}

// ============================================================================
// Worker pool
// ============================================================================

namespace detail {

/// Run fn(task_index, worker_id) over [0, count). The first exception stops
/// new tasks; in-flight ones finish. Returns the first error message.
template <typename Fn>
std::optional<std::string> parallel_run(int workers, std::size_t count, Fn&& fn) {
  workers = std::max(1, std::min(workers, 64));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex err_mutex;
  std::optional<std::string> error;
  const auto body = [&](int wid) {
    while (!stop.load(std::memory_order_relaxed)) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) break;
      try {
        fn(i, wid);
      } catch (const std::exception& e) {
        const std::lock_guard<std::mutex> lock(err_mutex);
        if (!error) error = std::string(e.what());
        stop.store(true, std::memory_order_relaxed);
      }
    }
  };
  if (workers == 1 || count <= 1) {
    body(0);
    return error;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body, w);
  for (auto& t : pool) t.join();
  return error;
}

}  // namespace detail

// ============================================================================
// Generation stage
// ============================================================================

struct RunOptions {
  int workers = 0;  // 0 = take the config value
  std::optional<std::uint64_t> seed;
  bool resume = true;
};

struct GenerateReport {
  int jobs = 0;
  int groups_generated = 0;
  int groups_resumed = 0;
  std::vector<std::string> files;  // relative paths of the merged trace files
};

namespace detail {

/// decode_single with the same retry contract decode_group gives the pair.
inline std::vector<decoding::GenerationTrace> single_group(const decoding::Prompt& prompt,
                                                           const ModelBackend& model,
                                                           const decoding::GenerationConfig& cfg) {
  std::vector<decoding::GenerationTrace> group;
  group.reserve(static_cast<std::size_t>(cfg.samples_per_prompt));
  for (int sample = 0; sample < cfg.samples_per_prompt; ++sample) {
    int attempts = 0;
    while (true) {
      try {
        group.push_back(decoding::decode_single(prompt, model, cfg, sample));
        break;
      } catch (const BackendError& e) {
        if (!e.retryable || ++attempts >= cfg.retry_limit) throw;
      }
    }
  }
  return group;
}

inline void sort_traces(std::vector<decoding::GenerationTrace>& traces) {
  std::sort(traces.begin(), traces.end(),
            [](const decoding::GenerationTrace& a, const decoding::GenerationTrace& b) {
              return a.prompt_id != b.prompt_id ? a.prompt_id < b.prompt_id
                                                : a.sample_id < b.sample_id;
            });
}

inline std::vector<decoding::GenerationTrace> parse_trace_lines(const std::string& content,
                                                                const std::string& origin) {
  std::vector<decoding::GenerationTrace> traces;
  std::istringstream in(content);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      traces.push_back(decoding::GenerationTrace::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw RunError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return traces;
}

/// Groups from an existing trace file that count as done: full sample set,
/// every trace stamped with this job's config digest. Anything else is
/// regenerated, so stale or partial files heal themselves.
inline std::map<std::string, std::vector<decoding::GenerationTrace>> completed_groups(
    const fs::path& file, const std::string& expected_digest, int samples_per_prompt) {
  std::map<std::string, std::vector<decoding::GenerationTrace>> groups;
  if (!fs::exists(file)) return groups;
  for (auto& t : parse_trace_lines(read_file(file), file.string()))
    groups[t.prompt_id].push_back(std::move(t));
  for (auto it = groups.begin(); it != groups.end();) {
    auto& traces = it->second;
    std::set<int> samples;
    bool ok = static_cast<int>(traces.size()) == samples_per_prompt;
    for (const auto& t : traces) {
      ok = ok && t.config_digest == expected_digest && samples.insert(t.sample_id).second;
    }
    ok = ok && (samples.empty() || (*samples.begin() == 0 &&
                                    *samples.rbegin() == samples_per_prompt - 1));
    it = ok ? std::next(it) : groups.erase(it);
  }
  return groups;
}

}  // namespace detail

inline GenerateReport run_generate(const ExperimentConfig& config, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  const std::uint64_t seed = opt.seed.value_or(config.generation.seed);
  const int workers = std::max(1, std::min(opt.workers > 0 ? opt.workers : config.workers, 64));

  RunManifest manifest = open_manifest(config, seed);
  const std::vector<decoding::Prompt> prompts = load_prompts(config.prompts_file);
  std::vector<Job> jobs = enumerate_jobs(config, seed);

  const std::shared_ptr<ModelBackend> base = make_model(config.base);
  const std::shared_ptr<ModelBackend> aligned = make_model(config.aligned);
  std::shared_ptr<ScoringBackends> judge;
  std::optional<lexeme::Lexicon> lexicon;
  for (const Job& job : jobs) {
    if (job.cfg.strategy.needs_lexicon() && !lexicon) {
      if (config.lexicon_file.empty())
        throw RunError("strategy needs a function-word lexicon; set lexicon_file");
      lexicon = lexeme::Lexicon::load(config.lexicon_file);
    }
    if (job.cfg.strategy.needs_judge() && !judge) {
      if (!config.scoring) throw RunError("strategy needs a judge; configure a scoring backend");
      judge = make_scoring(*config.scoring);
    }
  }

  const fs::path out_dir(config.output_dir);
  const fs::path traces_dir = out_dir / "traces";
  const fs::path parts_dir = traces_dir / ".parts";
  fs::create_directories(parts_dir);
  // Parts are private to one run; leftovers from a crash would double up.
  for (const auto& entry : fs::directory_iterator(parts_dir)) fs::remove(entry.path());

  // Per-job expected digest lets resumed files prove they match this run.
  std::vector<std::string> expected(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& job = jobs[i];
    const ModelBackend& b = job.single ? (job.use_base ? *base : *aligned) : *base;
    const ModelBackend& a = job.single ? (job.use_base ? *base : *aligned) : *aligned;
    expected[i] = decoding::config_digest(job.cfg, b, a);
  }

  GenerateReport report;
  report.jobs = static_cast<int>(jobs.size());

  std::vector<std::map<std::string, std::vector<decoding::GenerationTrace>>> kept(jobs.size());
  if (opt.resume) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      kept[i] = detail::completed_groups(traces_dir / (jobs[i].stem + ".jsonl"), expected[i],
                                         config.generation.samples_per_prompt);
      report.groups_resumed += static_cast<int>(kept[i].size());
    }
  }

  struct Task {
    std::size_t job;
    std::size_t prompt;
  };
  std::vector<Task> tasks;
  for (std::size_t j = 0; j < jobs.size(); ++j)
    for (std::size_t p = 0; p < prompts.size(); ++p)
      if (!kept[j].count(prompts[p].id)) tasks.push_back({j, p});

  std::vector<std::map<std::size_t, std::ofstream>> part_streams(
      static_cast<std::size_t>(workers));
  const auto error = detail::parallel_run(
      workers, tasks.size(), [&](std::size_t idx, int wid) {
        const Task& task = tasks[idx];
        const Job& job = jobs[task.job];
        const decoding::Prompt& prompt = prompts[task.prompt];
        std::vector<decoding::GenerationTrace> group;
        if (job.single) {
          const ModelBackend& model = job.use_base ? *base : *aligned;
          group = detail::single_group(prompt, model, job.cfg);
        } else {
          group = decoding::decode_group(prompt, *base, *aligned, job.cfg,
                                         lexicon ? &*lexicon : nullptr, judge.get());
        }
        auto& streams = part_streams[static_cast<std::size_t>(wid)];
        auto it = streams.find(task.job);
        if (it == streams.end()) {
          const fs::path p = parts_dir / (job.stem + ".w" + std::to_string(wid) + ".part");
          it = streams.emplace(task.job, std::ofstream(p, std::ios::binary)).first;
          if (!it->second) throw RunError("cannot write '" + p.string() + "'");
        }
        for (const auto& trace : group) it->second << trace.to_json().dump() << '\n';
        it->second.flush();
      });
  for (auto& streams : part_streams)
    for (auto& [job_idx, stream] : streams) stream.close();

  // Merge: resumed groups plus everything the workers finished, one sorted
  // rewrite per job. On failure this still lands the completed work.
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    std::vector<decoding::GenerationTrace> traces;
    for (auto& [pid, group] : kept[j])
      for (auto& t : group) traces.push_back(std::move(t));
    for (int w = 0; w < workers; ++w) {
      const fs::path part = parts_dir / (jobs[j].stem + ".w" + std::to_string(w) + ".part");
      if (!fs::exists(part)) continue;
      for (auto& t : detail::parse_trace_lines(detail::read_file(part), part.string()))
        traces.push_back(std::move(t));
    }
    if (traces.empty()) continue;
    detail::sort_traces(traces);
    std::string content;
    for (const auto& t : traces) content += t.to_json().dump() + '\n';
    const std::string rel = "traces/" + jobs[j].stem + ".jsonl";
    detail::write_file_atomic(out_dir / rel, content);
    manifest.record_file(config.output_dir, rel);
    report.files.push_back(rel);
    report.groups_generated +=
        static_cast<int>(traces.size() / std::max(1, config.generation.samples_per_prompt)) -
        static_cast<int>(kept[j].size());
    for (int w = 0; w < workers; ++w)
      fs::remove(parts_dir / (jobs[j].stem + ".w" + std::to_string(w) + ".part"));
  }

  manifest.seed = seed;
  manifest.stages["generate"] = !error.has_value();
  manifest.save(config.output_dir);
  if (error) throw RunError("generate: " + *error + " (partial progress preserved)");
  return report;
}

// ============================================================================
// Evaluation stage
// ============================================================================

namespace detail {

struct GroupReports {
  lexmetrics::LexicalReport lex;
  semmetrics::SemanticReport sem;
  std::optional<double> mean_logprob;
};

/// One accessor for every metric name the config may enable. Non-finite
/// values (infinite perplexity, -inf log-probs) read as missing.
inline std::optional<double> metric_value(const GroupReports& r, const std::string& name) {
  std::optional<double> v;
  if (name == "distinct_1" || name == "distinct_2" || name == "distinct_3")
    v = r.lex.distinct.at(name.back() - '0');
  else if (name == "ead_1" || name == "ead_2" || name == "ead_3")
    v = r.lex.ead.at(name.back() - '0');
  else if (name == "self_bleu")
    v = r.lex.self_bleu;
  else if (name == "self_rouge_l")
    v = r.lex.self_rouge_l;
  else if (name == "cosine_dissimilarity")
    v = r.sem.cosine_dissimilarity;
  else if (name == "vendi")
    v = r.sem.vendi;
  else if (name == "nli_diversity")
    v = r.sem.nli_diversity;
  else if (name == "distinct_score")
    v = r.sem.distinct_score ? std::optional<double>(*r.sem.distinct_score) : std::nullopt;
  else if (name == "semantic_entropy")
    v = r.sem.semantic_entropy;
  else if (name == "neg_perplexity")
    v = r.sem.perplexity ? std::optional<double>(-*r.sem.perplexity) : std::nullopt;
  else if (name == "reward")
    v = r.sem.mean_reward;
  else if (name == "mean_logprob")
    v = r.mean_logprob;
  else
    throw RunError("metric '" + name + "' unknown");
  if (v && !std::isfinite(*v)) return std::nullopt;
  return v;
}

/// Routing statistics for one job's traces. A routed decision is any token
/// the router actually placed: everything except the forced first token and
/// word-continuation pieces.
inline nlohmann::json switch_stats(const std::vector<decoding::GenerationTrace>& traces) {
  std::vector<long long> decisions, base_hits, switches;
  long long total_decisions = 0, total_base = 0, total_switches = 0, total_tokens = 0;
  const auto at = [](std::vector<long long>& v, std::size_t i) -> long long& {
    if (v.size() <= i) v.resize(i + 1, 0);
    return v[i];
  };
  for (const auto& trace : traces) {
    for (std::size_t i = 0; i < trace.tokens.size(); ++i) {
      ++total_tokens;
      const auto& tok = trace.tokens[i];
      if (i > 0 && tok.source != trace.tokens[i - 1].source) {
        ++at(switches, i);
        ++total_switches;
      }
      if (tok.reason == "first_token" || tok.reason == "cont") continue;
      ++at(decisions, i);
      ++total_decisions;
      if (tok.source == decoding::Source::base) {
        ++at(base_hits, i);
        ++total_base;
      }
    }
  }
  return {{"traces", traces.size()},
          {"total_decisions", total_decisions},
          {"total_base", total_base},
          {"total_switches", total_switches},
          {"mean_trace_length",
           traces.empty() ? 0.0 : static_cast<double>(total_tokens) / traces.size()},
          {"decisions_by_position", decisions},
          {"base_by_position", base_hits},
          {"switches_by_position", switches}};
}

}  // namespace detail

/// Evaluate one job's traces into the metrics document. Exposed so tests
/// can drive a single job; run_evaluate handles the whole sweep.
inline nlohmann::json evaluate_job(const ExperimentConfig& config, const Job& job,
                                   const std::map<std::string, std::string>& prompt_text,
                                   const ModelBackend& aligned, ScoringBackends* scoring) {
  namespace fs = std::filesystem;
  const fs::path trace_path = fs::path(config.output_dir) / "traces" / (job.stem + ".jsonl");
  if (!fs::exists(trace_path))
    throw RunError("evaluate: missing trace file '" + trace_path.string() +
                   "'; run the generate stage first");
  std::vector<decoding::GenerationTrace> traces =
      detail::parse_trace_lines(detail::read_file(trace_path), trace_path.string());
  detail::sort_traces(traces);

  std::map<std::string, std::vector<const decoding::GenerationTrace*>> groups;
  for (const auto& t : traces) groups[t.prompt_id].push_back(&t);

  nlohmann::json per_prompt = nlohmann::json::object();
  std::map<std::string, std::vector<double>> collected;
  std::map<std::string, int> missing_counts;
  std::vector<std::string> enabled = config.diversity_metrics;
  enabled.insert(enabled.end(), config.quality_metrics.begin(), config.quality_metrics.end());

  for (const auto& [pid, group] : groups) {
    const auto text_it = prompt_text.find(pid);
    if (text_it == prompt_text.end())
      throw RunError("evaluate: trace prompt '" + pid + "' is not in the prompts file");

    std::vector<std::string> texts;
    std::vector<std::vector<Token>> token_seqs;
    std::vector<std::vector<std::string>> surfaces;
    std::vector<std::size_t> lengths;
    for (const auto* t : group) {
      texts.push_back(t->text);
      token_seqs.push_back(aligned.tokenize(t->text));
      std::vector<std::string> s;
      for (const Token& tok : token_seqs.back()) s.push_back(tok.surface);
      lengths.push_back(s.size());
      surfaces.push_back(std::move(s));
    }

    const std::vector<Token> ctx =
        aligned.chat_context(config.generation.system, text_it->second);
    std::vector<double> seq_lps;
    for (std::size_t i = 0; i < texts.size(); ++i)
      seq_lps.push_back(aligned.sequence_logprob(ctx, token_seqs[i]));

    detail::GroupReports reports;
    reports.lex = lexmetrics::lexical_report(texts, surfaces, aligned.vocab_size());
    if (scoring) {
      std::vector<double> rewards;
      for (const std::string& text : texts) {
        const auto r = semmetrics::detail::with_retries(
            [&] { return scoring->reward(text_it->second, text); });
        if (!r) {
          rewards.clear();
          break;
        }
        rewards.push_back(*r);
      }
      reports.sem = semmetrics::semantic_report(texts, *scoring, seq_lps, lengths, rewards);
    } else {
      const auto ppl = semmetrics::perplexity(seq_lps, lengths);
      reports.sem.perplexity = ppl.value;
      reports.sem.perplexity_excluded = ppl.excluded;
    }
    if (!seq_lps.empty()) {
      double sum = 0.0;
      for (const double lp : seq_lps) sum += lp;
      reports.mean_logprob = sum / static_cast<double>(seq_lps.size());
    }

    nlohmann::json quality_metrics = nlohmann::json::object();
    nlohmann::json quality_missing = nlohmann::json::array();
    for (const std::string& name : config.quality_metrics) {
      if (const auto v = detail::metric_value(reports, name))
        quality_metrics[name] = *v;
      else
        quality_missing.push_back(name);
    }
    per_prompt[pid] = {{"lexical", reports.lex.to_json()},
                       {"semantic", reports.sem.to_json()},
                       {"quality", {{"metrics", quality_metrics}, {"missing", quality_missing}}}};

    for (const std::string& name : enabled) {
      if (const auto v = detail::metric_value(reports, name))
        collected[name].push_back(*v);
      else
        ++missing_counts[name];
    }
  }

  nlohmann::json means = nlohmann::json::object();
  for (const auto& [name, values] : collected) {
    double sum = 0.0;
    for (const double v : values) sum += v;
    means[name] = sum / static_cast<double>(values.size());
  }
  nlohmann::json tradeoffs = nlohmann::json::array();
  for (const std::string& q : config.quality_metrics)
    for (const std::string& d : config.diversity_metrics)
      if (means.contains(q) && means.contains(d))
        tradeoffs.push_back({{"quality_metric", q},
                             {"diversity_metric", d},
                             {"quality", means[q]},
                             {"diversity", means[d]}});

  nlohmann::json out = {{"method", job.method},
                        {"kind", to_string(job.kind)},
                        {"config", job.label},
                        {"prompts", per_prompt},
                        {"means", means},
                        {"missing_counts", missing_counts},
                        {"tradeoff_points", tradeoffs},
                        {"switch_stats", detail::switch_stats(traces)}};
  if (job.has_control) out["control"] = job.control;
  return out;
}

inline void run_evaluate(const ExperimentConfig& config, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  RunManifest manifest = open_manifest(config, std::nullopt);
  const std::vector<Job> jobs = enumerate_jobs(config, manifest.seed);

  std::map<std::string, std::string> prompt_text;
  for (const auto& p : load_prompts(config.prompts_file)) prompt_text[p.id] = p.text;

  const std::shared_ptr<ModelBackend> aligned = make_model(config.aligned);
  std::shared_ptr<CachingScoring> scoring;
  if (config.scoring) scoring = std::make_shared<CachingScoring>(make_scoring(*config.scoring));

  fs::create_directories(fs::path(config.output_dir) / "metrics");
  const int workers = std::max(1, std::min(opt.workers > 0 ? opt.workers : config.workers, 64));
  std::vector<std::string> rels(jobs.size());
  const auto error = detail::parallel_run(workers, jobs.size(), [&](std::size_t i, int) {
    const nlohmann::json doc =
        evaluate_job(config, jobs[i], prompt_text, *aligned, scoring.get());
    rels[i] = "metrics/" + jobs[i].stem + ".json";
    detail::write_file_atomic(fs::path(config.output_dir) / rels[i], doc.dump(2) + "\n");
  });

  for (const std::string& rel : rels)
    if (!rel.empty() && fs::exists(fs::path(config.output_dir) / rel))
      manifest.record_file(config.output_dir, rel);
  manifest.stages["evaluate"] = !error.has_value();
  manifest.save(config.output_dir);
  if (error) throw RunError("evaluate: " + *error);
}

// ============================================================================
// Aggregation stage
// ============================================================================

namespace detail {

struct JobMetrics {
  const Job* job = nullptr;
  std::map<std::string, double> means;
  nlohmann::json switch_stats;
};

inline JobMetrics load_job_metrics(const ExperimentConfig& config, const Job& job) {
  const auto path = fs::path(config.output_dir) / "metrics" / (job.stem + ".json");
  if (!fs::exists(path))
    throw RunError("aggregate: missing metrics file '" + path.string() +
                   "'; run the evaluate stage first");
  const nlohmann::json j = nlohmann::json::parse(read_file(path));
  JobMetrics m;
  m.job = &job;
  for (const auto& [name, v] : j.at("means").items()) m.means[name] = v.get<double>();
  m.switch_stats = j.value("switch_stats", nlohmann::json::object());
  return m;
}

/// The T=1 operating points of the two single models anchor every region.
inline const JobMetrics& find_anchor(const std::vector<JobMetrics>& rows, MethodSpec::Kind kind) {
  const JobMetrics* found = nullptr;
  for (const auto& row : rows) {
    if (row.job->kind != kind || !row.job->single) continue;
    if (row.job->control == 1.0) {
      if (found)
        throw RunError(std::string("aggregate: several ") + to_string(kind) +
                       " methods supply a T=1 anchor; keep one");
      found = &row;
    }
  }
  if (!found)
    throw RunError(std::string("aggregate: no ") + to_string(kind) +
                   " run at T=1; the sweep must include temperature 1.0 to anchor regions");
  return *found;
}

}  // namespace detail

inline void run_aggregate(const ExperimentConfig& config, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  (void)opt;
  RunManifest manifest = open_manifest(config, std::nullopt);
  const std::vector<Job> jobs = enumerate_jobs(config, manifest.seed);

  std::vector<detail::JobMetrics> rows;
  rows.reserve(jobs.size());
  for (const Job& job : jobs) rows.push_back(detail::load_job_metrics(config, job));

  const detail::JobMetrics& base_anchor = detail::find_anchor(rows, MethodSpec::Kind::base_only);
  const detail::JobMetrics& aligned_anchor =
      detail::find_anchor(rows, MethodSpec::Kind::aligned_only);

  const int n = config.generation.samples_per_prompt;
  std::vector<pareto::SpaceResult> spaces;
  nlohmann::json spaces_json = nlohmann::json::array();
  nlohmann::json skipped_json = nlohmann::json::array();
  int skipped = 0;
  const auto skip = [&](const std::string& d, const std::string& q, const char* reason) {
    ++skipped;
    skipped_json.push_back(
        {{"diversity_metric", d}, {"quality_metric", q}, {"reason", reason}});
  };

  for (const std::string& q : config.quality_metrics) {
    for (const std::string& d : config.diversity_metrics) {
      const DiversityInfo& info = diversity_registry().at(d);
      const auto x0 = base_anchor.means.find(q);
      const auto x1 = aligned_anchor.means.find(q);
      const auto y_aligned = aligned_anchor.means.find(d);
      if (x0 == base_anchor.means.end() || x1 == aligned_anchor.means.end() ||
          y_aligned == aligned_anchor.means.end()) {
        skip(d, q, "missing_anchor");
        continue;
      }
      pareto::FeasibleRegion region;
      region.x_min = x0->second;
      region.x_max = x1->second;
      region.diversity_orientation = info.orientation;
      if (info.orientation == pareto::Orientation::higher_better) {
        region.y_min = y_aligned->second;
        region.y_max = info.best(n);
      } else {
        region.y_min = info.best(n);  // the theoretical best sits at zero
        region.y_max = y_aligned->second;
      }

      std::vector<pareto::TradeoffPoint> points;
      for (const auto& row : rows) {
        const auto qv = row.means.find(q);
        const auto dv = row.means.find(d);
        if (qv == row.means.end() || dv == row.means.end()) continue;
        points.push_back(
            pareto::TradeoffPoint{row.job->method, row.job->label, qv->second, dv->second});
      }
      auto space = pareto::evaluate_space(d, q, info.group, points, region);
      if (!space) {
        skip(d, q, region.valid() ? "no_points" : "degenerate_region");
        continue;
      }
      nlohmann::json sj = space->to_json();
      sj["region"] = region.to_json();
      spaces_json.push_back(std::move(sj));
      spaces.push_back(std::move(*space));
    }
  }

  const pareto::Summary summary = pareto::aggregate(spaces, skipped);

  nlohmann::json switch_report = nlohmann::json::object();
  for (const auto& row : rows) {
    nlohmann::json entry = row.switch_stats;
    switch_report["methods"][row.job->method][row.job->label] = std::move(entry);
  }

  const fs::path agg_dir = fs::path(config.output_dir) / "aggregate";
  fs::create_directories(agg_dir);
  const auto emit = [&](const std::string& rel, const std::string& content) {
    detail::write_file_atomic(fs::path(config.output_dir) / rel, content);
    manifest.record_file(config.output_dir, rel);
  };
  emit("aggregate/summary.csv", pareto::summary_csv(summary));
  emit("aggregate/summary.json",
       nlohmann::json{{"summary", summary.to_json()},
                      {"spaces_emitted", spaces.size()},
                      {"config_digest", config.digest}}
               .dump(2) +
           "\n");
  emit("aggregate/spaces.json",
       nlohmann::json{{"spaces", spaces_json}, {"skipped", skipped_json}}.dump(2) + "\n");
  emit("aggregate/switch_report.json", switch_report.dump(2) + "\n");

  manifest.stages["aggregate"] = true;
  manifest.save(config.output_dir);
}

// ============================================================================
// Smoke: the whole pipeline in one call
// ============================================================================

inline void run_smoke(const ExperimentConfig& config, const RunOptions& opt = {}) {
  run_generate(config, opt);
  RunOptions rest = opt;
  rest.seed.reset();  // downstream stages read the manifest's seed
  run_evaluate(config, rest);
  run_aggregate(config, rest);
}

}  // namespace baco::harness
