#pragma once

// Experiment orchestration behind the CLI: dataset conversion, index build,
// k-shot extraction runs with manifests, evaluation, and ablation sweeps.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "picoframe/corpus.hpp"
#include "picoframe/demoindex.hpp"
#include "picoframe/digest.hpp"
#include "picoframe/embedclient.hpp"
#include "picoframe/evalkit.hpp"
#include "picoframe/extractparse.hpp"
#include "picoframe/instructgen.hpp"
#include "picoframe/llmgateway.hpp"
#include "picoframe/promptkit.hpp"

namespace picoframe {

namespace fs = std::filesystem;

enum class Strategy { knn, random, zero_shot };
enum class SchemeMode { coarse, fine };

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::knn: return "knn";
    case Strategy::random: return "random";
    case Strategy::zero_shot: return "zero_shot";
  }
  return "knn";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "knn") return Strategy::knn;
  if (s == "random") return Strategy::random;
  if (s == "zero_shot" || s == "zero-shot") return Strategy::zero_shot;
  throw UsageError("unknown strategy '" + std::string(s) + "' (knn | random | zero_shot)");
}

// k used for the published configurations of each dataset.
inline std::optional<std::size_t> default_k_for(std::string_view dataset) {
  static const std::map<std::string, std::size_t> table = {
      {"ebm-nlp", 3}, {"ebm-nlp_h", 4}, {"ebm-nlp_rev", 9}, {"ebm-comet", 9}};
  auto it = table.find(text::to_lower(dataset));
  if (it == table.end()) return std::nullopt;
  return it->second;
}

struct GatewayConfig {
  std::string backend = "http";  // http | mock_oracle | mock_echo
  std::string base_url = "http://localhost:8000/v1";
  std::string model = "local-model";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  std::size_t max_tokens = 256;
  std::optional<std::uint64_t> seed;
  std::size_t max_retries = 3;
  std::int64_t backoff_ms = 500;
  std::int64_t timeout_ms = 120000;
  std::size_t max_in_flight = 4;
  fs::path cache_dir;  // empty: <output_dir>/cache
  bool offline = false;
};

struct EmbeddingConfig {
  fs::path train;
  fs::path test;
  std::string endpoint;  // optional embeddings API base URL used when files are missing
  std::string model = "embedding-model";
  std::string api_key_env = "OPENAI_API_KEY";
};

struct ExperimentConfig {
  std::string dataset;
  std::map<Split, fs::path> corpus;
  SchemeMode scheme = SchemeMode::coarse;
  std::string task_description = default_task_description();
  Strategy strategy = Strategy::knn;
  std::size_t k = 3;
  EmbeddingConfig embeddings;
  HnswParams hnsw;
  GatewayConfig gateway;
  fs::path output_dir = "run";
  fs::path index_path;  // empty: <output_dir>/index.hnsw
  std::uint64_t seed = 13;
  std::size_t max_prompt_chars = 0;
  bool kind_sensitive = false;

  fs::path cache_dir() const { return gateway.cache_dir.empty() ? output_dir / "cache" : gateway.cache_dir; }
  fs::path resolved_index_path() const { return index_path.empty() ? output_dir / "index.hnsw" : index_path; }

  const fs::path& corpus_path(Split s) const {
    auto it = corpus.find(s);
    if (it == corpus.end()) throw UsageError("config has no corpus path for split " + std::string(split_name(s)));
    return it->second;
  }

  void validate() const {
    hnsw.validate();
    if (strategy == Strategy::zero_shot && k != 0) throw UsageError("zero_shot strategy requires k = 0");
    if (strategy == Strategy::knn && k > 0 && (embeddings.train.empty() || embeddings.test.empty()))
      throw UsageError("knn strategy requires embeddings.train and embeddings.test");
    if (gateway.backend != "http" && gateway.backend != "mock_oracle" && gateway.backend != "mock_echo")
      throw UsageError("unknown gateway backend '" + gateway.backend + "'");
  }

  static ExperimentConfig from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
    auto resolve = [&](const std::string& p) -> fs::path {
      if (p.empty()) return {};
      fs::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : (base_dir / path).lexically_normal();
    };
    ExperimentConfig c;
    try {
      c.dataset = j.value("dataset", "");
      if (j.contains("corpus")) {
        for (const auto& [split, path] : j.at("corpus").items()) c.corpus[parse_split(split)] = resolve(path.get<std::string>());
      }
      const auto scheme = j.value("scheme", "coarse");
      if (scheme == "coarse") {
        c.scheme = SchemeMode::coarse;
      } else if (scheme == "fine") {
        c.scheme = SchemeMode::fine;
      } else {
        throw UsageError("scheme must be 'coarse' or 'fine'");
      }
      if (j.contains("task_description_file")) {
        std::ifstream in(resolve(j.at("task_description_file").get<std::string>()), std::ios::binary);
        if (!in) throw UsageError("cannot read task_description_file");
        std::stringstream buf;
        buf << in.rdbuf();
        c.task_description = std::string(text::trim(buf.str()));
      } else if (j.contains("task_description")) {
        c.task_description = j.at("task_description").get<std::string>();
      }
      c.strategy = parse_strategy(j.value("strategy", "knn"));
      if (j.contains("k")) {
        c.k = j.at("k").get<std::size_t>();
      } else if (auto dk = default_k_for(c.dataset); dk && c.strategy != Strategy::zero_shot) {
        c.k = *dk;
      } else if (c.strategy == Strategy::zero_shot) {
        c.k = 0;
      }
      if (j.contains("embeddings")) {
        const auto& e = j.at("embeddings");
        c.embeddings.train = resolve(e.value("train", ""));
        c.embeddings.test = resolve(e.value("test", ""));
        c.embeddings.endpoint = e.value("endpoint", "");
        c.embeddings.model = e.value("model", c.embeddings.model);
        c.embeddings.api_key_env = e.value("api_key_env", c.embeddings.api_key_env);
      }
      if (j.contains("hnsw")) {
        const auto& h = j.at("hnsw");
        c.hnsw.m = h.value("m", c.hnsw.m);
        c.hnsw.ef_construction = h.value("ef_construction", c.hnsw.ef_construction);
        c.hnsw.ef_search = h.value("ef_search", c.hnsw.ef_search);
        c.hnsw.level_lambda = h.value("level_lambda", c.hnsw.level_lambda);
        c.hnsw.seed = h.value("seed", c.hnsw.seed);
      }
      if (j.contains("gateway")) {
        const auto& g = j.at("gateway");
        auto& gw = c.gateway;
        gw.backend = g.value("backend", gw.backend);
        gw.base_url = g.value("base_url", gw.base_url);
        gw.model = g.value("model", gw.model);
        gw.api_key_env = g.value("api_key_env", gw.api_key_env);
        gw.temperature = g.value("temperature", gw.temperature);
        gw.max_tokens = g.value("max_tokens", gw.max_tokens);
        if (g.contains("seed") && !g["seed"].is_null()) gw.seed = g["seed"].get<std::uint64_t>();
        gw.max_retries = g.value("max_retries", gw.max_retries);
        gw.backoff_ms = g.value("backoff_ms", gw.backoff_ms);
        gw.timeout_ms = g.value("timeout_ms", gw.timeout_ms);
        gw.max_in_flight = g.value("max_in_flight", gw.max_in_flight);
        gw.cache_dir = resolve(g.value("cache_dir", ""));
        gw.offline = g.value("offline", gw.offline);
      }
      c.output_dir = resolve(j.value("output_dir", "run"));
      c.index_path = resolve(j.value("index_path", ""));
      c.seed = j.value("seed", c.seed);
      c.max_prompt_chars = j.value("max_prompt_chars", c.max_prompt_chars);
      c.kind_sensitive = j.value("kind_sensitive", c.kind_sensitive);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("invalid config: ") + e.what());
    } catch (const DataError& e) {
      throw UsageError(std::string("invalid config: ") + e.what());
    }
    c.validate();
    return c;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    nlohmann::ordered_json cj = nlohmann::ordered_json::object();
    for (const auto& [split, path] : corpus) cj[std::string(split_name(split))] = path.string();
    j["corpus"] = cj;
    j["scheme"] = scheme == SchemeMode::coarse ? "coarse" : "fine";
    j["task_description"] = task_description;
    j["strategy"] = strategy_name(strategy);
    j["k"] = k;
    j["embeddings"] = {{"train", embeddings.train.string()},
                       {"test", embeddings.test.string()},
                       {"endpoint", embeddings.endpoint},
                       {"model", embeddings.model},
                       {"api_key_env", embeddings.api_key_env}};
    j["hnsw"] = {{"m", hnsw.m},
                 {"ef_construction", hnsw.ef_construction},
                 {"ef_search", hnsw.ef_search},
                 {"level_lambda", hnsw.level_lambda},
                 {"seed", hnsw.seed}};
    nlohmann::ordered_json g;
    g["backend"] = gateway.backend;
    g["base_url"] = gateway.base_url;
    g["model"] = gateway.model;
    g["api_key_env"] = gateway.api_key_env;
    g["temperature"] = gateway.temperature;
    g["max_tokens"] = gateway.max_tokens;
    g["seed"] = gateway.seed ? nlohmann::ordered_json(*gateway.seed) : nlohmann::ordered_json(nullptr);
    g["max_retries"] = gateway.max_retries;
    g["backoff_ms"] = gateway.backoff_ms;
    g["timeout_ms"] = gateway.timeout_ms;
    g["max_in_flight"] = gateway.max_in_flight;
    g["cache_dir"] = gateway.cache_dir.string();
    g["offline"] = gateway.offline;
    j["gateway"] = g;
    j["output_dir"] = output_dir.string();
    j["index_path"] = index_path.string();
    j["seed"] = seed;
    j["max_prompt_chars"] = max_prompt_chars;
    j["kind_sensitive"] = kind_sensitive;
    return j;
  }
};

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  // A run manifest carries its config snapshot under "config".
  if (j.contains("config") && j["config"].is_object()) j = j["config"];
  return ExperimentConfig::from_json(j, fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Shared helpers

inline void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("I/O error writing " + path.string());
}

inline std::vector<LabeledSentence> load_split(const ExperimentConfig& cfg, Split split,
                                               std::size_t* repairs = nullptr) {
  auto r = load_corpus(cfg.corpus_path(split), LabelScheme::pico(), split);
  if (repairs) *repairs += r.repairs;
  return std::move(r.sentences);
}

// Sentences as they appear in demonstrations and converted datasets.
inline LabeledSentence apply_scheme(const LabeledSentence& s, SchemeMode mode) {
  return mode == SchemeMode::coarse ? map_fine_to_coarse(s, LabelScheme::pico()) : s;
}

// Per-sentence seed for random selection, independent of processing order.
inline std::uint64_t sentence_seed(std::uint64_t seed, std::string_view sentence_id) {
  const auto hex = sha256_hex(std::to_string(seed) + ":" + std::string(sentence_id));
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

// Fixed description of the prompt layout; its digest goes into manifests so
// a layout change invalidates replays.
inline const std::string& prompt_template_descriptor() {
  static const std::string t = "<task>\\n\\n{input: <text>\\noutput:\\n<extractions>\\n\\n}*input: <text>\\noutput:\\n";
  return t;
}

// ---------------------------------------------------------------------------
// convert

struct ConvertSplitStats {
  std::size_t records = 0;
  std::size_t repairs = 0;
  std::map<std::string, std::size_t> spans;  // per label in the written records
};

struct ConvertResult {
  std::map<Split, ConvertSplitStats> splits;
  std::map<Split, fs::path> datasets;
};

inline ConvertResult cmd_convert(const ExperimentConfig& cfg) {
  ConvertResult result;
  const auto& scheme = LabelScheme::pico();
  for (const auto& [split, path] : cfg.corpus) {
    ConvertSplitStats stats;
    auto sentences = load_split(cfg, split, &stats.repairs);
    std::vector<InstructRecord> records;
    std::vector<LabeledSentence> mapped;
    records.reserve(sentences.size());
    for (const auto& s : sentences) {
      mapped.push_back(apply_scheme(s, cfg.scheme));
      records.push_back(sentence_to_record(mapped.back(), cfg.task_description));
    }
    stats.spans = span_counts(mapped);

    // Reconcile: the written outputs must carry exactly the corpus spans.
    std::map<std::string, std::size_t> parsed;
    for (const auto& r : records)
      for (const auto& e : parse_extractions(r.output, scheme).extractions) ++parsed[e.label];
    std::map<std::string, std::size_t> expected;
    for (const auto& [label, n] : stats.spans) expected[scheme.coarse_of(label)] += n;
    if (parsed != expected)
      throw DataError("converted records for split " + std::string(split_name(split)) +
                      " do not reconcile with corpus span counts");

    const auto dataset_path = cfg.output_dir / (std::string(split_name(split)) + ".jsonl");
    fs::create_directories(cfg.output_dir);
    stats.records = write_dataset(records, dataset_path);
    std::ostringstream canon;
    write_sentences(canon, mapped);
    write_text_file(cfg.output_dir / "corpus" / (std::string(split_name(split)) + ".jsonl"), canon.str());
    result.splits[split] = std::move(stats);
    result.datasets[split] = dataset_path;
  }
  return result;
}

// ---------------------------------------------------------------------------
// index

inline std::vector<NamedEmbedding> ensure_embeddings(const ExperimentConfig& cfg, const fs::path& path,
                                                     const std::vector<LabeledSentence>& sentences) {
  if (fs::exists(path)) return load_embeddings(path);
  if (cfg.embeddings.endpoint.empty())
    throw DataError("embeddings file " + path.string() + " not found and no embeddings endpoint configured");
  HttpEndpoint ep;
  ep.base_url = cfg.embeddings.endpoint;
  if (const char* key = std::getenv(cfg.embeddings.api_key_env.c_str())) ep.api_key = key;
  ep.timeout = std::chrono::milliseconds(cfg.gateway.timeout_ms);
  EmbeddingClient client(ep, cfg.embeddings.model);
  auto embeddings = client.embed_sentences(sentences);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_embeddings(path, embeddings);
  return embeddings;
}

inline std::vector<DemoEntry> demo_pool(const ExperimentConfig& cfg, const std::vector<LabeledSentence>& train,
                                        const std::vector<EmbeddingVector>* embeddings) {
  std::vector<DemoEntry> pool;
  pool.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    DemoEntry e;
    e.sentence_id = train[i].id;
    if (embeddings) e.embedding = (*embeddings)[i];
    e.record = sentence_to_record(apply_scheme(train[i], cfg.scheme), cfg.task_description);
    pool.push_back(std::move(e));
  }
  return pool;
}

struct IndexResult {
  fs::path path;
  std::size_t nodes = 0;
  std::size_t dim = 0;
  int max_level = -1;
  double mean_degree_layer0 = 0.0;
};

inline DemoIndex build_demo_index(const ExperimentConfig& cfg, const std::vector<LabeledSentence>& train) {
  auto named = ensure_embeddings(cfg, cfg.embeddings.train, train);
  auto aligned = align_embeddings(named, train);
  return DemoIndex::build(demo_pool(cfg, train, &aligned), cfg.hnsw);
}

inline IndexResult cmd_index(const ExperimentConfig& cfg) {
  if (cfg.embeddings.train.empty()) throw UsageError("index requires embeddings.train");
  auto train = load_split(cfg, Split::train);
  auto index = build_demo_index(cfg, train);
  if (!cfg.embeddings.test.empty() && cfg.corpus.count(Split::test)) {
    auto test = load_split(cfg, Split::test);
    align_embeddings(ensure_embeddings(cfg, cfg.embeddings.test, test), test);
  }
  IndexResult r;
  r.path = cfg.resolved_index_path();
  if (r.path.has_parent_path()) fs::create_directories(r.path.parent_path());
  std::ofstream out(r.path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write index " + r.path.string());
  index.graph().save(out);
  r.nodes = index.size();
  r.dim = index.graph().dim();
  r.max_level = index.graph().max_level();
  std::size_t edges = 0;
  for (std::size_t n = 0; n < index.size(); ++n) edges += index.graph().neighbors(n, 0).size();
  r.mean_degree_layer0 = index.size() ? static_cast<double>(edges) / static_cast<double>(index.size()) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Predictions file

struct PredictionRow {
  std::string id;
  bool error = false;
  std::string error_message;
  AlignedPrediction prediction;
};

inline nlohmann::ordered_json prediction_to_json(const PredictionRow& row) {
  nlohmann::ordered_json j;
  j["id"] = row.id;
  j["status"] = row.error ? "error" : "ok";
  nlohmann::ordered_json tags = nlohmann::ordered_json::array();
  for (const auto& t : row.prediction.tags) tags.push_back(t.str());
  j["tags"] = tags;
  nlohmann::ordered_json unmatched = nlohmann::ordered_json::array();
  for (const auto& e : row.prediction.unmatched) unmatched.push_back({{"surface", e.surface}, {"label", e.label}});
  j["unmatched"] = unmatched;
  j["warnings"] = row.prediction.parse_warnings;
  j["conflicts"] = row.prediction.conflicts;
  if (row.error) j["error"] = row.error_message;
  return j;
}

inline std::vector<PredictionRow> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions file " + path.string());
  std::vector<PredictionRow> rows;
  std::string line;
  std::size_t line_no = 0;
  const auto& scheme = LabelScheme::pico();
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      PredictionRow row;
      row.id = j.at("id").get<std::string>();
      row.error = j.value("status", "ok") == "error";
      row.error_message = j.value("error", "");
      row.prediction.sentence_id = row.id;
      for (const auto& t : j.at("tags")) row.prediction.tags.push_back(parse_tag(t.get<std::string>(), scheme));
      for (const auto& u : j.value("unmatched", nlohmann::json::array()))
        row.prediction.unmatched.push_back({u.at("surface").get<std::string>(), u.at("label").get<std::string>(), 0});
      row.prediction.parse_warnings = j.value("warnings", std::size_t{0});
      row.prediction.conflicts = j.value("conflicts", std::size_t{0});
      if (!is_well_formed(row.prediction.tags)) throw DataError("tags are not BIO well-formed");
      rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// eval

// Scores predictions against gold. Gold sentences without a prediction row
// are scored as all-O and counted; prediction ids unknown to gold are an
// error.
inline MetricsReport evaluate(const std::vector<LabeledSentence>& gold, const std::vector<PredictionRow>& rows,
                              const ScoringOptions& opts = {}) {
  const auto& scheme = LabelScheme::pico();
  std::map<std::string, const PredictionRow*> by_id;
  std::set<std::string> gold_ids;
  for (const auto& g : gold) gold_ids.insert(g.id);
  std::vector<std::string> unknown;
  for (const auto& r : rows) {
    if (!gold_ids.count(r.id)) unknown.push_back(r.id);
    by_id[r.id] = &r;
  }
  if (!unknown.empty()) {
    if (unknown.size() > 10) unknown.resize(10), unknown.push_back("...");
    throw DataError("prediction ids not in gold: " + text::join(unknown, ", "));
  }

  CountTable counts;
  for (const auto& c : scheme.coarse_labels()) counts[c];
  MetricsReport report;
  for (const auto& g : gold) {
    const auto coarse = map_fine_to_coarse(g, scheme);
    auto it = by_id.find(g.id);
    if (it == by_id.end()) {
      ++report.missing_predictions;
      counts += count_tokens(coarse, std::vector<BioTag>(g.size()), scheme, opts);
      continue;
    }
    const auto& row = *it->second;
    if (row.error) ++report.error_rows;
    report.parse_warnings += row.prediction.parse_warnings;
    report.unmatched += row.prediction.unmatched.size();
    counts += count_tokens(coarse, row.prediction.tags, scheme, opts);
  }
  auto full = macro_metrics(counts);
  full.sentences = gold.size();
  full.missing_predictions = report.missing_predictions;
  full.error_rows = report.error_rows;
  full.parse_warnings = report.parse_warnings;
  full.unmatched = report.unmatched;
  return full;
}

inline void write_report(const fs::path& dir, const MetricsReport& report) {
  write_text_file(dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_text_file(dir / "report.txt", format_report(report, LabelScheme::pico()));
}

inline MetricsReport cmd_eval(const fs::path& predictions, const std::vector<LabeledSentence>& gold,
                              const ScoringOptions& opts = {}) {
  return evaluate(gold, read_predictions(predictions), opts);
}

// ---------------------------------------------------------------------------
// extract

struct ExtractResult {
  fs::path predictions;
  fs::path manifest;
  std::size_t sentences = 0;
  std::size_t error_rows = 0;
  GatewayStats gateway;
  MetricsReport report;
};

inline std::shared_ptr<Backend> make_backend(const ExperimentConfig& cfg, const std::vector<LabeledSentence>& test) {
  const auto& scheme = LabelScheme::pico();
  if (cfg.gateway.backend == "mock_oracle") return std::make_shared<MockOracleBackend>(test, scheme);
  if (cfg.gateway.backend == "mock_echo") return std::make_shared<DemonstrationEchoBackend>(scheme);
  HttpEndpoint ep;
  ep.base_url = cfg.gateway.base_url;
  if (const char* key = std::getenv(cfg.gateway.api_key_env.c_str())) ep.api_key = key;
  ep.timeout = std::chrono::milliseconds(cfg.gateway.timeout_ms);
  return std::make_shared<ChatCompletionsBackend>(ep);
}

struct ExtractOptions {
  // Replaces the configured backend, e.g. with a test double.
  std::shared_ptr<Backend> backend;
};

inline ExtractResult cmd_extract(const ExperimentConfig& cfg, const ExtractOptions& opts = {}) {
  cfg.validate();
  const auto& scheme = LabelScheme::pico();
  auto train = load_split(cfg, Split::train);
  auto test = load_split(cfg, Split::test);
  const std::size_t k = cfg.strategy == Strategy::zero_shot ? 0 : cfg.k;

  nlohmann::ordered_json digests;
  digests["corpus.train"] = file_sha256(cfg.corpus_path(Split::train));
  digests["corpus.test"] = file_sha256(cfg.corpus_path(Split::test));

  DemoIndex index;
  std::vector<DemoEntry> pool;
  std::vector<EmbeddingVector> test_vectors;
  if (cfg.strategy == Strategy::knn && k > 0) {
    auto train_named = ensure_embeddings(cfg, cfg.embeddings.train, train);
    auto train_vectors = align_embeddings(train_named, train);
    test_vectors = align_embeddings(ensure_embeddings(cfg, cfg.embeddings.test, test), test);
    digests["embeddings.train"] = file_sha256(cfg.embeddings.train);
    digests["embeddings.test"] = file_sha256(cfg.embeddings.test);
    const auto index_file = cfg.resolved_index_path();
    auto entries = demo_pool(cfg, train, &train_vectors);
    if (fs::exists(index_file)) {
      std::ifstream in(index_file, std::ios::binary);
      auto graph = HnswIndex::load(in);
      const auto& p = graph.params();
      if (p.m != cfg.hnsw.m || p.ef_construction != cfg.hnsw.ef_construction || p.seed != cfg.hnsw.seed)
        throw DataError("index file " + index_file.string() + " was built with different parameters");
      index = DemoIndex::attach(std::move(graph), std::move(entries));
    } else {
      index = DemoIndex::build(std::move(entries), cfg.hnsw);
    }
  } else if (cfg.strategy == Strategy::random && k > 0) {
    pool = demo_pool(cfg, train, nullptr);
  }
  digests["task_description"] = sha256_hex(cfg.task_description);
  digests["prompt_template"] = sha256_hex(prompt_template_descriptor());

  Gateway gateway(opts.backend ? opts.backend : make_backend(cfg, test),
                  RetryPolicy{cfg.gateway.max_retries, std::chrono::milliseconds(cfg.gateway.backoff_ms), 2.0,
                              std::chrono::milliseconds(std::max<std::int64_t>(cfg.gateway.backoff_ms, 8000))},
                  cfg.gateway.max_in_flight);
  gateway.enable_cache(cfg.cache_dir());
  gateway.set_offline(cfg.gateway.offline);

  std::vector<std::size_t> pool_positions(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool_positions[i] = i;

  struct SentenceRun {
    PredictionRow row;
    std::vector<std::string> demo_ids;
    std::string cache_key;
  };
  std::vector<SentenceRun> runs(test.size());

  auto process = [&](std::size_t i) {
    const auto& s = test[i];
    PromptSpec spec;
    spec.task_description = cfg.task_description;
    spec.input_text = detokenize(s.tokens).text;
    std::vector<DemoEntry> demos;
    if (k > 0 && cfg.strategy == Strategy::knn) {
      demos = query_knn(index, test_vectors[i], k, s.id);
    } else if (k > 0 && cfg.strategy == Strategy::random) {
      // Draw one extra so the sentence itself can be dropped.
      for (auto p : random_select(pool_positions, k + 1, sentence_seed(cfg.seed, s.id))) {
        if (pool[p].sentence_id == s.id) continue;
        if (demos.size() == k) break;
        demos.push_back(pool[p]);
      }
    }
    auto& run = runs[i];
    for (const auto& d : demos) {
      run.demo_ids.push_back(d.sentence_id);
      spec.demonstrations.push_back(d.record);
    }
    GenerationRequest req;
    req.prompt = assemble_prompt(spec, cfg.max_prompt_chars);
    req.model = cfg.gateway.model;
    req.temperature = cfg.gateway.temperature;
    req.max_tokens = cfg.gateway.max_tokens;
    req.seed = cfg.gateway.seed;
    run.cache_key = cache_key(req);
    auto resp = gateway.cached_complete(req);
    run.row.id = s.id;
    if (!resp.ok()) {
      run.row.error = true;
      run.row.error_message = resp.error;
      run.row.prediction.sentence_id = s.id;
      run.row.prediction.tags.assign(s.size(), BioTag::outside());
    } else {
      run.row.prediction = parse_and_align(resp.text, s, scheme);
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.gateway.max_in_flight, test.size()));
  std::atomic<std::size_t> next{0};
  std::mutex failure_mu;
  std::exception_ptr failure;
  {
    std::vector<std::jthread> pool_threads;
    for (std::size_t w = 0; w < workers; ++w) {
      pool_threads.emplace_back([&] {
        for (std::size_t i = next++; i < test.size(); i = next++) {
          try {
            process(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = test.size();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);

  ExtractResult result;
  fs::create_directories(cfg.output_dir);
  result.predictions = cfg.output_dir / "predictions.jsonl";
  result.manifest = cfg.output_dir / "manifest.json";
  std::ostringstream preds;
  std::vector<PredictionRow> rows;
  rows.reserve(runs.size());
  nlohmann::ordered_json sentences = nlohmann::ordered_json::array();
  for (const auto& run : runs) {
    preds << prediction_to_json(run.row).dump() << '\n';
    rows.push_back(run.row);
    if (run.row.error) ++result.error_rows;
    nlohmann::ordered_json entry;
    entry["id"] = run.row.id;
    entry["demonstrations"] = run.demo_ids;
    entry["cache_key"] = run.cache_key;
    entry["warnings"] = run.row.prediction.parse_warnings;
    entry["status"] = run.row.error ? "error" : "ok";
    sentences.push_back(std::move(entry));
  }
  write_text_file(result.predictions, preds.str());

  result.report = evaluate(test, rows, {cfg.kind_sensitive});
  write_report(cfg.output_dir, result.report);

  nlohmann::ordered_json manifest;
  manifest["config"] = cfg.to_json();
  manifest["digests"] = digests;
  manifest["predictions"] = "predictions.jsonl";
  manifest["report"] = "report.json";
  manifest["sentences"] = sentences;
  write_text_file(result.manifest, manifest.dump(2) + "\n");

  result.sentences = test.size();
  result.gateway = gateway.stats();
  nlohmann::ordered_json stats;
  stats["backend_calls"] = result.gateway.backend_calls;
  stats["cache_hits"] = result.gateway.cache_hits;
  stats["cache_misses"] = result.gateway.cache_misses;
  stats["cache_corrupt"] = result.gateway.cache_corrupt;
  stats["gateway_errors"] = result.gateway.errors;
  stats["error_rows"] = result.error_rows;
  write_text_file(cfg.output_dir / "stats.json", stats.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  Strategy strategy;
  std::size_t k;
  Metrics macro;
  std::size_t error_rows = 0;
};

// One extraction + evaluation per (strategy, k), all sharing the parent
// run's response cache. k = 0 always runs as zero-shot.
inline std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, const std::vector<std::size_t>& k_values,
                                           const std::vector<Strategy>& strategies,
                                           const ExtractOptions& opts = {}) {
  if (k_values.empty()) throw UsageError("ablate needs at least one k value");
  if (strategies.empty()) throw UsageError("ablate needs at least one strategy");
  for (auto s : strategies)
    if (s == Strategy::zero_shot) throw UsageError("ablate strategies must be knn or random");

  std::vector<AblationRow> rows;
  std::ostringstream csv;
  csv << "strategy,k,precision,recall,f1,accuracy,error_rows\n";
  for (auto strategy : strategies) {
    for (auto k : k_values) {
      ExperimentConfig sub = cfg;
      sub.strategy = k == 0 ? Strategy::zero_shot : strategy;
      sub.k = k;
      sub.gateway.cache_dir = cfg.cache_dir();
      if (sub.index_path.empty()) sub.index_path = cfg.resolved_index_path();
      sub.output_dir = cfg.output_dir / "ablate" / (std::string(strategy_name(strategy)) + "-k" + std::to_string(k));
      auto r = cmd_extract(sub, opts);
      rows.push_back({strategy, k, r.report.macro, r.error_rows});
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%.6f,%.6f,%zu\n", std::string(strategy_name(strategy)).c_str(), k,
                    r.report.macro.precision, r.report.macro.recall, r.report.macro.f1, r.report.macro.accuracy,
                    r.error_rows);
      csv << buf;
    }
  }
  write_text_file(cfg.output_dir / "ablation.csv", csv.str());
  return rows;
}

}  // namespace picoframe
