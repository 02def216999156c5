#pragma once

// Chat-completion access with retries, an on-disk response cache, and
// deterministic offline backends for tests.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "picoframe/corpus.hpp"
#include "picoframe/digest.hpp"
#include "picoframe/extractparse.hpp"
#include "picoframe/http.hpp"
#include "picoframe/instructgen.hpp"
#include "picoframe/promptkit.hpp"

namespace picoframe {

struct GenerationRequest {
  std::string prompt;
  std::string model;
  double temperature = 0.0;
  std::size_t max_tokens = 512;
  std::optional<std::uint64_t> seed;
};

enum class FinishReason { stop, length, error };

inline std::string_view finish_reason_name(FinishReason r) {
  switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

inline FinishReason parse_finish_reason(std::string_view s) {
  if (s == "length") return FinishReason::length;
  if (s == "error") return FinishReason::error;
  return FinishReason::stop;
}

struct GenerationResponse {
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  std::uint64_t latency_ms = 0;
  std::string error;  // set when finish_reason == error

  bool ok() const { return finish_reason != FinishReason::error; }
};

// Hex SHA-256 over a length-prefixed encoding of the request fields, so no
// two distinct field tuples share an encoding.
inline std::string cache_key(const GenerationRequest& req) {
  Sha256 h;
  auto field = [&h](std::string_view name, std::string_view value) {
    h.update(name).update(":").update(std::to_string(value.size())).update(":").update(value).update(";");
  };
  char temp[40];
  std::snprintf(temp, sizeof temp, "%a", req.temperature);
  field("model", req.model);
  field("temperature", temp);
  field("max_tokens", std::to_string(req.max_tokens));
  if (req.seed) field("seed", std::to_string(*req.seed));
  field("prompt", req.prompt);
  return h.hex();
}

inline nlohmann::ordered_json request_to_json(const GenerationRequest& req) {
  nlohmann::ordered_json j;
  j["model"] = req.model;
  j["temperature"] = req.temperature;
  j["max_tokens"] = req.max_tokens;
  if (req.seed) j["seed"] = *req.seed;
  j["prompt"] = req.prompt;
  return j;
}

// ---------------------------------------------------------------------------
// Backends

struct BackendResult {
  enum class Status { ok, transient, fatal };
  Status status = Status::ok;
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  std::string error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendResult send(const GenerationRequest& req) = 0;
};

struct HttpEndpoint {
  std::string base_url = "http://localhost:8000/v1";
  std::string api_key;
  std::chrono::milliseconds timeout{120000};
};

// OpenAI-compatible POST {base}/chat/completions with the prompt as a single
// user message.
class ChatCompletionsBackend : public Backend {
 public:
  explicit ChatCompletionsBackend(HttpEndpoint endpoint)
      : endpoint_(std::move(endpoint)), url_(BaseUrl::parse(endpoint_.base_url)) {}

  static nlohmann::json request_body(const GenerationRequest& req) {
    nlohmann::json body = {
        {"model", req.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}})},
        {"temperature", req.temperature},
        {"max_tokens", req.max_tokens},
    };
    if (req.seed) body["seed"] = *req.seed;
    return body;
  }

  BackendResult send(const GenerationRequest& req) override {
    httplib::Client cli(url_.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout).count();
    cli.set_connection_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
    cli.set_read_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
    httplib::Headers headers;
    if (!endpoint_.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.api_key);

    auto res = cli.Post(url_.path_prefix + "/chat/completions", headers, request_body(req).dump(),
                        "application/json");
    BackendResult out;
    if (!res) {
      out.status = BackendResult::Status::transient;
      out.error = "transport: " + httplib::to_string(res.error());
      return out;
    }
    if (res->status == 429 || res->status == 408 || res->status >= 500) {
      out.status = BackendResult::Status::transient;
      out.error = "HTTP " + std::to_string(res->status);
      return out;
    }
    if (res->status != 200) {
      out.status = BackendResult::Status::fatal;
      out.error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      return out;
    }
    try {
      auto j = nlohmann::json::parse(res->body);
      const auto& choice = j.at("choices").at(0);
      out.text = choice.at("message").at("content").get<std::string>();
      if (choice.contains("finish_reason") && choice["finish_reason"].is_string())
        out.finish_reason = choice["finish_reason"] == "length" ? FinishReason::length : FinishReason::stop;
    } catch (const nlohmann::json::exception& e) {
      out.status = BackendResult::Status::fatal;
      out.error = std::string("malformed completion body: ") + e.what();
    }
    return out;
  }

 private:
  HttpEndpoint endpoint_;
  BaseUrl url_;
};

// Whitespace-delimited word count stands in for the token count: output
// with more than max_tokens words is cut and reported as `length`.
inline BackendResult truncate_to_budget(std::string text, std::size_t max_tokens) {
  BackendResult out;
  std::size_t words = 0, i = 0;
  while (i < text.size()) {
    while (i < text.size() && text::is_space(text[i])) ++i;
    if (i >= text.size()) break;
    if (words == max_tokens) {
      text.resize(i);
      while (!text.empty() && text::is_space(text.back())) text.pop_back();
      out.finish_reason = FinishReason::length;
      break;
    }
    ++words;
    while (i < text.size() && !text::is_space(text[i])) ++i;
  }
  out.text = std::move(text);
  return out;
}

// Answers with the gold serialization of whichever corpus sentence appears
// after the final "input:" marker; unknown inputs get `no entities`.
class MockOracleBackend : public Backend {
 public:
  MockOracleBackend(const std::vector<LabeledSentence>& gold, const LabelScheme& scheme) {
    for (const auto& s : gold) {
      auto coarse = map_fine_to_coarse(s, scheme);
      answers_.emplace(detokenize(s.tokens).text, serialize_extractions(bio_to_spans(coarse)));
    }
  }

  BackendResult send(const GenerationRequest& req) override {
    auto it = answers_.find(prompt_input_text(req.prompt));
    return truncate_to_budget(it == answers_.end() ? std::string(kNoEntities) : it->second, req.max_tokens);
  }

 private:
  std::map<std::string, std::string> answers_;
};

// A "copy what you were shown" model: emits every extraction from the
// prompt's demonstrations whose surface occurs in the input sentence. Its
// accuracy depends on which demonstrations were retrieved, which makes it a
// useful offline stand-in for comparing selection strategies.
class DemonstrationEchoBackend : public Backend {
 public:
  explicit DemonstrationEchoBackend(const LabelScheme& scheme) : scheme_(scheme) {}

  BackendResult send(const GenerationRequest& req) override {
    const auto lines = text::split_lines(req.prompt);
    std::vector<std::string> demo_outputs;
    for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
      if (lines[i].rfind("input: ", 0) != 0 || lines[i + 1] != "output:") continue;
      std::string block;
      for (std::size_t j = i + 2; j < lines.size() && !text::trim(lines[j]).empty(); ++j) {
        block += std::string(lines[j]) + "\n";
      }
      demo_outputs.push_back(std::move(block));
    }
    std::vector<std::string> input_tokens;
    for (auto& t : text::split_ws(prompt_input_text(req.prompt))) input_tokens.push_back(text::to_lower(t));

    std::vector<std::string> emitted;
    std::set<std::string> seen;
    for (const auto& block : demo_outputs) {
      for (const auto& e : parse_extractions(block, scheme_).extractions) {
        auto probe = text::split_ws(text::to_lower(e.surface));
        if (find_occurrences(probe, input_tokens).empty()) continue;
        std::string line = "\"" + e.surface + "\" is " + e.label;
        if (seen.insert(text::to_lower(line)).second) emitted.push_back(std::move(line));
      }
    }
    return truncate_to_budget(emitted.empty() ? std::string(kNoEntities) : text::join(emitted, "\n"),
                              req.max_tokens);
  }

 private:
  const LabelScheme& scheme_;
};

// ---------------------------------------------------------------------------
// Disk cache: one JSON file per cache key, written via temp file + rename.

class DiskCache {
 public:
  explicit DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

  enum class Lookup { hit, miss, corrupt };

  Lookup lookup(const std::string& key, const GenerationRequest& req, GenerationResponse& out) const {
    const auto path = path_for(key);
    std::ifstream in(path, std::ios::binary);
    if (!in) return Lookup::miss;
    try {
      std::stringstream buf;
      buf << in.rdbuf();
      auto j = nlohmann::json::parse(buf.str());
      if (j.at("key").get<std::string>() != key) return Lookup::corrupt;
      if (j.at("request") != nlohmann::json(request_to_json(req))) return Lookup::corrupt;
      const auto& r = j.at("response");
      out.text = r.at("text").get<std::string>();
      out.finish_reason = parse_finish_reason(r.at("finish_reason").get<std::string>());
      out.latency_ms = r.at("latency_ms").get<std::uint64_t>();
      if (!out.ok()) return Lookup::corrupt;
      return Lookup::hit;
    } catch (const std::exception&) {
      return Lookup::corrupt;
    }
  }

  void store(const std::string& key, const GenerationRequest& req, const GenerationResponse& resp) const {
    nlohmann::ordered_json j;
    j["key"] = key;
    j["request"] = request_to_json(req);
    j["response"] = {{"text", resp.text},
                     {"finish_reason", finish_reason_name(resp.finish_reason)},
                     {"latency_ms", resp.latency_ms}};
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    const auto final_path = path_for(key);
    auto tmp = final_path;
    tmp += ".tmp." + tid.str();
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write cache entry " + tmp.string());
      out << j.dump(2) << '\n';
      if (!out) throw DataError("I/O error writing cache entry " + tmp.string());
    }
    std::filesystem::rename(tmp, final_path);
  }

 private:
  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Gateway

struct RetryPolicy {
  std::size_t max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
};

struct GatewayStats {
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  std::size_t cache_corrupt = 0;
  std::size_t errors = 0;
};

class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry = {}, std::size_t max_in_flight = 4)
      : backend_(std::move(backend)),
        retry_(retry),
        slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(max_in_flight, 1, kMaxInFlight))) {}

  void enable_cache(const std::filesystem::path& dir) { cache_.emplace(dir); }
  // Offline gateways never reach the backend; cache misses become errors.
  void set_offline(bool offline) { offline_ = offline; }

  // One logical request, retrying transient failures with exponential
  // backoff. Never throws for backend failures.
  GenerationResponse complete(const GenerationRequest& req) {
    if (req.prompt.empty()) throw UsageError("generation request with empty prompt");
    GenerationResponse resp;
    if (offline_) {
      resp.finish_reason = FinishReason::error;
      resp.error = "offline: no cached response";
      ++errors_;
      return resp;
    }
    auto delay = retry_.initial_backoff;
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t attempt = 0;; ++attempt) {
      BackendResult r;
      {
        slots_.acquire();
        ++backend_calls_;
        try {
          r = backend_->send(req);
        } catch (const std::exception& e) {
          r.status = BackendResult::Status::fatal;
          r.error = e.what();
        }
        slots_.release();
      }
      if (r.status == BackendResult::Status::ok) {
        resp.text = std::move(r.text);
        resp.finish_reason = r.finish_reason;
        break;
      }
      if (r.status == BackendResult::Status::fatal || attempt >= retry_.max_retries) {
        resp.finish_reason = FinishReason::error;
        resp.error = r.error + (r.status == BackendResult::Status::transient
                                    ? " (after " + std::to_string(attempt + 1) + " attempts)"
                                    : "");
        ++errors_;
        break;
      }
      std::this_thread::sleep_for(delay);
      delay = std::min(retry_.max_backoff, std::chrono::milliseconds(static_cast<std::int64_t>(
                                               static_cast<double>(delay.count()) * retry_.multiplier)));
    }
    resp.latency_ms = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count());
    return resp;
  }

  // complete() behind the disk cache. Only successful responses are stored;
  // unreadable entries are treated as misses and overwritten.
  GenerationResponse cached_complete(const GenerationRequest& req) {
    if (!cache_) return complete(req);
    const auto key = cache_key(req);
    GenerationResponse resp;
    switch (cache_->lookup(key, req, resp)) {
      case DiskCache::Lookup::hit:
        ++cache_hits_;
        return resp;
      case DiskCache::Lookup::corrupt:
        ++cache_corrupt_;
        [[fallthrough]];
      case DiskCache::Lookup::miss:
        ++cache_misses_;
        break;
    }
    resp = complete(req);
    if (resp.ok()) cache_->store(key, req, resp);
    return resp;
  }

  GatewayStats stats() const {
    return {backend_calls_.load(), cache_hits_.load(), cache_misses_.load(), cache_corrupt_.load(),
            errors_.load()};
  }

 private:
  static constexpr std::size_t kMaxInFlight = 256;

  std::shared_ptr<Backend> backend_;
  RetryPolicy retry_;
  std::counting_semaphore<kMaxInFlight> slots_;
  std::optional<DiskCache> cache_;
  bool offline_ = false;
  std::atomic<std::size_t> backend_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> cache_misses_{0};
  std::atomic<std::size_t> cache_corrupt_{0};
  std::atomic<std::size_t> errors_{0};
};

}  // namespace picoframe
