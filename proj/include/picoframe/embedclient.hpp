#pragma once

// Client for an OpenAI-compatible embeddings endpoint. Results are meant to
// be written once to an embeddings file and read from there afterwards.

#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "picoframe/corpus.hpp"
#include "picoframe/demoindex.hpp"
#include "picoframe/http.hpp"
#include "picoframe/llmgateway.hpp"

namespace picoframe {

class EmbeddingClient {
 public:
  EmbeddingClient(HttpEndpoint endpoint, std::string model, std::size_t batch_size = 32,
                  RetryPolicy retry = {})
      : endpoint_(std::move(endpoint)),
        url_(BaseUrl::parse(endpoint_.base_url)),
        model_(std::move(model)),
        batch_size_(std::max<std::size_t>(1, batch_size)),
        retry_(retry) {}

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); i += batch_size_) {
      std::vector<std::string> batch(texts.begin() + static_cast<long>(i),
                                     texts.begin() + static_cast<long>(std::min(texts.size(), i + batch_size_)));
      auto vecs = embed_batch(batch);
      for (auto& v : vecs) out.push_back(std::move(v));
    }
    return out;
  }

  std::vector<NamedEmbedding> embed_sentences(const std::vector<LabeledSentence>& sentences) const {
    std::vector<std::string> texts;
    texts.reserve(sentences.size());
    for (const auto& s : sentences) texts.push_back(detokenize(s.tokens).text);
    auto vecs = embed(texts);
    std::vector<NamedEmbedding> out;
    for (std::size_t i = 0; i < sentences.size(); ++i) out.push_back({sentences[i].id, std::move(vecs[i])});
    return out;
  }

 private:
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& batch) const {
    const nlohmann::json body = {{"model", model_}, {"input", batch}};
    httplib::Headers headers;
    if (!endpoint_.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
    auto delay = retry_.initial_backoff;
    for (std::size_t attempt = 0;; ++attempt) {
      httplib::Client cli(url_.origin);
      const auto secs = std::max<long>(
          1, static_cast<long>(std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout).count()));
      cli.set_connection_timeout(secs, 0);
      cli.set_read_timeout(secs, 0);
      auto res = cli.Post(url_.path_prefix + "/embeddings", headers, body.dump(), "application/json");
      const bool transient = !res || res->status == 429 || res->status >= 500;
      if (res && res->status == 200) return parse_response(res->body, batch.size());
      if (!transient || attempt >= retry_.max_retries) {
        throw DataError("embedding endpoint failed: " +
                        (res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error())));
      }
      std::this_thread::sleep_for(delay);
      delay = std::min(retry_.max_backoff, std::chrono::milliseconds(static_cast<std::int64_t>(
                                               static_cast<double>(delay.count()) * retry_.multiplier)));
    }
  }

  static std::vector<EmbeddingVector> parse_response(const std::string& body, std::size_t expected) {
    std::vector<EmbeddingVector> out(expected);
    try {
      auto j = nlohmann::json::parse(body);
      const auto& data = j.at("data");
      if (data.size() != expected)
        throw DataError("embedding endpoint returned " + std::to_string(data.size()) + " vectors for " +
                        std::to_string(expected) + " inputs");
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto idx = data[i].contains("index") ? data[i]["index"].get<std::size_t>() : i;
        if (idx >= expected) throw DataError("embedding index out of range");
        out[idx].values = data[i].at("embedding").get<std::vector<float>>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed embeddings response: ") + e.what());
    }
    return out;
  }

  HttpEndpoint endpoint_;
  BaseUrl url_;
  std::string model_;
  std::size_t batch_size_;
  RetryPolicy retry_;
};

}  // namespace picoframe
