#pragma once

// Demonstration selection: kNN over externally produced sentence embeddings
// (HNSW), and a seeded random baseline.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "picoframe/corpus.hpp"
#include "picoframe/errors.hpp"
#include "picoframe/hnsw.hpp"
#include "picoframe/instructgen.hpp"

namespace picoframe {

struct EmbeddingVector {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
  std::span<const float> view() const { return values; }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_similarity(a.view(), b.view());
}

struct NamedEmbedding {
  std::string id;
  EmbeddingVector vector;
};

struct DemoEntry {
  std::string sentence_id;
  EmbeddingVector embedding;
  InstructRecord record;
};

// ---------------------------------------------------------------------------
// Embedding files: "dim=<d>" header, then "<id> <f1> ... <fd>" per line.

inline std::vector<NamedEmbedding> read_embeddings(std::istream& in, const std::string& origin = "embeddings") {
  std::vector<NamedEmbedding> out;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> dim;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    auto trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    if (!dim) {
      if (trimmed.rfind("dim=", 0) != 0)
        throw DataError(origin + ":" + std::to_string(line_no) + ": expected 'dim=<d>' header");
      try {
        dim = std::stoul(std::string(trimmed.substr(4)));
      } catch (const std::exception&) {
        throw DataError(origin + ": bad dim header '" + std::string(trimmed) + "'");
      }
      if (*dim == 0) throw DataError(origin + ": dim must be positive");
      continue;
    }
    auto fields = text::split_ws(trimmed);
    const std::string& id = fields[0];
    if (fields.size() != *dim + 1)
      throw DataError(origin + ":" + std::to_string(line_no) + ": id " + id + " has " +
                      std::to_string(fields.size() - 1) + " values, expected " + std::to_string(*dim));
    if (!seen.insert(id).second) throw DataError(origin + ": duplicate id " + id);
    NamedEmbedding e{id, {}};
    e.vector.values.reserve(*dim);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      float v;
      try {
        std::size_t used = 0;
        v = std::stof(fields[i], &used);
        if (used != fields[i].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::out_of_range&) {
        v = std::numeric_limits<float>::infinity();
      } catch (const std::exception&) {
        throw DataError(origin + ":" + std::to_string(line_no) + ": id " + id + ": bad number '" +
                        fields[i] + "'");
      }
      if (!std::isfinite(v)) throw DataError(origin + ": non-finite value in embedding for id " + id);
      e.vector.values.push_back(v);
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<NamedEmbedding> load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings file " + path.string());
  return read_embeddings(in, path.string());
}

inline void write_embeddings(std::ostream& out, const std::vector<NamedEmbedding>& embeddings) {
  const std::size_t dim = embeddings.empty() ? 0 : embeddings.front().vector.dim();
  if (embeddings.empty()) return;
  out << "dim=" << dim << '\n';
  char buf[32];
  for (const auto& e : embeddings) {
    if (e.vector.dim() != dim) throw DataError("embedding for id " + e.id + " has inconsistent dim");
    out << e.id;
    for (float v : e.vector.values) {
      std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(v));
      out << buf;
    }
    out << '\n';
  }
}

inline void save_embeddings(const std::filesystem::path& path, const std::vector<NamedEmbedding>& embeddings) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write embeddings file " + path.string());
  write_embeddings(out, embeddings);
  if (!out) throw DataError("I/O error writing " + path.string());
}

// Reorders embeddings to follow `sentences`; ids must match one-to-one.
inline std::vector<EmbeddingVector> align_embeddings(const std::vector<NamedEmbedding>& embeddings,
                                                     const std::vector<LabeledSentence>& sentences) {
  std::map<std::string, const EmbeddingVector*> by_id;
  for (const auto& e : embeddings) by_id[e.id] = &e.vector;
  std::vector<std::string> missing, extra;
  std::set<std::string> corpus_ids;
  for (const auto& s : sentences) {
    corpus_ids.insert(s.id);
    if (!by_id.count(s.id)) missing.push_back(s.id);
  }
  for (const auto& e : embeddings)
    if (!corpus_ids.count(e.id)) extra.push_back(e.id);
  if (!missing.empty() || !extra.empty()) {
    auto preview = [](const std::vector<std::string>& ids) {
      std::vector<std::string> head(ids.begin(), ids.begin() + static_cast<long>(std::min<std::size_t>(ids.size(), 10)));
      return text::join(head, ", ") + (ids.size() > 10 ? ", ..." : "");
    };
    std::string msg = "embeddings do not match corpus:";
    if (!missing.empty()) msg += " missing " + std::to_string(missing.size()) + " [" + preview(missing) + "]";
    if (!extra.empty()) msg += " extra " + std::to_string(extra.size()) + " [" + preview(extra) + "]";
    throw DataError(msg);
  }
  std::optional<std::size_t> dim;
  std::vector<EmbeddingVector> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    const auto& v = *by_id.at(s.id);
    if (dim && v.dim() != *dim) throw DataError("embedding for id " + s.id + " has inconsistent dim");
    dim = v.dim();
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Index over demonstration candidates

class DemoIndex {
 public:
  DemoIndex() = default;

  static DemoIndex build(std::vector<DemoEntry> entries, const HnswParams& params) {
    DemoIndex idx;
    idx.graph_ = HnswIndex(params);
    for (const auto& e : entries) idx.graph_.add(e.sentence_id, e.embedding.view());
    idx.entries_ = std::move(entries);
    return idx;
  }

  // Pairs a previously built graph with its entries; the graph must list the
  // same ids in the same order.
  static DemoIndex attach(HnswIndex graph, std::vector<DemoEntry> entries) {
    if (graph.size() != entries.size()) throw DataError("index size does not match demonstration pool");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (graph.id(i) != entries[i].sentence_id)
        throw DataError("index entry " + std::to_string(i) + " is " + graph.id(i) + ", expected " +
                        entries[i].sentence_id);
      const auto stored = graph.raw(i);
      const auto& given = entries[i].embedding.values;
      if (!std::equal(stored.begin(), stored.end(), given.begin(), given.end()))
        throw DataError("index entry " + graph.id(i) + " was built from a different embedding");
    }
    DemoIndex idx;
    idx.graph_ = std::move(graph);
    idx.entries_ = std::move(entries);
    return idx;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<DemoEntry>& entries() const { return entries_; }
  const HnswIndex& graph() const { return graph_; }

 private:
  HnswIndex graph_;
  std::vector<DemoEntry> entries_;
};

// Up to k entries by descending cosine similarity, ties by id. An entry
// whose id equals `exclude_id` (the query sentence itself) is skipped.
inline std::vector<DemoEntry> query_knn(const DemoIndex& index, const EmbeddingVector& query, std::size_t k,
                                        std::optional<std::string_view> exclude_id = std::nullopt) {
  std::vector<DemoEntry> out;
  for (const auto& hit : index.graph().search(query.view(), k, exclude_id))
    out.push_back(index.entries()[hit.node]);
  return out;
}

// Uniform sample without replacement, in sampled order. k >= n returns a
// shuffled copy of everything.
template <typename T>
std::vector<T> random_select(std::span<const T> items, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  const std::size_t take = std::min(k, items.size());
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_below(rng, order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::vector<T> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(items[order[i]]);
  return out;
}

template <typename T>
std::vector<T> random_select(const std::vector<T>& items, std::size_t k, std::uint64_t seed) {
  return random_select(std::span<const T>(items), k, seed);
}

}  // namespace picoframe
