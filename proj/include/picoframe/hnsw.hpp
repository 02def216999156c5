#pragma once

// Hierarchical navigable small world graph for cosine-similarity kNN.
//
// Vectors are stored twice: unit-normalized floats drive graph traversal
// (distance = 1 - dot), and the raw input is kept for the final re-ranking,
// which computes cosine similarity in double precision. Build is
// single-writer; a built index answers queries concurrently.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "picoframe/errors.hpp"

namespace picoframe {

inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw DataError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DataError("cosine similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct HnswParams {
  std::size_t m = 16;
  std::size_t ef_construction = 200;
  std::size_t ef_search = 64;
  double level_lambda = 0.0;  // 0 selects 1 / ln(m)
  std::uint64_t seed = 42;

  double level_multiplier() const {
    return level_lambda > 0.0 ? level_lambda : 1.0 / std::log(static_cast<double>(m));
  }

  void validate() const {
    if (m < 2) throw UsageError("hnsw: m must be >= 2");
    if (ef_construction < m) throw UsageError("hnsw: ef_construction must be >= m");
    if (ef_search < 1) throw UsageError("hnsw: ef_search must be >= 1");
    if (level_lambda < 0.0) throw UsageError("hnsw: level_lambda must be >= 0");
  }
};

// Portable draws from a 64-bit engine. std::uniform_*_distribution results
// differ between standard libraries, which would break reproducible runs.
inline double uniform_open01(std::mt19937_64& rng) {
  // (0, 1]
  return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
}

inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

class HnswIndex {
 public:
  struct Hit {
    std::size_t node;
    double similarity;
  };

  HnswIndex() = default;
  explicit HnswIndex(HnswParams params) : params_(params), rng_(params.seed) { params_.validate(); }

  const HnswParams& params() const { return params_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t dim() const { return dim_; }
  int max_level() const { return max_level_; }
  const std::string& id(std::size_t node) const { return ids_[node]; }
  int level(std::size_t node) const { return levels_[node]; }
  std::span<const float> raw(std::size_t node) const { return {&raw_[node * dim_], dim_}; }

  const std::vector<std::uint32_t>& neighbors(std::size_t node, int layer) const {
    return links_[node][static_cast<std::size_t>(layer)];
  }

  // Degree bound on a layer: m above the base layer, 2m on layer 0.
  std::size_t max_degree(int layer) const { return layer == 0 ? 2 * params_.m : params_.m; }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  void add(std::string id, std::span<const float> vec) {
    if (vec.empty()) throw DataError("empty embedding for id " + id);
    if (ids_.empty() && dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_)
      throw DataError("embedding for id " + id + " has dim " + std::to_string(vec.size()) +
                      ", index dim is " + std::to_string(dim_));
    if (by_id_.count(id)) throw DataError("duplicate id " + id);
    double norm = 0.0;
    for (float v : vec) {
      if (!std::isfinite(v)) throw DataError("non-finite embedding value for id " + id);
      norm += static_cast<double>(v) * v;
    }
    if (norm == 0.0) throw DataError("zero embedding for id " + id);
    norm = std::sqrt(norm);

    const auto node = static_cast<std::uint32_t>(ids_.size());
    by_id_.emplace(id, node);
    ids_.push_back(std::move(id));
    raw_.insert(raw_.end(), vec.begin(), vec.end());
    for (float v : vec) unit_.push_back(static_cast<float>(v / norm));

    const int level = draw_level();
    levels_.push_back(level);
    links_.emplace_back(static_cast<std::size_t>(level) + 1);
    if (node == 0) {
      entry_ = 0;
      max_level_ = level;
      return;
    }

    std::uint32_t ep = entry_;
    for (int layer = max_level_; layer > level; --layer) ep = greedy_closest(unit(node), ep, layer);

    std::vector<Candidate> eps{{distance(unit(node), unit(ep)), ep}};
    for (int layer = std::min(level, max_level_); layer >= 0; --layer) {
      auto found = search_layer(unit(node), eps, params_.ef_construction, layer);
      auto selected = select_neighbors(found, params_.m);
      auto& own = links_[node][static_cast<std::size_t>(layer)];
      for (const auto& c : selected) own.push_back(c.node);
      for (const auto& c : selected) connect(c.node, node, layer);
      eps = std::move(found);
    }
    if (level > max_level_) {
      max_level_ = level;
      entry_ = node;
    }
  }

  // Top-k by cosine similarity, descending, ties by id ascending. The entry
  // named `exclude` is skipped. With ef >= size() the scan is exhaustive.
  std::vector<Hit> search(std::span<const float> query, std::size_t k,
                          std::optional<std::string_view> exclude = std::nullopt,
                          std::optional<std::size_t> ef_override = std::nullopt) const {
    if (k == 0 || empty()) return {};
    if (query.size() != dim_)
      throw DataError("query dim " + std::to_string(query.size()) + " does not match index dim " +
                      std::to_string(dim_));
    const auto q = normalized(query);
    const std::size_t ef = std::max(ef_override.value_or(params_.ef_search), k + (exclude ? 1 : 0));

    std::vector<std::size_t> pool;
    if (ef >= size()) {
      pool.resize(size());
      for (std::size_t i = 0; i < size(); ++i) pool[i] = i;
    } else {
      std::uint32_t ep = entry_;
      for (int layer = max_level_; layer > 0; --layer) ep = greedy_closest(q, ep, layer);
      auto found = search_layer(q, {{distance(q, unit(ep)), ep}}, ef, 0);
      for (const auto& c : found) pool.push_back(c.node);
    }

    std::vector<Hit> hits;
    hits.reserve(pool.size());
    for (auto n : pool) {
      if (exclude && ids_[n] == *exclude) continue;
      hits.push_back({n, cosine_similarity(query, raw(n))});
    }
    std::sort(hits.begin(), hits.end(), [&](const Hit& a, const Hit& b) {
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      return ids_[a.node] < ids_[b.node];
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
  }

  void save(std::ostream& out) const {
    out.write(kMagic, sizeof kMagic);
    write_pod(out, static_cast<std::uint64_t>(params_.m));
    write_pod(out, static_cast<std::uint64_t>(params_.ef_construction));
    write_pod(out, static_cast<std::uint64_t>(params_.ef_search));
    write_pod(out, params_.level_lambda);
    write_pod(out, params_.seed);
    write_pod(out, static_cast<std::uint64_t>(dim_));
    write_pod(out, static_cast<std::uint64_t>(size()));
    write_pod(out, static_cast<std::int64_t>(max_level_));
    write_pod(out, static_cast<std::uint64_t>(entry_));
    for (std::size_t n = 0; n < size(); ++n) {
      write_pod(out, static_cast<std::uint64_t>(ids_[n].size()));
      out.write(ids_[n].data(), static_cast<std::streamsize>(ids_[n].size()));
      out.write(reinterpret_cast<const char*>(&raw_[n * dim_]),
                static_cast<std::streamsize>(dim_ * sizeof(float)));
      write_pod(out, static_cast<std::int64_t>(levels_[n]));
      for (const auto& layer : links_[n]) {
        write_pod(out, static_cast<std::uint64_t>(layer.size()));
        out.write(reinterpret_cast<const char*>(layer.data()),
                  static_cast<std::streamsize>(layer.size() * sizeof(std::uint32_t)));
      }
    }
  }

  static HnswIndex load(std::istream& in) {
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError("not an index file");
    HnswParams p;
    p.m = read_pod<std::uint64_t>(in);
    p.ef_construction = read_pod<std::uint64_t>(in);
    p.ef_search = read_pod<std::uint64_t>(in);
    p.level_lambda = read_pod<double>(in);
    p.seed = read_pod<std::uint64_t>(in);
    HnswIndex idx(p);
    idx.dim_ = read_pod<std::uint64_t>(in);
    const auto n = read_pod<std::uint64_t>(in);
    idx.max_level_ = static_cast<int>(read_pod<std::int64_t>(in));
    idx.entry_ = static_cast<std::uint32_t>(read_pod<std::uint64_t>(in));
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string id(read_pod<std::uint64_t>(in), '\0');
      in.read(id.data(), static_cast<std::streamsize>(id.size()));
      std::vector<float> vec(idx.dim_);
      in.read(reinterpret_cast<char*>(vec.data()), static_cast<std::streamsize>(idx.dim_ * sizeof(float)));
      if (!in) throw DataError("truncated index file");
      double norm = 0.0;
      for (float v : vec) norm += static_cast<double>(v) * v;
      norm = std::sqrt(norm);
      idx.by_id_.emplace(id, static_cast<std::uint32_t>(i));
      idx.ids_.push_back(std::move(id));
      idx.raw_.insert(idx.raw_.end(), vec.begin(), vec.end());
      for (float v : vec) idx.unit_.push_back(static_cast<float>(v / norm));
      const auto level = static_cast<int>(read_pod<std::int64_t>(in));
      idx.levels_.push_back(level);
      auto& layers = idx.links_.emplace_back(static_cast<std::size_t>(level) + 1);
      for (auto& layer : layers) {
        layer.resize(read_pod<std::uint64_t>(in));
        in.read(reinterpret_cast<char*>(layer.data()),
                static_cast<std::streamsize>(layer.size() * sizeof(std::uint32_t)));
      }
      if (!in) throw DataError("truncated index file");
    }
    for (const auto& layers : idx.links_)
      for (const auto& layer : layers)
        for (auto nb : layer)
          if (nb >= n) throw DataError("corrupt index file: neighbor out of range");
    return idx;
  }

 private:
  static constexpr char kMagic[8] = {'P', 'F', 'H', 'N', 'S', 'W', '0', '1'};

  struct Candidate {
    double dist;
    std::uint32_t node;
    bool operator<(const Candidate& o) const {
      return dist != o.dist ? dist < o.dist : node < o.node;
    }
    bool operator>(const Candidate& o) const { return o < *this; }
  };

  template <typename T>
  static void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }

  template <typename T>
  static T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw DataError("truncated index file");
    return v;
  }

  const float* unit(std::size_t node) const { return &unit_[node * dim_]; }

  std::vector<float> normalized(std::span<const float> v) const {
    double norm = 0.0;
    for (float x : v) norm += static_cast<double>(x) * x;
    if (norm == 0.0) throw DataError("zero query vector");
    norm = std::sqrt(norm);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
  }
  const float* unit(const std::vector<float>& v) const { return v.data(); }

  double distance(const float* a, const float* b) const {
    double dot = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) dot += static_cast<double>(a[i]) * b[i];
    return 1.0 - dot;
  }
  double distance(const std::vector<float>& a, const float* b) const { return distance(a.data(), b); }

  int draw_level() {
    const double l = -std::log(uniform_open01(rng_)) * params_.level_multiplier();
    return static_cast<int>(std::min(l, 30.0));
  }

  template <typename Q>
  std::uint32_t greedy_closest(const Q& q, std::uint32_t ep, int layer) const {
    double best = distance(q, unit(ep));
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto nb : links_[ep][static_cast<std::size_t>(layer)]) {
        const double d = distance(q, unit(nb));
        if (d < best || (d == best && nb < ep)) {
          best = d;
          ep = nb;
          changed = true;
        }
      }
    }
    return ep;
  }

  // Best-first search on one layer; returns up to ef candidates sorted by
  // ascending distance.
  template <typename Q>
  std::vector<Candidate> search_layer(const Q& q, const std::vector<Candidate>& entry_points,
                                      std::size_t ef, int layer) const {
    std::vector<char> visited(size(), 0);
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> frontier;
    std::priority_queue<Candidate> results;  // max-heap on distance
    for (const auto& e : entry_points) {
      if (visited[e.node]) continue;
      visited[e.node] = 1;
      frontier.push(e);
      results.push(e);
      if (results.size() > ef) results.pop();
    }
    while (!frontier.empty()) {
      const auto current = frontier.top();
      if (results.size() >= ef && current.dist > results.top().dist) break;
      frontier.pop();
      const auto& layer_links = links_[current.node];
      if (static_cast<std::size_t>(layer) >= layer_links.size()) continue;
      for (auto nb : layer_links[static_cast<std::size_t>(layer)]) {
        if (visited[nb]) continue;
        visited[nb] = 1;
        const Candidate c{distance(q, unit(nb)), nb};
        if (results.size() < ef || c < results.top()) {
          frontier.push(c);
          results.push(c);
          if (results.size() > ef) results.pop();
        }
      }
    }
    std::vector<Candidate> out;
    out.reserve(results.size());
    while (!results.empty()) {
      out.push_back(results.top());
      results.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  // Diversity heuristic over candidates whose dist is measured from a common
  // base: keep a candidate only if it is closer to the base than to every
  // neighbor already kept, then top up with the closest
  // pruned candidates so sparse regions stay connected.
  std::vector<Candidate> select_neighbors(std::vector<Candidate> candidates, std::size_t limit) const {
    std::sort(candidates.begin(), candidates.end());
    std::vector<Candidate> kept, pruned;
    for (const auto& c : candidates) {
      if (kept.size() >= limit) break;
      bool diverse = true;
      for (const auto& k : kept) {
        if (distance(unit(c.node), unit(k.node)) < c.dist) {
          diverse = false;
          break;
        }
      }
      (diverse ? kept : pruned).push_back(c);
    }
    for (const auto& p : pruned) {
      if (kept.size() >= limit) break;
      kept.push_back(p);
    }
    return kept;
  }

  void connect(std::uint32_t from, std::uint32_t to, int layer) {
    auto& list = links_[from][static_cast<std::size_t>(layer)];
    list.push_back(to);
    if (list.size() <= max_degree(layer)) return;
    std::vector<Candidate> cands;
    cands.reserve(list.size());
    for (auto nb : list) cands.push_back({distance(unit(from), unit(nb)), nb});
    auto kept = select_neighbors(std::move(cands), max_degree(layer));
    list.clear();
    for (const auto& c : kept) list.push_back(c.node);
  }

  HnswParams params_;
  std::mt19937_64 rng_{42};
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::uint32_t> by_id_;
  std::vector<float> raw_;
  std::vector<float> unit_;
  std::vector<int> levels_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;
  std::uint32_t entry_ = 0;
  int max_level_ = -1;
};

}  // namespace picoframe
