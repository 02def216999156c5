#pragma once

// Test-only helpers: temporary directories, a synthetic clustered PICO
// corpus with matching embeddings, and independent brute-force oracles.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "picoframe/corpus.hpp"
#include "picoframe/demoindex.hpp"

namespace pftest {

using namespace picoframe;

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "pf") {
    std::random_device rd;
    path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
//
// Sentences belong to one of `clusters` topics. Each topic owns a small
// vocabulary of entity phrases per class, disjoint from every other topic
// and from the filler words, so every gold surface occurs exactly once in
// its sentence (audit-clean). Embeddings are a per-topic centroid plus
// Gaussian noise, so nearest neighbours share a topic.

struct SyntheticSpec {
  std::size_t train = 120;
  std::size_t test = 40;
  std::size_t clusters = 8;
  std::size_t phrases_per_class = 2;
  std::size_t dim = 16;
  double noise = 0.15;
  std::uint64_t seed = 7;
  bool fine_labels = false;  // emit fine-grained labels where available
};

struct SyntheticCorpus {
  std::vector<LabeledSentence> train;
  std::vector<LabeledSentence> test;
  std::vector<NamedEmbedding> train_embeddings;
  std::vector<NamedEmbedding> test_embeddings;
};

inline SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  auto coin = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  const std::vector<std::string> fillers = {"the", "in", "was", "compared", "trial", "we", "assessed",
                                            "a", "randomized", "study", "for", "during", "weeks", "at"};
  const std::vector<std::string> fine_int = {"Drug", "Surgical", "Physical", "Educational"};
  const std::vector<std::string> fine_out = {"Pain", "Mortality", "Mental", "Adverse effects"};

  struct Phrase {
    std::vector<std::string> words;
    std::string label;
  };
  // vocab[cluster][class] -> phrases
  std::vector<std::vector<std::vector<Phrase>>> vocab(spec.clusters, std::vector<std::vector<Phrase>>(3));
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    for (std::size_t j = 0; j < spec.phrases_per_class; ++j) {
      const std::string tag = "c" + std::to_string(c) + "v" + std::to_string(j);
      vocab[c][0].push_back({{"adults" + tag, "with", "disorder" + tag},
                             spec.fine_labels ? "Participants.Condition" : "Participants"});
      vocab[c][1].push_back({{"drug" + tag},
                             spec.fine_labels ? "Interventions." + fine_int[(c + j) % fine_int.size()]
                                              : "Interventions"});
      vocab[c][2].push_back({{"score" + tag, "change"},
                             spec.fine_labels ? "Outcomes." + fine_out[(c + j) % fine_out.size()] : "Outcomes"});
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> centroids(spec.clusters, std::vector<double>(spec.dim));
  for (auto& cvec : centroids)
    for (auto& x : cvec) x = gauss(rng);

  auto make = [&](Split split, std::size_t index, std::vector<LabeledSentence>& out,
                  std::vector<NamedEmbedding>& emb) {
    const std::size_t c = pick(spec.clusters);
    std::vector<std::string> words;
    std::vector<BioTag> tags;
    auto filler = [&](std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        words.push_back(fillers[pick(fillers.size())]);
        tags.push_back(BioTag::outside());
      }
    };
    filler(1 + pick(2));
    bool any = false;
    for (std::size_t cls = 0; cls < 3; ++cls) {
      if (!coin(0.8)) continue;
      any = true;
      const auto& ph = vocab[c][cls][pick(spec.phrases_per_class)];
      for (std::size_t i = 0; i < ph.words.size(); ++i) {
        words.push_back(ph.words[i]);
        tags.push_back(i == 0 ? BioTag::begin(ph.label) : BioTag::inside(ph.label));
      }
      filler(1 + pick(2));
    }
    if (!any) filler(2);
    words.push_back(".");
    tags.push_back(BioTag::outside());

    LabeledSentence s;
    s.id = std::string(split_name(split)) + "-" + std::to_string(index);
    s.tokens = make_tokens(words);
    s.tags = std::move(tags);
    s.split = split;
    out.push_back(std::move(s));

    NamedEmbedding e{out.back().id, {}};
    for (std::size_t d = 0; d < spec.dim; ++d)
      e.vector.values.push_back(static_cast<float>(centroids[c][d] + spec.noise * gauss(rng)));
    emb.push_back(std::move(e));
  };

  SyntheticCorpus corpus;
  for (std::size_t i = 0; i < spec.train; ++i) make(Split::train, i, corpus.train, corpus.train_embeddings);
  for (std::size_t i = 0; i < spec.test; ++i) make(Split::test, i, corpus.test, corpus.test_embeddings);
  return corpus;
}

inline std::string to_conll(const std::vector<LabeledSentence>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) out += s.tokens[i].text + "\t" + s.tags[i].str() + "\n";
    out += "\n";
  }
  return out;
}

struct CorpusFiles {
  fs::path train, test, train_emb, test_emb;
};

inline CorpusFiles write_corpus(const SyntheticCorpus& corpus, const fs::path& dir) {
  CorpusFiles f{dir / "train.conll", dir / "test.conll", dir / "train.emb", dir / "test.emb"};
  write_file(f.train, to_conll(corpus.train));
  write_file(f.test, to_conll(corpus.test));
  save_embeddings(f.train_emb, corpus.train_embeddings);
  save_embeddings(f.test_emb, corpus.test_embeddings);
  return f;
}

// ---------------------------------------------------------------------------
// Oracles

// Exact top-k by cosine similarity, descending, ties by id ascending.
inline std::vector<std::string> brute_force_knn(const std::vector<NamedEmbedding>& pool,
                                                const std::vector<float>& query, std::size_t k,
                                                const std::string& exclude = {}) {
  std::vector<std::pair<double, std::string>> scored;
  double qn = 0.0;
  for (float v : query) qn += static_cast<double>(v) * v;
  for (const auto& e : pool) {
    if (!exclude.empty() && e.id == exclude) continue;
    double dot = 0.0, en = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) {
      dot += static_cast<double>(query[i]) * e.vector.values[i];
      en += static_cast<double>(e.vector.values[i]) * e.vector.values[i];
    }
    scored.emplace_back(dot / std::sqrt(qn * en), e.id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

inline std::vector<NamedEmbedding> random_embeddings(std::size_t n, std::size_t dim, std::uint64_t seed,
                                                     const std::string& prefix = "v") {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<NamedEmbedding> out;
  for (std::size_t i = 0; i < n; ++i) {
    NamedEmbedding e;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%05zu", prefix.c_str(), i);
    e.id = buf;
    for (std::size_t d = 0; d < dim; ++d) e.vector.values.push_back(static_cast<float>(gauss(rng)));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace pftest
