#pragma once

// Interview-transcript topic modeling: tokenization, LDA fitted by collapsed
// Gibbs sampling, theme frequency tables and topic co-occurrence graphs.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <numeric>
#include <span>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "streetreview/core.hpp"

namespace streetreview::thematics {

struct Document {
  std::string doc_id;
  std::vector<std::size_t> tokens;  // vocabulary indices
};

struct Corpus {
  std::vector<Document> documents;
  std::vector<std::string> vocabulary;  // first-seen order

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.tokens.size();
    return n;
  }
};

inline const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = {
      "a",  "an", "and", "are", "as",   "at",   "be",   "but",  "by",  "for", "from", "has",
      "have", "i", "in", "is", "it",   "its",  "of",   "on",   "or",  "our", "so",   "that",
      "the", "there", "they", "this", "to", "was", "we", "were", "with", "you", "very", "really"};
  return words;
}

struct RawDocument {
  std::string doc_id;
  std::string text;
};

struct TokenizeResult {
  Corpus corpus;
  std::vector<std::string> dropped;  // doc ids left empty after filtering
};

// Lowercases, splits on non-alphanumerics (bytes >= 0x80 are kept as part of
// words so accented UTF-8 survives), drops stopwords and short tokens.
inline TokenizeResult tokenize(std::span<const RawDocument> docs,
                               const std::set<std::string>& stopwords,
                               std::size_t min_token_len = 1) {
  TokenizeResult out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& d : docs) {
    Document doc{d.doc_id, {}};
    std::string word;
    auto flush = [&] {
      if (word.size() >= min_token_len && !stopwords.contains(word)) {
        auto [it, fresh] = index.try_emplace(word, out.corpus.vocabulary.size());
        if (fresh) out.corpus.vocabulary.push_back(word);
        doc.tokens.push_back(it->second);
      }
      word.clear();
    };
    for (unsigned char c : d.text) {
      if (std::isalnum(c) || c >= 0x80)
        word.push_back(static_cast<char>(std::tolower(c)));
      else if (!word.empty())
        flush();
    }
    if (!word.empty()) flush();
    if (doc.tokens.empty())
      out.dropped.push_back(d.doc_id);
    else
      out.corpus.documents.push_back(std::move(doc));
  }
  if (out.corpus.documents.empty())
    throw invalid_argument("tokenize: every document is empty after filtering");
  return out;
}

struct LdaConfig {
  std::size_t topics = 7;
  double alpha = -1.0;  // <= 0 means 50 / topics
  double beta = 0.01;
  std::size_t iterations = 1000;
  std::size_t burn_in = 200;
  std::uint64_t seed = 0;

  double resolved_alpha() const { return alpha > 0 ? alpha : 50.0 / static_cast<double>(topics); }
};

struct TopicModel {
  std::size_t topics = 0;
  double alpha = 0, beta = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> phi;    // K x V
  std::vector<std::vector<double>> theta;  // D x K
  std::vector<std::vector<std::size_t>> assignments;
  std::vector<double> log_likelihood;  // log p(w | z) after each sweep
};

namespace detail {

inline double log_likelihood(const std::vector<std::vector<int>>& n_kw, const std::vector<int>& n_k,
                             double beta) {
  const double V = static_cast<double>(n_kw.empty() ? 0 : n_kw[0].size());
  double ll = static_cast<double>(n_kw.size()) * (std::lgamma(V * beta) - V * std::lgamma(beta));
  for (std::size_t k = 0; k < n_kw.size(); ++k) {
    for (int c : n_kw[k]) ll += std::lgamma(c + beta);
    ll -= std::lgamma(n_k[k] + V * beta);
  }
  return ll;
}

}  // namespace detail

// Collapsed Gibbs sampling with p(z = k) proportional to
// (n_dk + alpha)(n_kw + beta) / (n_k + V beta). phi and theta are the means of
// the per-sweep posterior estimates after burn-in.
inline TopicModel fit_lda(const Corpus& corpus, const LdaConfig& cfg) {
  const std::size_t K = cfg.topics, V = corpus.vocabulary.size(), D = corpus.documents.size();
  if (K < 2) throw invalid_argument("fit_lda: need at least 2 topics");
  if (cfg.iterations <= cfg.burn_in) throw invalid_argument("fit_lda: iterations must exceed burn_in");
  if (K > corpus.token_count())
    throw invalid_argument("fit_lda: " + std::to_string(K) + " topics exceed " +
                           std::to_string(corpus.token_count()) + " tokens");
  const double alpha = cfg.resolved_alpha(), beta = cfg.beta;
  if (!(alpha > 0 && beta > 0)) throw invalid_argument("fit_lda: alpha and beta must be > 0");
  for (const auto& d : corpus.documents)
    for (auto w : d.tokens)
      if (w >= V) throw invalid_argument("fit_lda: token index out of vocabulary in " + d.doc_id);

  TopicModel m;
  m.topics = K;
  m.alpha = alpha;
  m.beta = beta;
  m.seed = cfg.seed;
  Rng rng(cfg.seed);

  std::vector<std::vector<int>> n_dk(D, std::vector<int>(K, 0)), n_kw(K, std::vector<int>(V, 0));
  std::vector<int> n_k(K, 0);
  m.assignments.resize(D);
  for (std::size_t d = 0; d < D; ++d) {
    const auto& toks = corpus.documents[d].tokens;
    m.assignments[d].resize(toks.size());
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const std::size_t k = rng.below(K);
      m.assignments[d][i] = k;
      ++n_dk[d][k];
      ++n_kw[k][toks[i]];
      ++n_k[k];
    }
  }

  m.phi.assign(K, std::vector<double>(V, 0.0));
  m.theta.assign(D, std::vector<double>(K, 0.0));
  std::vector<double> p(K);
  std::size_t samples = 0;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    for (std::size_t d = 0; d < D; ++d) {
      const auto& toks = corpus.documents[d].tokens;
      for (std::size_t i = 0; i < toks.size(); ++i) {
        const std::size_t w = toks[i];
        std::size_t k = m.assignments[d][i];
        --n_dk[d][k];
        --n_kw[k][w];
        --n_k[k];
        double total = 0;
        for (std::size_t t = 0; t < K; ++t) {
          p[t] = (n_dk[d][t] + alpha) * (n_kw[t][w] + beta) / (n_k[t] + V * beta);
          total += p[t];
        }
        double u = rng.uniform() * total;
        k = K - 1;
        for (std::size_t t = 0; t < K; ++t) {
          u -= p[t];
          if (u < 0) {
            k = t;
            break;
          }
        }
        m.assignments[d][i] = k;
        ++n_dk[d][k];
        ++n_kw[k][w];
        ++n_k[k];
      }
    }
    m.log_likelihood.push_back(detail::log_likelihood(n_kw, n_k, beta));
    if (it <= cfg.burn_in) continue;
    ++samples;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t w = 0; w < V; ++w)
        m.phi[k][w] += (n_kw[k][w] + beta) / (n_k[k] + V * beta);
    for (std::size_t d = 0; d < D; ++d) {
      const double len = static_cast<double>(corpus.documents[d].tokens.size());
      for (std::size_t k = 0; k < K; ++k)
        m.theta[d][k] += (n_dk[d][k] + alpha) / (len + K * alpha);
    }
  }
  for (auto& row : m.phi)
    for (auto& v : row) v /= static_cast<double>(samples);
  for (auto& row : m.theta)
    for (auto& v : row) v /= static_cast<double>(samples);
  return m;
}

inline std::vector<std::vector<std::string>> top_words(const TopicModel& m, const Corpus& corpus,
                                                       std::size_t n = 10) {
  std::vector<std::vector<std::string>> out;
  for (const auto& row : m.phi) {
    std::vector<std::size_t> idx(row.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return row[a] > row[b]; });
    std::vector<std::string> words;
    for (std::size_t i = 0; i < std::min(n, idx.size()); ++i)
      words.push_back(corpus.vocabulary[idx[i]]);
    out.push_back(std::move(words));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct CodedStatement {
  std::string group;
  std::string theme;
};

struct ThemeFrequency {
  std::string group;
  std::string theme;
  std::size_t count = 0;
  double pct = 0.0;  // of the group's statement total, 0..100
};

// Rows ordered by group, then theme, each in first-seen order.
inline std::vector<ThemeFrequency> theme_frequency_table(std::span<const CodedStatement> statements) {
  std::vector<std::string> groups, themes;
  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  std::map<std::string, std::size_t> totals;
  for (const auto& s : statements) {
    if (std::find(groups.begin(), groups.end(), s.group) == groups.end()) groups.push_back(s.group);
    if (std::find(themes.begin(), themes.end(), s.theme) == themes.end()) themes.push_back(s.theme);
    ++counts[{s.group, s.theme}];
    ++totals[s.group];
  }
  std::vector<ThemeFrequency> out;
  for (const auto& g : groups)
    for (const auto& t : themes) {
      auto it = counts.find({g, t});
      if (it == counts.end()) continue;
      out.push_back({g, t, it->second,
                     100.0 * static_cast<double>(it->second) / static_cast<double>(totals[g])});
    }
  return out;
}

// One-decimal percentage text, e.g. 37.6.
inline std::string format_pct(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", pct);
  return buf;
}

struct CoocEdge {
  std::size_t i = 0, j = 0;  // i < j
  std::size_t weight = 0;
  bool operator==(const CoocEdge&) const = default;
};

struct CoocGraph {
  std::vector<std::string> nodes;
  std::vector<CoocEdge> edges;
};

// Topic k appears in document d iff theta[d][k] >= threshold; edge weight is
// the number of documents where both endpoints appear.
inline CoocGraph cooccurrence_graph(const std::vector<std::vector<double>>& theta, double threshold,
                                    std::vector<std::string> labels = {}) {
  if (!(threshold > 0 && threshold < 1))
    throw invalid_argument("cooccurrence_graph: threshold must be in (0, 1)");
  const std::size_t K = theta.empty() ? labels.size() : theta[0].size();
  if (labels.empty())
    for (std::size_t k = 0; k < K; ++k) labels.push_back("topic_" + std::to_string(k));
  if (labels.size() != K) throw invalid_argument("cooccurrence_graph: label count mismatch");
  std::vector<std::vector<std::size_t>> w(K, std::vector<std::size_t>(K, 0));
  for (const auto& row : theta) {
    if (row.size() != K) throw invalid_argument("cooccurrence_graph: ragged theta");
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = i + 1; j < K; ++j)
        if (row[i] >= threshold && row[j] >= threshold) ++w[i][j];
  }
  CoocGraph g{std::move(labels), {}};
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j)
      if (w[i][j]) g.edges.push_back({i, j, w[i][j]});
  return g;
}

inline CoocGraph cooccurrence_graph(const TopicModel& m, double threshold,
                                    std::vector<std::string> labels = {}) {
  return cooccurrence_graph(m.theta, threshold, std::move(labels));
}

inline json to_json(const CoocGraph& g) {
  json edges = json::array();
  for (const auto& e : g.edges) edges.push_back({{"i", e.i}, {"j", e.j}, {"weight", e.weight}});
  return {{"nodes", g.nodes}, {"edges", edges}};
}

inline json to_json(const TopicModel& m, const Corpus& corpus, std::size_t n_top = 10) {
  json docs = json::array();
  for (std::size_t d = 0; d < corpus.documents.size(); ++d)
    docs.push_back({{"doc_id", corpus.documents[d].doc_id}, {"theta", m.theta[d]}});
  return {{"topics", m.topics},
          {"alpha", m.alpha},
          {"beta", m.beta},
          {"seed", m.seed},
          {"vocabulary", corpus.vocabulary},
          {"phi", m.phi},
          {"documents", docs},
          {"top_words", top_words(m, corpus, n_top)},
          {"final_log_likelihood", m.log_likelihood.empty() ? 0.0 : m.log_likelihood.back()}};
}

inline json to_json(std::span<const ThemeFrequency> table) {
  json rows = json::array();
  for (const auto& r : table)
    rows.push_back({{"group", r.group},
                    {"theme", r.theme},
                    {"count", r.count},
                    {"pct", r.pct},
                    {"pct_text", format_pct(r.pct)}});
  return rows;
}

}  // namespace streetreview::thematics
