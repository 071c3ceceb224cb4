#pragma once

// Text-to-Metaverse ranking metrics. Each description is a query; its paired
// Metaverse is the single relevant item in the gallery.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2m/common.hpp"
#include "t2m/corpus.hpp"
#include "t2m/embeddings.hpp"
#include "t2m/model.hpp"

namespace t2m {

inline constexpr double kZeroNorm = 1e-12;
inline constexpr std::array<int, 5> kRecallKs = {1, 5, 10, 50, 100};

// Cosine similarity; 0 when either vector is (numerically) zero.
template <typename A, typename B>
inline double similarity(const Eigen::MatrixBase<A>& m, const Eigen::MatrixBase<B>& d) {
  if (m.size() != d.size()) throw DimensionError("similarity: vectors differ in length");
  double dot = 0.0, mm = 0.0, dd = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double a = static_cast<double>(m(i));
    const double b = static_cast<double>(d(i));
    dot += a * b;
    mm += a * a;
    dd += b * b;
  }
  const double nm = std::sqrt(mm), nd = std::sqrt(dd);
  if (nm < kZeroNorm || nd < kZeroNorm) return 0.0;
  return dot / (nm * nd);
}

struct RankedItem {
  std::string id;
  double score = 0.0;
};

// Descending score; equal scores keep gallery order.
template <typename S = float>
inline std::vector<RankedItem> rank_gallery(const Vec<S>& query,
                                            const std::vector<std::pair<std::string, Vec<S>>>& gallery) {
  if (gallery.empty()) throw EmptyInputError("rank_gallery: empty gallery");
  std::vector<RankedItem> out;
  out.reserve(gallery.size());
  for (const auto& [id, vec] : gallery) {
    if (vec.size() != query.size()) throw DimensionError("rank_gallery: dimension mismatch for '" + id + "'");
    out.push_back({id, similarity(query, vec)});
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedItem& a, const RankedItem& b) { return a.score > b.score; });
  return out;
}

struct MetricsReport {
  std::map<int, double> r_at;  // K -> percentage, one decimal
  double med_r = 0.0;
  double mean_r = 0.0;
  std::vector<int> per_query_ranks;
  std::size_t gallery_size = 0;
};

inline double round1(double x) { return std::round(x * 10.0) / 10.0; }

inline double recall_at(const std::vector<int>& ranks, int k) {
  if (ranks.empty()) throw EmptyInputError("recall_at: no ranks");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](int r) { return r <= k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

inline MetricsReport compute_metrics(const std::vector<int>& ranks, std::size_t gallery_size) {
  if (ranks.empty()) throw EmptyInputError("compute_metrics: no ranks");
  for (int r : ranks)
    if (r < 1 || static_cast<std::size_t>(r) > gallery_size)
      throw InvalidArgument("compute_metrics: rank " + std::to_string(r) + " outside [1, " +
                            std::to_string(gallery_size) + "]");
  MetricsReport m;
  m.per_query_ranks = ranks;
  m.gallery_size = gallery_size;
  for (int k : kRecallKs) m.r_at[k] = round1(recall_at(ranks, k));
  std::vector<int> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  const auto q = sorted.size();
  m.med_r = q % 2 ? sorted[q / 2] : 0.5 * (sorted[q / 2 - 1] + sorted[q / 2]);
  double sum = 0.0;
  for (int r : sorted) sum += r;
  m.mean_r = sum / static_cast<double>(q);
  return m;
}

inline nlohmann::ordered_json to_json(const MetricsReport& m) {
  nlohmann::ordered_json r = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.r_at) r["R@" + std::to_string(k)] = v;
  return {{"r_at", r},
          {"med_r", m.med_r},
          {"mean_r", round1(m.mean_r)},
          {"gallery_size", m.gallery_size},
          {"queries", m.per_query_ranks.size()},
          {"per_query_ranks", m.per_query_ranks}};
}

struct EvalOptions {
  // Queries are the descriptions of the first max_queries gallery records;
  // 0 means every record.
  std::size_t max_queries = 0;
  // Embed in 64-bit. Batched and per-item float products round differently,
  // which can reorder near-tied scores between evaluate and the oracle.
  bool double_precision = true;
};

template <typename S>
inline TwoTowerModel<S> converted_model(const TwoTowerModel<float>& model) {
  TwoTowerModel<float> src = model;
  TwoTowerModel<S> dst(model.config(), model.init_seed());
  copy_parameters(dst, src);
  return dst;
}

namespace detail {

inline std::vector<const EmbeddingBundle*> bundles_for(const std::vector<MetaverseRecord>& records,
                                                       const BundleMap& bundles) {
  std::vector<const EmbeddingBundle*> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const auto it = bundles.find(r.metaverse_id);
    if (it == bundles.end()) throw MissingIdError("no embedding bundle for '" + r.metaverse_id + "'");
    out.push_back(&it->second);
  }
  return out;
}

template <typename S>
inline Eigen::MatrixXd normalized_rows(const Mat<S>& m) {
  Eigen::MatrixXd out = m.template cast<double>();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n < kZeroNorm)
      out.row(i).setZero();
    else
      out.row(i) /= n;
  }
  return out;
}

inline std::size_t query_count(std::size_t gallery, const EvalOptions& opts) {
  return opts.max_queries == 0 ? gallery : std::min(gallery, opts.max_queries);
}

}  // namespace detail

// Rank of each query's paired item given precomputed embeddings; query q is
// paired with gallery row q.
template <typename S>
inline std::vector<int> ranks_from_embeddings(const Mat<S>& gallery, const Mat<S>& queries) {
  if (gallery.rows() == 0) throw EmptyInputError("empty gallery");
  if (queries.rows() > gallery.rows()) throw InvalidArgument("more queries than gallery items");
  const Eigen::MatrixXd g = detail::normalized_rows(gallery);
  const Eigen::MatrixXd q = detail::normalized_rows(queries);
  std::vector<int> ranks(static_cast<std::size_t>(q.rows()));
  constexpr Eigen::Index chunk = 256;
  for (Eigen::Index start = 0; start < q.rows(); start += chunk) {
    const auto n = std::min(chunk, q.rows() - start);
    const Eigen::MatrixXd scores = q.middleRows(start, n) * g.transpose();
    for (Eigen::Index a = 0; a < n; ++a) {
      const Eigen::Index qi = start + a;
      const double own = scores(a, qi);
      int rank = 1;
      for (Eigen::Index j = 0; j < g.rows(); ++j) {
        const double s = scores(a, j);
        if (s > own || (s == own && j < qi)) ++rank;
      }
      ranks[static_cast<std::size_t>(qi)] = rank;
    }
  }
  return ranks;
}

namespace detail {

template <typename S>
inline MetricsReport evaluate_with(const TwoTowerModel<S>& model, const std::vector<const EmbeddingBundle*>& items,
                                   std::size_t q) {
  const Mat<S> gallery = model.encode_metaverses(items);
  const std::vector<const EmbeddingBundle*> query_items(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(q));
  const Mat<S> queries = model.encode_descriptions(query_items);
  return compute_metrics(ranks_from_embeddings<S>(gallery, queries), items.size());
}

template <typename S>
inline MetricsReport brute_force_with(const TwoTowerModel<S>& model, const std::vector<const EmbeddingBundle*>& items,
                                      std::size_t q, std::ostream* debug) {
  std::vector<std::pair<std::string, Vec<S>>> gallery;
  for (const auto* b : items) {
    const auto batch = gather_metaverses<S>({b});
    gallery.emplace_back(b->metaverse_id, model.metaverse().infer(batch.scenes, batch.paintings).row(0).transpose());
  }
  std::vector<int> ranks;
  for (std::size_t i = 0; i < q; ++i) {
    const Vec<S> query = model.encode_description(items[i]->sentence_vecs.template cast<S>());
    const auto ranked = rank_gallery<S>(query, gallery);
    int rank = 0;
    for (std::size_t pos = 0; pos < ranked.size(); ++pos) {
      if (debug)
        *debug << "query " << items[i]->metaverse_id << " #" << pos + 1 << " " << ranked[pos].id << " "
               << ranked[pos].score << '\n';
      if (rank == 0 && ranked[pos].id == items[i]->metaverse_id) rank = static_cast<int>(pos) + 1;
    }
    ranks.push_back(rank);
  }
  return compute_metrics(ranks, items.size());
}

}  // namespace detail

inline MetricsReport evaluate(const TwoTowerModel<float>& model, const std::vector<MetaverseRecord>& records,
                              const BundleMap& bundles, const EvalOptions& opts = {}) {
  if (records.empty()) throw EmptyInputError("evaluate: empty split");
  const auto items = detail::bundles_for(records, bundles);
  const auto q = detail::query_count(items.size(), opts);
  if (opts.double_precision) return detail::evaluate_with(converted_model<double>(model), items, q);
  return detail::evaluate_with(model, items, q);
}

// Oracle for evaluate: one embedding call per item and one full sort per
// query, no batching.
inline MetricsReport brute_force_evaluate(const TwoTowerModel<float>& model,
                                          const std::vector<MetaverseRecord>& records, const BundleMap& bundles,
                                          const EvalOptions& opts = {}, std::ostream* debug = nullptr) {
  if (records.empty()) throw EmptyInputError("brute_force_evaluate: empty split");
  const auto items = detail::bundles_for(records, bundles);
  const auto q = detail::query_count(items.size(), opts);
  if (opts.double_precision) return detail::brute_force_with(converted_model<double>(model), items, q, debug);
  return detail::brute_force_with(model, items, q, debug);
}

}  // namespace t2m
