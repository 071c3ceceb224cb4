#pragma once

// In-memory gallery index and free-text search, plus the HTTP routes that
// expose them:
//   GET /search?q=<text>&k=<int>  -> JSON array of results
//   GET /health                   -> {"status": "ok", "gallery": N}
//   GET /meta/<id>                -> the full corpus record

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen's product kernels.
#include "t2m/corpus.hpp"
#include "t2m/embeddings.hpp"
#include "t2m/evaluation.hpp"
#include "t2m/model.hpp"
#include "t2m/sentences.hpp"

#include <httplib.h>
#include <json.hpp>

namespace t2m {

struct SearchResult {
  std::string metaverse_id;
  double score = 0.0;
  int rank = 0;
  std::string scene_summary;
  std::string painting_name;
};

inline nlohmann::ordered_json to_json(const SearchResult& r) {
  return {{"metaverse_id", r.metaverse_id},
          {"score", r.score},
          {"rank", r.rank},
          {"scene_summary", r.scene_summary},
          {"painting_name", r.painting_name}};
}

// Thrown for malformed requests; the HTTP layer maps it to 400.
class BadRequest : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Maps sentences to 512-wide feature rows.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual MatF encode(const std::vector<std::string>& sentences) const = 0;
};

class HashingEncoder final : public SentenceEncoder {
 public:
  explicit HashingEncoder(std::uint64_t seed = 0) : impl_(seed) {}
  MatF encode(const std::vector<std::string>& sentences) const override { return impl_.embed_all(sentences); }

 private:
  HashingSentenceEmbedder impl_;
};

// External text encoder. Protocol: POST <url> with body
// {"sentences": [...]} answered by {"embeddings": [[512 floats], ...]}.
class RemoteEncoder final : public SentenceEncoder {
 public:
  explicit RemoteEncoder(std::string url) : url_(std::move(url)) {
    const auto scheme_end = url_.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = url_.find('/', host_start);
    base_ = url_.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url_.substr(path_start);
  }

  MatF encode(const std::vector<std::string>& sentences) const override {
    httplib::Client client(base_);
    client.set_connection_timeout(5);
    client.set_read_timeout(30);
    const nlohmann::json body = {{"sentences", sentences}};
    const auto res = client.Post(path_, body.dump(), "application/json");
    if (!res) throw Error("text encoder at " + url_ + " unreachable");
    if (res->status != 200) throw Error("text encoder returned HTTP " + std::to_string(res->status));
    const auto j = nlohmann::json::parse(res->body);
    const auto& rows = j.at("embeddings");
    if (rows.size() != sentences.size()) throw DimensionError("text encoder returned the wrong number of rows");
    MatF out(static_cast<Eigen::Index>(rows.size()), kClipDim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != static_cast<std::size_t>(kClipDim))
        throw DimensionError("text encoder returned a row of width " + std::to_string(rows[i].size()));
      for (Eigen::Index c = 0; c < kClipDim; ++c)
        out(static_cast<Eigen::Index>(i), c) = rows[i][static_cast<std::size_t>(c)].get<float>();
    }
    return out;
  }

 private:
  std::string url_, base_, path_;
};

// First sentence of a description, period restored.
inline std::string scene_summary(std::string_view description) {
  const auto parts = split_sentences(description);
  return parts.empty() ? std::string{} : parts.front() + ".";
}

// Painting name as rendered by the painting sentence, or empty.
inline std::string painting_name_from_description(std::string_view description) {
  constexpr std::string_view prefix = "Also, in this room there is a painting called ";
  const auto p = description.find(prefix);
  if (p == std::string_view::npos) return {};
  const auto start = p + prefix.size();
  const auto which = description.find(", which ", start);
  if (which == std::string_view::npos) return {};
  const auto segment = description.substr(start, which - start);
  const auto by = segment.rfind(" by ");
  return std::string(by == std::string_view::npos ? segment : segment.substr(0, by));
}

class SearchService {
 public:
  // `corpus` backs /meta lookups; `gallery` is the subset that is searched.
  SearchService(const TwoTowerModel<float>& model, const std::vector<MetaverseRecord>& corpus,
                const std::vector<MetaverseRecord>& gallery, const BundleMap& bundles,
                std::shared_ptr<const SentenceEncoder> encoder,
                const std::vector<PaintingRecord>& paintings = {})
      : model_(converted_model<double>(model)), encoder_(std::move(encoder)) {
    if (gallery.empty()) throw EmptyInputError("search index: empty gallery split");
    std::unordered_map<std::string, std::string> painting_names;
    for (const auto& p : paintings) painting_names.emplace(p.painting_id, p.name);
    for (const auto& r : corpus) records_.emplace(r.metaverse_id, r);
    const auto items = detail::bundles_for(gallery, bundles);
    embeddings_ = detail::normalized_rows<double>(model_.encode_metaverses(items));
    for (const auto& r : gallery) {
      Entry e{r.metaverse_id, scene_summary(r.description), {}};
      const auto named = painting_names.find(r.painting_id);
      e.painting_name = named != painting_names.end() ? named->second : painting_name_from_description(r.description);
      entries_.push_back(std::move(e));
      if (!records_.count(r.metaverse_id)) records_.emplace(r.metaverse_id, r);
    }
  }

  std::size_t gallery_size() const { return entries_.size(); }

  const Eigen::MatrixXd& index_embeddings() const { return embeddings_; }

  const MetaverseRecord* find_record(const std::string& id) const {
    const auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
  }

  std::vector<SearchResult> search_features(const MatF& sentence_vecs, int k) const {
    check_k(k);
    if (sentence_vecs.rows() < 1) throw BadRequest("query has no sentences");
    Vec<double> q = model_.encode_description(sentence_vecs.cast<double>());
    const double norm = q.norm();
    if (norm < kZeroNorm)
      q.setZero();
    else
      q /= norm;
    const Eigen::VectorXd scores = embeddings_ * q;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
    for (Eigen::Index i = 0; i < scores.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores[a] > scores[b]; });
    std::vector<SearchResult> out;
    for (int r = 0; r < k; ++r) {
      const auto idx = order[static_cast<std::size_t>(r)];
      const auto& e = entries_[static_cast<std::size_t>(idx)];
      out.push_back({e.id, scores[idx], r + 1, e.scene_summary, e.painting_name});
    }
    return out;
  }

  std::vector<SearchResult> search(std::string_view query, int k) const {
    const auto text = trim(query);
    if (text.empty()) throw BadRequest("query is empty");
    check_k(k);
    if (!encoder_) throw Error("no sentence encoder configured");
    return search_features(encoder_->encode(split_sentences(text)), k);
  }

 private:
  struct Entry {
    std::string id;
    std::string scene_summary;
    std::string painting_name;
  };

  void check_k(int k) const {
    if (k < 1 || static_cast<std::size_t>(k) > entries_.size())
      throw BadRequest("k must be in [1, " + std::to_string(entries_.size()) + "]");
  }

  TwoTowerModel<double> model_;
  std::shared_ptr<const SentenceEncoder> encoder_;
  std::vector<Entry> entries_;
  Eigen::MatrixXd embeddings_;
  std::unordered_map<std::string, MetaverseRecord> records_;
};

// ---------------------------------------------------------------------------

namespace detail {

inline void json_reply(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_header("Access-Control-Allow-Origin", "*");
  res.set_content(body, "application/json");
}

inline void error_reply(httplib::Response& res, int status, const std::string& message) {
  json_reply(res, status, nlohmann::json{{"error", message}}.dump());
}

}  // namespace detail

inline void register_routes(httplib::Server& server, const SearchService& service) {
  server.Get("/health", [&service](const httplib::Request&, httplib::Response& res) {
    detail::json_reply(res, 200, nlohmann::json{{"status", "ok"}, {"gallery", service.gallery_size()}}.dump());
  });

  server.Get("/search", [&service](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("q")) return detail::error_reply(res, 400, "missing parameter q");
    int k = 10;
    if (req.has_param("k")) {
      const auto raw = req.get_param_value("k");
      try {
        std::size_t used = 0;
        k = std::stoi(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
      } catch (const std::exception&) {
        return detail::error_reply(res, 400, "k must be an integer");
      }
    }
    try {
      nlohmann::ordered_json out = nlohmann::ordered_json::array();
      for (const auto& r : service.search(req.get_param_value("q"), k)) out.push_back(to_json(r));
      detail::json_reply(res, 200, out.dump());
    } catch (const BadRequest& e) {
      detail::error_reply(res, 400, e.what());
    } catch (const std::exception& e) {
      detail::error_reply(res, 502, e.what());
    }
  });

  server.Get(R"(/meta/(.+))", [&service](const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    const auto* rec = service.find_record(id);
    if (!rec) return detail::error_reply(res, 404, "unknown metaverse_id '" + id + "'");
    nlohmann::ordered_json j = *rec;
    detail::json_reply(res, 200, j.dump());
  });
}

}  // namespace t2m
