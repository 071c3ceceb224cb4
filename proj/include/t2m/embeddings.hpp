#pragma once

// Raw feature vectors consumed by the encoders: scene features, painting
// features and one feature vector per description sentence.
//
// .emb layout (all integers uint32 little-endian, floats IEEE-754 binary32
// little-endian):
//
//   header  : "T2MEMB01" (8 bytes) | version (=1) | record count
//   record  : id length | id bytes (UTF-8) | scene dim | painting dim |
//             sentence count S | sentence dim |
//             scene vec | painting vec | S sentence vecs, row after row
//
// A JSON sidecar "<file>.json" lists {metaverse_id, offset, sentences} per
// record so readers can seek without scanning.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "t2m/common.hpp"
#include "t2m/corpus.hpp"
#include "t2m/sentences.hpp"

namespace t2m {

struct EmbeddingBundle {
  std::string metaverse_id;
  VecF scene_vec;       // length kSceneDim
  VecF painting_vec;    // length kClipDim
  MatF sentence_vecs;   // S x kClipDim
};

using BundleMap = std::unordered_map<std::string, EmbeddingBundle>;

inline void validate(const EmbeddingBundle& b) {
  const auto who = "bundle '" + b.metaverse_id + "'";
  if (b.scene_vec.size() != kSceneDim)
    throw DimensionError(who + ": scene_vec has length " + std::to_string(b.scene_vec.size()) + ", expected " +
                         std::to_string(kSceneDim));
  if (b.painting_vec.size() != kClipDim)
    throw DimensionError(who + ": painting_vec has length " + std::to_string(b.painting_vec.size()) +
                         ", expected " + std::to_string(kClipDim));
  if (b.sentence_vecs.cols() != kClipDim)
    throw DimensionError(who + ": sentence vectors have length " + std::to_string(b.sentence_vecs.cols()) +
                         ", expected " + std::to_string(kClipDim));
  if (b.sentence_vecs.rows() < 1) throw DimensionError(who + ": no sentence vectors");
  if (!b.scene_vec.allFinite() || !b.painting_vec.allFinite() || !b.sentence_vecs.allFinite())
    throw InvalidArgument(who + ": non-finite entries");
}

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("unexpected end of file");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void put_f32s(std::ostream& out, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
  }
}

inline void get_f32s(std::istream& in, float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float))))
      throw ParseError("unexpected end of file");
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(get_u32(in));
  }
}

inline constexpr char kEmbMagic[8] = {'T', '2', 'M', 'E', 'M', 'B', '0', '1'};
inline constexpr std::uint32_t kEmbVersion = 1;

}  // namespace detail

// Writes records in the order given.
inline void store_bundles(const std::string& path, const std::vector<const EmbeddingBundle*>& bundles) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(detail::kEmbMagic, sizeof detail::kEmbMagic);
  detail::put_u32(out, detail::kEmbVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(bundles.size()));

  nlohmann::ordered_json index = {{"format", "t2m-emb"},
                                  {"version", detail::kEmbVersion},
                                  {"count", bundles.size()},
                                  {"scene_dim", kSceneDim},
                                  {"clip_dim", kClipDim},
                                  {"records", nlohmann::ordered_json::array()}};
  for (const auto* b : bundles) {
    const auto offset = static_cast<std::uint64_t>(out.tellp());
    detail::put_u32(out, static_cast<std::uint32_t>(b->metaverse_id.size()));
    out.write(b->metaverse_id.data(), static_cast<std::streamsize>(b->metaverse_id.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(b->scene_vec.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(b->painting_vec.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(b->sentence_vecs.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(b->sentence_vecs.cols()));
    detail::put_f32s(out, b->scene_vec.data(), static_cast<std::size_t>(b->scene_vec.size()));
    detail::put_f32s(out, b->painting_vec.data(), static_cast<std::size_t>(b->painting_vec.size()));
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = b->sentence_vecs;
    detail::put_f32s(out, rows.data(), static_cast<std::size_t>(rows.size()));
    index["records"].push_back(
        {{"metaverse_id", b->metaverse_id}, {"offset", offset}, {"sentences", b->sentence_vecs.rows()}});
  }
  if (!out) throw Error("write failed for '" + path + "'");
  std::ofstream side(path + ".json", std::ios::trunc);
  if (!side) throw Error("cannot write '" + path + ".json'");
  side << index.dump(1) << '\n';
}

// Bundles are written in corpus order so the file is reproducible.
inline void store_bundles(const std::string& path, const BundleMap& bundles,
                          const std::vector<MetaverseRecord>& corpus) {
  std::vector<const EmbeddingBundle*> ordered;
  ordered.reserve(corpus.size());
  for (const auto& r : corpus) {
    const auto it = bundles.find(r.metaverse_id);
    if (it == bundles.end()) throw MissingIdError("store_bundles: no bundle for '" + r.metaverse_id + "'");
    ordered.push_back(&it->second);
  }
  store_bundles(path, ordered);
}

// Reads every record of an .emb file without validation against a corpus.
inline std::vector<EmbeddingBundle> read_bundle_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::kEmbMagic, 8) != 0)
    throw ParseError(path + ": not an .emb file");
  const auto version = detail::get_u32(in);
  if (version != detail::kEmbVersion) throw ParseError(path + ": unsupported .emb version " + std::to_string(version));
  const auto count = detail::get_u32(in);
  std::vector<EmbeddingBundle> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    EmbeddingBundle b;
    const auto id_len = detail::get_u32(in);
    b.metaverse_id.resize(id_len);
    if (!in.read(b.metaverse_id.data(), id_len)) throw ParseError(path + ": truncated id in record " + std::to_string(i));
    const auto scene_dim = detail::get_u32(in);
    const auto painting_dim = detail::get_u32(in);
    const auto sentences = detail::get_u32(in);
    const auto sentence_dim = detail::get_u32(in);
    b.scene_vec.resize(scene_dim);
    b.painting_vec.resize(painting_dim);
    detail::get_f32s(in, b.scene_vec.data(), scene_dim);
    detail::get_f32s(in, b.painting_vec.data(), painting_dim);
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(sentences, sentence_dim);
    detail::get_f32s(in, rows.data(), static_cast<std::size_t>(rows.size()));
    b.sentence_vecs = rows;
    out.push_back(std::move(b));
  }
  return out;
}

// Import path for features computed elsewhere: one JSON object per line,
//   {"metaverse_id": "...", "scene_vec": [200], "painting_vec": [512],
//    "sentence_vecs": [[512], ...]}
inline std::vector<EmbeddingBundle> read_bundle_jsonl(std::istream& in, const std::string& name = "<stream>") {
  std::vector<EmbeddingBundle> out;
  std::string line;
  std::size_t lineno = 0;
  auto floats = [](const nlohmann::json& a) {
    VecF v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<float>();
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    EmbeddingBundle b;
    try {
      const auto j = nlohmann::json::parse(line);
      b.metaverse_id = j.at("metaverse_id").get<std::string>();
      b.scene_vec = floats(j.at("scene_vec"));
      b.painting_vec = floats(j.at("painting_vec"));
      const auto& rows = j.at("sentence_vecs");
      b.sentence_vecs.resize(static_cast<Eigen::Index>(rows.size()), kClipDim);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<std::size_t>(kClipDim))
          throw DimensionError("bundle '" + b.metaverse_id + "': sentence vector " + std::to_string(r) +
                               " has length " + std::to_string(rows[r].size()) + ", expected " +
                               std::to_string(kClipDim));
        b.sentence_vecs.row(static_cast<Eigen::Index>(r)) = floats(rows[r]).transpose();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
    validate(b);
    out.push_back(std::move(b));
  }
  return out;
}

// Keeps the bundles for every corpus record, validating dimensions and the
// sentence count of each description.
inline BundleMap select_bundles(std::vector<EmbeddingBundle> bundles, const std::vector<MetaverseRecord>& corpus) {
  BundleMap all;
  for (auto& b : bundles) {
    auto id = b.metaverse_id;
    all.insert_or_assign(std::move(id), std::move(b));
  }
  BundleMap out;
  std::vector<std::string> missing;
  for (const auto& r : corpus) {
    auto it = all.find(r.metaverse_id);
    if (it == all.end()) {
      missing.push_back(r.metaverse_id);
      continue;
    }
    validate(it->second);
    const auto expected = split_sentences(r.description).size();
    if (static_cast<std::size_t>(it->second.sentence_vecs.rows()) != expected)
      throw DimensionError("bundle '" + r.metaverse_id + "': " + std::to_string(it->second.sentence_vecs.rows()) +
                           " sentence vectors, description has " + std::to_string(expected) + " sentences");
    out.emplace(r.metaverse_id, std::move(it->second));
  }
  if (!missing.empty()) {
    std::string msg = "no embedding bundle for " + std::to_string(missing.size()) + " id(s):";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
    if (missing.size() > 10) msg += " ...";
    throw MissingIdError(msg);
  }
  return out;
}

inline BundleMap load_bundles(const std::string& path, const std::vector<MetaverseRecord>& corpus) {
  return select_bundles(read_bundle_file(path), corpus);
}

// ---------------------------------------------------------------------------
// Synthetic provider

struct SyntheticEmbeddingConfig {
  std::uint64_t seed = 0;
  bool informative = true;
  double noise_scale = 0.1;
};

namespace detail {

inline VecF gaussian_direction(std::uint64_t seed, int dim) {
  Rng rng(seed);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  v /= v.norm();
  return v.cast<float>();
}

}  // namespace detail

// Everything is keyed by id, never by position in the corpus:
//   scene_vec     unit-norm Gaussian direction per scene_id
//   painting_vec  unit-norm Gaussian direction per painting_id
//   target        M * scene_vec + painting_vec, M a fixed 512x200 Gaussian
//                 matrix with entry variance 1/512
//   sentence k    informative: target + noise_scale * unit Gaussian direction
//                 otherwise:   unit Gaussian direction
class SyntheticEmbeddingProvider {
 public:
  explicit SyntheticEmbeddingProvider(SyntheticEmbeddingConfig cfg) : cfg_(cfg), mixing_(kClipDim, kSceneDim) {
    if (!(cfg_.noise_scale >= 0.0)) throw InvalidArgument("noise_scale must be non-negative");
    Rng rng(derive_seed(cfg_.seed, "mixing"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(kClipDim));
    for (int c = 0; c < mixing_.cols(); ++c)
      for (int r = 0; r < mixing_.rows(); ++r) mixing_(r, c) = static_cast<float>(rng.normal() * scale);
  }

  const SyntheticEmbeddingConfig& config() const { return cfg_; }

  VecF scene_vec(const std::string& scene_id) const {
    return detail::gaussian_direction(derive_seed(cfg_.seed, "scene:" + scene_id), kSceneDim);
  }

  VecF painting_vec(const std::string& painting_id) const {
    return detail::gaussian_direction(derive_seed(cfg_.seed, "painting:" + painting_id), kClipDim);
  }

  VecF projected_scene(const VecF& scene) const { return mixing_ * scene; }

  VecF target(const VecF& scene, const VecF& painting) const { return projected_scene(scene) + painting; }

  EmbeddingBundle make(const MetaverseRecord& r) const {
    EmbeddingBundle b;
    b.metaverse_id = r.metaverse_id;
    b.scene_vec = scene_vec(r.scene_id);
    b.painting_vec = painting_vec(r.painting_id);
    const auto sentences = static_cast<int>(std::max<std::size_t>(1, split_sentences(r.description).size()));
    b.sentence_vecs.resize(sentences, kClipDim);
    const VecF t = target(b.scene_vec, b.painting_vec);
    const auto noise_seed = derive_seed(cfg_.seed, "noise:" + r.metaverse_id);
    for (int k = 0; k < sentences; ++k) {
      const VecF n = detail::gaussian_direction(derive_seed(noise_seed, static_cast<std::uint64_t>(k)), kClipDim);
      if (cfg_.informative)
        b.sentence_vecs.row(k) = (t + static_cast<float>(cfg_.noise_scale) * n).transpose();
      else
        b.sentence_vecs.row(k) = n.transpose();
    }
    return b;
  }

 private:
  SyntheticEmbeddingConfig cfg_;
  MatF mixing_;
};

inline BundleMap synthesize_bundles(const std::vector<MetaverseRecord>& corpus, const SyntheticEmbeddingConfig& cfg) {
  const SyntheticEmbeddingProvider provider(cfg);
  BundleMap out;
  out.reserve(corpus.size());
  for (const auto& r : corpus) out.emplace(r.metaverse_id, provider.make(r));
  return out;
}

// ---------------------------------------------------------------------------
// Free-text sentence embedding for serving without an external encoder.
// Signed feature hashing of lowercase word unigrams and bigrams, L2
// normalized. It carries no semantics beyond lexical overlap and only stands
// in for the real image-text encoder in demos.

class HashingSentenceEmbedder {
 public:
  explicit HashingSentenceEmbedder(std::uint64_t seed = 0) : seed_(seed) {}

  VecF embed(std::string_view sentence) const {
    VecF v = VecF::Zero(kClipDim);
    std::vector<std::string> words;
    for (const auto& tok : split_tokens(sentence)) {
      std::string w;
      for (unsigned char c : tok)
        if (std::isalnum(c)) w += static_cast<char>(std::tolower(c));
      if (!w.empty()) words.push_back(std::move(w));
    }
    auto add = [&](const std::string& feature) {
      const auto h = derive_seed(seed_, feature);
      v[static_cast<Eigen::Index>(h % kClipDim)] += (h >> 63) ? -1.0f : 1.0f;
    };
    for (std::size_t i = 0; i < words.size(); ++i) {
      add(words[i]);
      if (i + 1 < words.size()) add(words[i] + " " + words[i + 1]);
    }
    const float n = v.norm();
    if (n > 0.0f) v /= n;
    return v;
  }

  MatF embed_all(const std::vector<std::string>& sentences) const {
    MatF out(static_cast<Eigen::Index>(sentences.size()), kClipDim);
    for (std::size_t i = 0; i < sentences.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embed(sentences[i]).transpose();
    return out;
  }

 private:
  std::uint64_t seed_;
};

}  // namespace t2m
