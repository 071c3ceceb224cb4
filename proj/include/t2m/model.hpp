#pragma once

// Two-tower model and its checkpoint file.
//
// Checkpoint layout:
//   "T2MCKPT1" (8 bytes) | uint32 version | uint64 manifest byte length |
//   manifest (UTF-8 JSON) | tensor data
// The manifest holds the encoder configuration, the init seed, free-form
// metadata and, per tensor, {name, rows, cols, offset}; offsets are byte
// offsets into the tensor data, which stores float32 little-endian values in
// column-major order. All integers are little-endian.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "t2m/common.hpp"
#include "t2m/embeddings.hpp"
#include "t2m/encoders.hpp"

namespace t2m {

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
  return {{"fusion", to_string(c.fusion)},     {"sequence", to_string(c.sequence)}, {"joint_dim", c.joint_dim},
          {"scene_dim", c.scene_dim},          {"painting_dim", c.painting_dim},    {"sentence_dim", c.sentence_dim},
          {"hidden1", c.hidden1},              {"hidden2", c.hidden2},              {"dropout1", c.dropout1},
          {"dropout2", c.dropout2}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
  c.sequence = parse_sequence_variant(j.at("sequence").get<std::string>());
  j.at("joint_dim").get_to(c.joint_dim);
  j.at("scene_dim").get_to(c.scene_dim);
  j.at("painting_dim").get_to(c.painting_dim);
  j.at("sentence_dim").get_to(c.sentence_dim);
  j.at("hidden1").get_to(c.hidden1);
  j.at("hidden2").get_to(c.hidden2);
  j.at("dropout1").get_to(c.dropout1);
  j.at("dropout2").get_to(c.dropout2);
  return c;
}

// Batch of Metaverse inputs gathered from bundles.
template <typename S>
struct MetaverseBatch {
  Mat<S> scenes;
  Mat<S> paintings;
};

template <typename S>
inline MetaverseBatch<S> gather_metaverses(const std::vector<const EmbeddingBundle*>& bundles) {
  MetaverseBatch<S> b;
  const auto n = static_cast<Eigen::Index>(bundles.size());
  if (n == 0) return b;
  b.scenes.resize(n, bundles.front()->scene_vec.size());
  b.paintings.resize(n, bundles.front()->painting_vec.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& x = *bundles[static_cast<std::size_t>(i)];
    if (x.scene_vec.size() != b.scenes.cols() || x.painting_vec.size() != b.paintings.cols())
      throw DimensionError("bundle '" + x.metaverse_id + "' has inconsistent feature widths");
    b.scenes.row(i) = x.scene_vec.cast<S>().transpose();
    b.paintings.row(i) = x.painting_vec.cast<S>().transpose();
  }
  return b;
}

template <typename S>
inline SequenceBatch<S> gather_descriptions(const std::vector<const EmbeddingBundle*>& bundles) {
  std::vector<Mat<S>> converted;
  converted.reserve(bundles.size());
  std::vector<const Mat<S>*> ptrs;
  for (const auto* b : bundles) {
    if constexpr (std::is_same_v<S, float>) {
      ptrs.push_back(&b->sentence_vecs);
    } else {
      converted.push_back(b->sentence_vecs.cast<S>());
    }
  }
  if constexpr (!std::is_same_v<S, float>)
    for (const auto& m : converted) ptrs.push_back(&m);
  return SequenceBatch<S>::from(ptrs);
}

template <typename S>
class TwoTowerModel {
 public:
  TwoTowerModel() = default;
  TwoTowerModel(const EncoderConfig& cfg, std::uint64_t init_seed) : cfg_(cfg), init_seed_(init_seed) {
    Rng rng(derive_seed(init_seed, "init"));
    metaverse_ = MetaverseEncoder<S>(cfg, rng);
    description_ = DescriptionEncoder<S>(cfg, rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  std::uint64_t init_seed() const { return init_seed_; }

  MetaverseEncoder<S>& metaverse() { return metaverse_; }
  DescriptionEncoder<S>& description() { return description_; }
  const MetaverseEncoder<S>& metaverse() const { return metaverse_; }
  const DescriptionEncoder<S>& description() const { return description_; }

  ParamRefs<S> params() {
    ParamRefs<S> out;
    metaverse_.collect(out);
    description_.collect(out);
    return out;
  }

  std::size_t trainable_count() {
    std::size_t n = 0;
    for (auto* p : params())
      if (p->trainable) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  // Inference embeddings, processed in chunks so memory stays bounded.
  Mat<S> encode_metaverses(const std::vector<const EmbeddingBundle*>& bundles, std::size_t chunk = 512) const {
    Mat<S> out(static_cast<Eigen::Index>(bundles.size()), cfg_.joint_dim);
    for (std::size_t start = 0; start < bundles.size(); start += chunk) {
      const auto stop = std::min(bundles.size(), start + chunk);
      const std::vector<const EmbeddingBundle*> part(bundles.begin() + static_cast<std::ptrdiff_t>(start),
                                                     bundles.begin() + static_cast<std::ptrdiff_t>(stop));
      const auto batch = gather_metaverses<S>(part);
      out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(stop - start)) =
          metaverse_.infer(batch.scenes, batch.paintings);
    }
    return out;
  }

  Mat<S> encode_descriptions(const std::vector<const EmbeddingBundle*>& bundles, std::size_t chunk = 256) const {
    Mat<S> out(static_cast<Eigen::Index>(bundles.size()), cfg_.joint_dim);
    for (std::size_t start = 0; start < bundles.size(); start += chunk) {
      const auto stop = std::min(bundles.size(), start + chunk);
      const std::vector<const EmbeddingBundle*> part(bundles.begin() + static_cast<std::ptrdiff_t>(start),
                                                     bundles.begin() + static_cast<std::ptrdiff_t>(stop));
      out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(stop - start)) =
          description_.forward(gather_descriptions<S>(part), nullptr);
    }
    return out;
  }

  Vec<S> encode_description(const Mat<S>& sentence_vecs) const {
    return description_.encode(sentence_vecs).row(0).transpose();
  }

 private:
  EncoderConfig cfg_;
  std::uint64_t init_seed_ = 0;
  MetaverseEncoder<S> metaverse_;
  DescriptionEncoder<S> description_;
};

// Copies every parameter (trainable or not) between models of equal shape.
template <typename To, typename From>
inline void copy_parameters(TwoTowerModel<To>& dst, TwoTowerModel<From>& src) {
  auto d = dst.params();
  auto s = src.params();
  if (d.size() != s.size()) throw DimensionError("copy_parameters: parameter lists differ");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i]->name != s[i]->name || d[i]->value.rows() != s[i]->value.rows() ||
        d[i]->value.cols() != s[i]->value.cols())
      throw DimensionError("copy_parameters: mismatch at '" + s[i]->name + "'");
    d[i]->value = s[i]->value.template cast<To>();
  }
}

// ---------------------------------------------------------------------------

struct Checkpoint {
  TwoTowerModel<float> model;
  nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'T', '2', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCkptVersion = 1;

inline void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | hi << 32;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, TwoTowerModel<float>& model,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  auto params = model.params();
  nlohmann::ordered_json manifest = {{"format", "t2m-checkpoint"},
                                     {"version", detail::kCkptVersion},
                                     {"config", to_json(model.config())},
                                     {"init_seed", model.init_seed()},
                                     {"metadata", metadata},
                                     {"tensors", nlohmann::ordered_json::array()}};
  std::uint64_t offset = 0;
  for (auto* p : params) {
    manifest["tensors"].push_back({{"name", p->name},
                                   {"rows", p->value.rows()},
                                   {"cols", p->value.cols()},
                                   {"trainable", p->trainable},
                                   {"offset", offset}});
    offset += static_cast<std::uint64_t>(p->value.size()) * sizeof(float);
  }
  const auto text = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(detail::kCkptMagic, 8);
  detail::put_u32(out, detail::kCkptVersion);
  detail::put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (auto* p : params) detail::put_f32s(out, p->value.data(), static_cast<std::size_t>(p->value.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw ParseError(path + ": not a checkpoint file");
  const auto version = detail::get_u32(in);
  if (version != detail::kCkptVersion)
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto len = detail::get_u64(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError(path + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad manifest: " + e.what());
  }

  Checkpoint ck;
  ck.model = TwoTowerModel<float>(encoder_config_from_json(manifest.at("config")),
                                  manifest.at("init_seed").get<std::uint64_t>());
  ck.metadata = manifest.value("metadata", nlohmann::json::object());
  auto params = ck.model.params();
  std::unordered_map<std::string, Param<float>*> by_name;
  for (auto* p : params) by_name.emplace(p->name, p);

  const auto data_start = in.tellg();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size())
    throw ParseError(path + ": checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                     std::to_string(params.size()));
  for (const auto& t : tensors) {
    const auto name = t.at("name").get<std::string>();
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(path + ": unexpected tensor '" + name + "'");
    auto& v = it->second->value;
    if (t.at("rows").get<Eigen::Index>() != v.rows() || t.at("cols").get<Eigen::Index>() != v.cols())
      throw DimensionError(path + ": tensor '" + name + "' has the wrong shape");
    in.seekg(data_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    detail::get_f32s(in, v.data(), static_cast<std::size_t>(v.size()));
  }
  return ck;
}

}  // namespace t2m
