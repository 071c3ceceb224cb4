#pragma once

// The two towers. The Metaverse encoder maps (scene features, painting
// features) to the joint space, either by late fusion (one FCNet per input,
// outputs concatenated) or early fusion (painting projected to the scene
// width, concatenated with the scene features, one joint FCNet). The
// description encoder maps a sequence of sentence vectors to the joint space.

#include <string>
#include <variant>

#include "t2m/common.hpp"
#include "t2m/nn.hpp"
#include "t2m/recurrent.hpp"
#include "t2m/sentences.hpp"

namespace t2m {

enum class FusionMode { kLate, kEarly };
enum class SequenceVariant { kMean, kGru, kBiGru, kLstm, kBiLstm };

inline std::string to_string(FusionMode m) { return m == FusionMode::kLate ? "lf" : "ef"; }

inline FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "lf" || s == "LF") return FusionMode::kLate;
  if (s == "ef" || s == "EF") return FusionMode::kEarly;
  throw InvalidArgument("unknown fusion mode '" + std::string(s) + "' (expected lf or ef)");
}

inline std::string to_string(SequenceVariant v) {
  switch (v) {
    case SequenceVariant::kMean: return "mean";
    case SequenceVariant::kGru: return "gru";
    case SequenceVariant::kBiGru: return "bigru";
    case SequenceVariant::kLstm: return "lstm";
    case SequenceVariant::kBiLstm: return "bilstm";
  }
  return "?";
}

inline SequenceVariant parse_sequence_variant(std::string_view s) {
  std::string l;
  for (char c : s) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l == "mean") return SequenceVariant::kMean;
  if (l == "gru") return SequenceVariant::kGru;
  if (l == "bigru") return SequenceVariant::kBiGru;
  if (l == "lstm") return SequenceVariant::kLstm;
  if (l == "bilstm") return SequenceVariant::kBiLstm;
  throw InvalidArgument("unknown sequence variant '" + std::string(s) + "'");
}

struct EncoderConfig {
  FusionMode fusion = FusionMode::kLate;
  SequenceVariant sequence = SequenceVariant::kBiGru;
  int joint_dim = kJointDim;
  int scene_dim = kSceneDim;
  int painting_dim = kClipDim;
  int sentence_dim = kClipDim;
  int hidden1 = 512;
  int hidden2 = 384;
  double dropout1 = 0.2;
  double dropout2 = 0.2;
};

// ---------------------------------------------------------------------------

template <typename S>
struct MetaverseCache {
  FcNetCache<S> scene, painting, joint;
  Mat<S> painting_in, fused;
};

template <typename S>
class MetaverseEncoder {
 public:
  MetaverseEncoder() = default;
  MetaverseEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.joint_dim % 2 != 0) throw InvalidArgument("joint dimension must be even");
    auto dims = [&](int in, int out) { return FcNetDims{in, cfg.hidden1, cfg.hidden2, out, cfg.dropout1, cfg.dropout2}; };
    if (cfg.fusion == FusionMode::kLate) {
      scene_ = FcNet<S>("mum.scene", dims(cfg.scene_dim, cfg.joint_dim / 2), rng);
      painting_ = FcNet<S>("mum.painting", dims(cfg.painting_dim, cfg.joint_dim / 2), rng);
    } else {
      projection_ = Linear<S>("mum.painting_proj", cfg.painting_dim, cfg.scene_dim, rng);
      joint_ = FcNet<S>("mum.joint", dims(2 * cfg.scene_dim, cfg.joint_dim), rng);
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  // scenes: B x scene_dim, paintings: B x painting_dim -> B x joint_dim
  Mat<S> forward(const Mat<S>& scenes, const Mat<S>& paintings, ForwardMode mode, Rng* rng,
                 MetaverseCache<S>* cache) {
    check(scenes, paintings);
    MetaverseCache<S> local;
    auto& c = cache ? *cache : local;
    if (cfg_.fusion == FusionMode::kLate) {
      Mat<S> out(scenes.rows(), cfg_.joint_dim);
      out << scene_.forward(scenes, mode, rng, &c.scene), painting_.forward(paintings, mode, rng, &c.painting);
      return out;
    }
    c.painting_in = paintings;
    c.fused = fuse(scenes, projection_.forward(paintings));
    return joint_.forward(c.fused, mode, rng, &c.joint);
  }

  Mat<S> infer(const Mat<S>& scenes, const Mat<S>& paintings) const {
    check(scenes, paintings);
    if (cfg_.fusion == FusionMode::kLate) {
      Mat<S> out(scenes.rows(), cfg_.joint_dim);
      out << scene_.infer(scenes), painting_.infer(paintings);
      return out;
    }
    return joint_.infer(fuse(scenes, projection_.forward(paintings)));
  }

  void backward(const MetaverseCache<S>& c, const Mat<S>& dout) {
    const auto half = cfg_.joint_dim / 2;
    if (cfg_.fusion == FusionMode::kLate) {
      scene_.backward(c.scene, dout.leftCols(half), false);
      painting_.backward(c.painting, dout.rightCols(half), false);
      return;
    }
    const Mat<S> dfused = joint_.backward(c.joint, dout, true);
    projection_.backward(c.painting_in, dfused.rightCols(cfg_.scene_dim), false);
  }

  void collect(ParamRefs<S>& out) {
    if (cfg_.fusion == FusionMode::kLate) {
      scene_.collect(out);
      painting_.collect(out);
    } else {
      projection_.collect(out);
      joint_.collect(out);
    }
  }

  FcNet<S>& scene_net() { return scene_; }
  FcNet<S>& painting_net() { return painting_; }
  FcNet<S>& joint_net() { return joint_; }
  Linear<S>& painting_projection() { return projection_; }

 private:
  void check(const Mat<S>& scenes, const Mat<S>& paintings) const {
    if (scenes.cols() != cfg_.scene_dim)
      throw DimensionError("scene features have width " + std::to_string(scenes.cols()) + ", expected " +
                           std::to_string(cfg_.scene_dim));
    if (paintings.cols() != cfg_.painting_dim)
      throw DimensionError("painting features have width " + std::to_string(paintings.cols()) + ", expected " +
                           std::to_string(cfg_.painting_dim));
    if (scenes.rows() != paintings.rows()) throw DimensionError("scene and painting batch sizes differ");
  }

  static Mat<S> fuse(const Mat<S>& scenes, const Mat<S>& projected) {
    Mat<S> f(scenes.rows(), scenes.cols() + projected.cols());
    f << scenes, projected;
    return f;
  }

  EncoderConfig cfg_;
  FcNet<S> scene_, painting_, joint_;
  Linear<S> projection_;
};

// ---------------------------------------------------------------------------
// Temporal average pooling followed by an affine map to the joint width.

template <typename S>
class MeanPoolEncoder {
 public:
  struct EncoderCache {
    Mat<S> pooled;
  };

  MeanPoolEncoder() = default;
  MeanPoolEncoder(const std::string& name, int in, int out, Rng& rng) : proj_(name + ".proj", in, out, rng) {}

  static Mat<S> pool(const SequenceBatch<S>& batch) {
    Mat<S> pooled(batch.size(), batch.rows.cols());
    for (Eigen::Index i = 0; i < batch.size(); ++i)
      pooled.row(i) = batch.rows.middleRows(batch.offsets[i], batch.length(i)).colwise().mean();
    return pooled;
  }

  Mat<S> forward(const SequenceBatch<S>& batch, EncoderCache* cache) const {
    Mat<S> pooled = pool(batch);
    Mat<S> out = proj_.forward(pooled);
    if (cache) cache->pooled = std::move(pooled);
    return out;
  }

  void backward(const SequenceBatch<S>&, const EncoderCache& cache, const Mat<S>& dout) {
    proj_.backward(cache.pooled, dout, false);
  }

  void collect(ParamRefs<S>& out) { proj_.collect(out); }

  Linear<S>& projection() { return proj_; }

 private:
  Linear<S> proj_;
};

template <typename S>
using DescriptionCache = std::variant<typename MeanPoolEncoder<S>::EncoderCache, typename GruEncoder<S>::EncoderCache,
                                      typename LstmEncoder<S>::EncoderCache>;

template <typename S>
class DescriptionEncoder {
 public:
  DescriptionEncoder() = default;
  DescriptionEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int in = cfg.sentence_dim, out = cfg.joint_dim;
    switch (cfg.sequence) {
      case SequenceVariant::kMean: impl_ = MeanPoolEncoder<S>("tum.mean", in, out, rng); break;
      case SequenceVariant::kGru: impl_ = GruEncoder<S>("tum.gru", in, out, false, rng); break;
      case SequenceVariant::kBiGru: impl_ = GruEncoder<S>("tum.bigru", in, out, true, rng); break;
      case SequenceVariant::kLstm: impl_ = LstmEncoder<S>("tum.lstm", in, out, false, rng); break;
      case SequenceVariant::kBiLstm: impl_ = LstmEncoder<S>("tum.bilstm", in, out, true, rng); break;
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  // B sequences -> B x joint_dim
  Mat<S> forward(const SequenceBatch<S>& batch, DescriptionCache<S>* cache) const {
    if (batch.size() < 1) throw EmptyInputError("description batch is empty");
    for (Eigen::Index i = 0; i < batch.size(); ++i)
      if (batch.length(i) < 1) throw EmptyInputError("description with no sentence vectors");
    if (batch.rows.cols() != cfg_.sentence_dim)
      throw DimensionError("sentence vectors have width " + std::to_string(batch.rows.cols()) + ", expected " +
                           std::to_string(cfg_.sentence_dim));
    return std::visit(
        [&](const auto& enc) -> Mat<S> {
          using Enc = std::decay_t<decltype(enc)>;
          if (!cache) return enc.forward(batch, nullptr);
          typename Enc::EncoderCache c;
          Mat<S> out = enc.forward(batch, &c);
          *cache = std::move(c);
          return out;
        },
        impl_);
  }

  Mat<S> encode(const Mat<S>& sentence_vecs) const { return forward(SequenceBatch<S>::single(sentence_vecs), nullptr); }

  void backward(const SequenceBatch<S>& batch, const DescriptionCache<S>& cache, const Mat<S>& dout) {
    std::visit(
        [&](auto& enc) {
          using Enc = std::decay_t<decltype(enc)>;
          enc.backward(batch, std::get<typename Enc::EncoderCache>(cache), dout);
        },
        impl_);
  }

  void collect(ParamRefs<S>& out) {
    std::visit([&](auto& enc) { enc.collect(out); }, impl_);
  }

  template <typename Enc>
  Enc& as() {
    return std::get<Enc>(impl_);
  }

 private:
  EncoderConfig cfg_;
  std::variant<MeanPoolEncoder<S>, GruEncoder<S>, LstmEncoder<S>> impl_;
};

}  // namespace t2m
