#pragma once

// Layers with explicit forward/backward passes. Activations are batch-major:
// one row per sample. Forward functions are const and write whatever the
// backward pass needs into a caller-owned cache, so inference can run
// concurrently on shared parameters.

#include <cmath>
#include <string>
#include <vector>

#include "t2m/common.hpp"

namespace t2m {

template <typename S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool trainable = true;  // false for batch-norm running statistics

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool train = true)
      : name(std::move(n)), value(Mat<S>::Zero(rows, cols)), grad(Mat<S>::Zero(rows, cols)), trainable(train) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename S>
using ParamRefs = std::vector<Param<S>*>;

// Dropout applies masks; batch_stats normalizes with batch statistics;
// update_running folds those statistics into the running estimates.
struct ForwardMode {
  bool dropout = false;
  bool batch_stats = false;
  bool update_running = false;

  static constexpr ForwardMode training() { return {true, true, true}; }
  static constexpr ForwardMode inference() { return {}; }
};

template <typename S>
inline void init_uniform(Mat<S>& m, double bound, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng)
      : weight_(name + ".weight", out, in), bias_(name + ".bias", out, 1) {
    init_uniform(weight_.value, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  }

  int in_dim() const { return static_cast<int>(weight_.value.cols()); }
  int out_dim() const { return static_cast<int>(weight_.value.rows()); }

  Mat<S> forward(const Mat<S>& x) const {
    if (x.cols() != in_dim())
      throw DimensionError(weight_.name + ": input width " + std::to_string(x.cols()) + ", expected " +
                           std::to_string(in_dim()));
    Mat<S> y = x * weight_.value.transpose();
    y.rowwise() += bias_.value.col(0).transpose();
    return y;
  }

  // Accumulates parameter gradients; returns dx when requested.
  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy, bool need_input_grad = true) {
    weight_.grad.noalias() += dy.transpose() * x;
    bias_.grad.col(0) += dy.colwise().sum().transpose();
    if (!need_input_grad) return {};
    return dy * weight_.value;
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Param<S>& weight() { return weight_; }
  Param<S>& bias() { return bias_; }
  const Param<S>& weight() const { return weight_; }
  const Param<S>& bias() const { return bias_; }

 private:
  Param<S> weight_;
  Param<S> bias_;
};

// ---------------------------------------------------------------------------

template <typename S>
struct BatchNormCache {
  Mat<S> xhat;
  Vec<S> inv_std;
  bool batch_stats = false;
};

template <typename S>
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;
  BatchNorm(const std::string& name, int dim)
      : gamma_(name + ".gamma", dim, 1),
        beta_(name + ".beta", dim, 1),
        running_mean_(name + ".running_mean", dim, 1, false),
        running_var_(name + ".running_var", dim, 1, false) {
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  int dim() const { return static_cast<int>(gamma_.value.rows()); }

  // Not const: update_running mutates the running statistics. The training
  // module is the only caller that sets it.
  Mat<S> forward(const Mat<S>& x, ForwardMode mode, BatchNormCache<S>* cache) {
    return mode.batch_stats ? forward_batch(x, mode.update_running, cache) : forward_running(x, cache);
  }

  Mat<S> forward(const Mat<S>& x, BatchNormCache<S>* cache = nullptr) const { return forward_running(x, cache); }

  Mat<S> backward(const BatchNormCache<S>& cache, const Mat<S>& dy) {
    const auto& g = gamma_.value.col(0);
    gamma_.grad.col(0) += (dy.cwiseProduct(cache.xhat)).colwise().sum().transpose();
    beta_.grad.col(0) += dy.colwise().sum().transpose();
    Mat<S> dxhat = dy * g.asDiagonal();
    if (!cache.batch_stats) return dxhat * cache.inv_std.asDiagonal();
    const S n = static_cast<S>(dy.rows());
    const RowVec<S> sum_dxhat = dxhat.colwise().sum();
    const RowVec<S> sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).colwise().sum();
    Mat<S> dx = dxhat * n;
    dx.rowwise() -= sum_dxhat;
    dx -= cache.xhat * sum_dxhat_xhat.asDiagonal();
    return (dx * cache.inv_std.asDiagonal()) / n;
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  Param<S>& gamma() { return gamma_; }
  Param<S>& beta() { return beta_; }
  Param<S>& running_mean() { return running_mean_; }
  Param<S>& running_var() { return running_var_; }

 private:
  Mat<S> normalize(const Mat<S>& x, const RowVec<S>& mean, const Vec<S>& inv_std, BatchNormCache<S>* cache,
                   bool batch_stats) const {
    Mat<S> xhat = (x.rowwise() - mean) * inv_std.asDiagonal();
    Mat<S> y = xhat * gamma_.value.col(0).asDiagonal();
    y.rowwise() += beta_.value.col(0).transpose();
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = inv_std;
      cache->batch_stats = batch_stats;
    }
    return y;
  }

  Mat<S> forward_running(const Mat<S>& x, BatchNormCache<S>* cache) const {
    check(x);
    const Vec<S> inv_std = (running_var_.value.col(0).array() + S(kEps)).rsqrt();
    return normalize(x, running_mean_.value.col(0).transpose(), inv_std, cache, false);
  }

  Mat<S> forward_batch(const Mat<S>& x, bool update_running, BatchNormCache<S>* cache) {
    check(x);
    const auto n = x.rows();
    if (n < 2) throw InvalidArgument(gamma_.name + ": batch statistics need at least 2 rows");
    const RowVec<S> mean = x.colwise().mean();
    const Mat<S> centered = x.rowwise() - mean;
    const Vec<S> var = centered.array().square().colwise().sum().transpose() / static_cast<S>(n);
    const Vec<S> inv_std = (var.array() + S(kEps)).rsqrt();
    if (update_running) {
      // Running variance tracks the unbiased estimate.
      const S m = static_cast<S>(kMomentum);
      const S unbias = static_cast<S>(n) / static_cast<S>(n - 1);
      running_mean_.value.col(0) = (S(1) - m) * running_mean_.value.col(0) + m * mean.transpose();
      running_var_.value.col(0) = (S(1) - m) * running_var_.value.col(0) + m * unbias * var;
    }
    return normalize(x, mean, inv_std, cache, true);
  }

  void check(const Mat<S>& x) const {
    if (x.cols() != dim())
      throw DimensionError(gamma_.name + ": input width " + std::to_string(x.cols()) + ", expected " +
                           std::to_string(dim()));
  }

  Param<S> gamma_, beta_, running_mean_, running_var_;
};

// Inverted dropout: kept units are scaled by 1/(1-p) during training.
template <typename S>
inline Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat<S> mask(rows, cols);
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = rng.uniform() < p ? S(0) : keep;
  return mask;
}

// ---------------------------------------------------------------------------
// Three affine layers: ReLU(W1 x + b1) -> Dropout -> BatchNorm -> ReLU(W2 . + b2)
// -> Dropout -> BatchNorm -> W3 . + b3.

struct FcNetDims {
  int in = 0;
  int hidden1 = 512;
  int hidden2 = 384;
  int out = 0;
  double dropout1 = 0.2;
  double dropout2 = 0.2;
};

template <typename S>
struct FcNetCache {
  Mat<S> x, z1, mask1, a1, z2, mask2, a2, n2, n1;
  BatchNormCache<S> bn1, bn2;
};

template <typename S>
class FcNet {
 public:
  FcNet() = default;
  FcNet(const std::string& name, const FcNetDims& dims, Rng& rng)
      : dims_(dims),
        fc1_(name + ".fc1", dims.in, dims.hidden1, rng),
        bn1_(name + ".bn1", dims.hidden1),
        fc2_(name + ".fc2", dims.hidden1, dims.hidden2, rng),
        bn2_(name + ".bn2", dims.hidden2),
        fc3_(name + ".fc3", dims.hidden2, dims.out, rng) {
    for (double p : {dims.dropout1, dims.dropout2})
      if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument(name + ": dropout probability must be in [0, 1)");
  }

  const FcNetDims& dims() const { return dims_; }

  Mat<S> forward(const Mat<S>& x, ForwardMode mode, Rng* rng, FcNetCache<S>* cache) {
    FcNetCache<S> local;
    auto& c = cache ? *cache : local;
    c.x = x;
    c.z1 = fc1_.forward(x);
    c.a1 = c.z1.cwiseMax(S(0));
    apply_dropout(c.a1, c.mask1, dims_.dropout1, mode, rng);
    c.n1 = bn1_.forward(c.a1, mode, &c.bn1);
    c.z2 = fc2_.forward(c.n1);
    c.a2 = c.z2.cwiseMax(S(0));
    apply_dropout(c.a2, c.mask2, dims_.dropout2, mode, rng);
    c.n2 = bn2_.forward(c.a2, mode, &c.bn2);
    return fc3_.forward(c.n2);
  }

  Mat<S> infer(const Mat<S>& x) const {
    Mat<S> h = fc1_.forward(x).cwiseMax(S(0));
    h = fc2_.forward(bn1_.forward(h)).cwiseMax(S(0));
    return fc3_.forward(bn2_.forward(h));
  }

  Mat<S> backward(const FcNetCache<S>& c, const Mat<S>& dout, bool need_input_grad = true) {
    Mat<S> d = fc3_.backward(c.n2, dout);
    d = bn2_.backward(c.bn2, d);
    if (c.mask2.size()) d = d.cwiseProduct(c.mask2);
    d = d.cwiseProduct((c.z2.array() > S(0)).template cast<S>().matrix());
    d = fc2_.backward(c.n1, d);
    d = bn1_.backward(c.bn1, d);
    if (c.mask1.size()) d = d.cwiseProduct(c.mask1);
    d = d.cwiseProduct((c.z1.array() > S(0)).template cast<S>().matrix());
    return fc1_.backward(c.x, d, need_input_grad);
  }

  void collect(ParamRefs<S>& out) {
    fc1_.collect(out);
    bn1_.collect(out);
    fc2_.collect(out);
    bn2_.collect(out);
    fc3_.collect(out);
  }

  Linear<S>& fc1() { return fc1_; }
  Linear<S>& fc2() { return fc2_; }
  Linear<S>& fc3() { return fc3_; }
  BatchNorm<S>& bn1() { return bn1_; }
  BatchNorm<S>& bn2() { return bn2_; }

 private:
  static void apply_dropout(Mat<S>& a, Mat<S>& mask, double p, ForwardMode mode, Rng* rng) {
    mask.resize(0, 0);
    if (!mode.dropout || p == 0.0) return;
    if (!rng) throw InvalidArgument("dropout requires a generator");
    mask = dropout_mask<S>(a.rows(), a.cols(), p, *rng);
    a = a.cwiseProduct(mask);
  }

  FcNetDims dims_;
  Linear<S> fc1_;
  BatchNorm<S> bn1_;
  Linear<S> fc2_;
  BatchNorm<S> bn2_;
  Linear<S> fc3_;
};

}  // namespace t2m
