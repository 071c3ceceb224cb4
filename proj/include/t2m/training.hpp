#pragma once

// Contrastive training of the two towers with a bidirectional triplet loss
// over in-batch negatives, Adam, a single step-down learning-rate schedule
// and model selection on validation R@1.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "t2m/common.hpp"
#include "t2m/corpus.hpp"
#include "t2m/embeddings.hpp"
#include "t2m/evaluation.hpp"
#include "t2m/model.hpp"

namespace t2m {

struct TrainConfig {
  int batch_size = 64;
  double margin = 0.25;
  int epochs = 30;
  double lr = 0.008;
  int lr_drop_epoch = 17;       // last epoch at the initial rate
  double lr_drop_factor = 0.25;  // the rate is reduced by this fraction
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

inline void validate(const TrainConfig& c) {
  if (c.batch_size < 2) throw InvalidArgument("batch_size must be >= 2");
  if (!(c.margin > 0.0)) throw InvalidArgument("margin must be positive");
  if (!(c.lr > 0.0)) throw InvalidArgument("lr must be positive");
  if (!(c.lr_drop_factor > 0.0 && c.lr_drop_factor < 1.0)) throw InvalidArgument("lr_drop_factor must be in (0, 1)");
  if (c.epochs < 1) throw InvalidArgument("epochs must be >= 1");
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"margin", c.margin},
          {"epochs", c.epochs},         {"lr", c.lr},
          {"lr_drop_epoch", c.lr_drop_epoch}, {"lr_drop_factor", c.lr_drop_factor},
          {"seed", c.seed},             {"similarity", "cosine"}};
}

// 1-indexed epoch.
inline double learning_rate(const TrainConfig& c, int epoch) {
  return epoch <= c.lr_drop_epoch ? c.lr : c.lr * (1.0 - c.lr_drop_factor);
}

// ---------------------------------------------------------------------------
// Similarity matrix S(i, j) = cos(m_i, d_j).

template <typename S>
struct CosineCache {
  Mat<S> m_hat, d_hat;
  Vec<S> m_norm, d_norm;
};

namespace detail {

template <typename S>
inline void normalize_rows(const Mat<S>& x, Mat<S>& hat, Vec<S>& norms) {
  norms = x.rowwise().norm();
  hat = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (norms[i] < S(kZeroNorm))
      hat.row(i).setZero();
    else
      hat.row(i) /= norms[i];
  }
}

template <typename S>
inline Mat<S> normalize_backward(const Mat<S>& hat, const Vec<S>& norms, const Mat<S>& dhat) {
  Mat<S> dx(hat.rows(), hat.cols());
  for (Eigen::Index i = 0; i < hat.rows(); ++i) {
    if (norms[i] < S(kZeroNorm)) {
      dx.row(i).setZero();
      continue;
    }
    const S proj = hat.row(i).dot(dhat.row(i));
    dx.row(i) = (dhat.row(i) - proj * hat.row(i)) / norms[i];
  }
  return dx;
}

}  // namespace detail

template <typename S>
inline Mat<S> cosine_matrix(const Mat<S>& m, const Mat<S>& d, CosineCache<S>* cache = nullptr) {
  if (m.cols() != d.cols()) throw DimensionError("cosine_matrix: embedding widths differ");
  CosineCache<S> local;
  auto& c = cache ? *cache : local;
  detail::normalize_rows(m, c.m_hat, c.m_norm);
  detail::normalize_rows(d, c.d_hat, c.d_norm);
  return c.m_hat * c.d_hat.transpose();
}

template <typename S>
inline std::pair<Mat<S>, Mat<S>> cosine_matrix_backward(const CosineCache<S>& c, const Mat<S>& dsim) {
  const Mat<S> dm_hat = dsim * c.d_hat;
  const Mat<S> dd_hat = dsim.transpose() * c.m_hat;
  return {detail::normalize_backward(c.m_hat, c.m_norm, dm_hat), detail::normalize_backward(c.d_hat, c.d_norm, dd_hat)};
}

// L = 1/B sum_i sum_{j != i} [ max(0, margin + S(i,j) - S(i,i))      (metaverse anchor)
//                            + max(0, margin + S(j,i) - S(i,i)) ]    (description anchor)
template <typename S>
inline S triplet_loss(const Mat<S>& sim, double margin, Mat<S>* dsim = nullptr) {
  if (sim.rows() != sim.cols()) throw DimensionError("triplet_loss: similarity matrix is not square");
  const auto b = sim.rows();
  if (b < 2) throw InvalidArgument("triplet_loss: batch must have at least 2 items");
  const S delta = static_cast<S>(margin);
  const S inv_b = S(1) / static_cast<S>(b);
  const Vec<S> diag = sim.diagonal();
  // hinge_mt(i, j) = margin + S(i, j) - S(i, i): each row shifted by its diagonal
  Mat<S> mt = (sim.colwise() - diag).array() + delta;
  // hinge_tm(i, j) = margin + S(j, i) - S(i, i)
  Mat<S> tm = (sim.transpose().colwise() - diag).array() + delta;
  mt.diagonal().setZero();
  tm.diagonal().setZero();
  const Mat<S> mt_pos = mt.cwiseMax(S(0));
  const Mat<S> tm_pos = tm.cwiseMax(S(0));
  if (dsim) {
    const Mat<S> a = (mt.array() > S(0)).template cast<S>().matrix();
    const Mat<S> t = (tm.array() > S(0)).template cast<S>().matrix();
    // d/dS(i,j) from mt(i,j), and from tm(j,i) which reads S(i,j) too
    *dsim = (a + t.transpose()) * inv_b;
    dsim->diagonal() = -(a.rowwise().sum() + t.rowwise().sum()) * inv_b;
  }
  return (mt_pos.sum() + tm_pos.sum()) * inv_b;
}

// ---------------------------------------------------------------------------

template <typename S>
struct AdamState {
  std::vector<Mat<S>> m, v;
  long step = 0;
};

template <typename S>
inline void adam_step(ParamRefs<S>& params, AdamState<S>& state, double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(cfg.adam_beta1), b2 = static_cast<S>(cfg.adam_beta2);
  const S step = static_cast<S>(lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(cfg.adam_eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    if (!p->trainable) continue;
    state.m[k] = b1 * state.m[k] + (S(1) - b1) * p->grad;
    state.v[k] = b2 * state.v[k] + (S(1) - b2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= step * state.m[k].array() / (state.v[k].array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

// Forward, loss and backward on one batch; gradients are accumulated
// into the model's parameters (callers zero them first).
template <typename S>
inline S loss_and_gradients(TwoTowerModel<S>& model, const std::vector<const EmbeddingBundle*>& batch, double margin,
                            ForwardMode mode, Rng* rng, bool backward = true) {
  const auto mv = gather_metaverses<S>(batch);
  const auto desc = gather_descriptions<S>(batch);
  MetaverseCache<S> mcache;
  DescriptionCache<S> dcache;
  const Mat<S> m = model.metaverse().forward(mv.scenes, mv.paintings, mode, rng, &mcache);
  const Mat<S> d = model.description().forward(desc, &dcache);
  CosineCache<S> ccache;
  const Mat<S> sim = cosine_matrix(m, d, &ccache);
  Mat<S> dsim;
  const S loss = triplet_loss(sim, margin, backward ? &dsim : nullptr);
  if (!backward || !std::isfinite(static_cast<double>(loss))) return loss;
  const auto [dm, dd] = cosine_matrix_backward(ccache, dsim);
  model.metaverse().backward(mcache, dm);
  model.description().backward(desc, dcache, dd);
  return loss;
}

// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_r1 = 0.0;
  double val_medr = 0.0;
};

inline void write_log_csv(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,lr,train_loss,val_r1,val_medr\n";
  for (const auto& e : log) {
    std::ostringstream line;
    line.precision(9);
    line << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.val_r1 << ',' << e.val_medr << '\n';
    out << line.str();
  }
}

// Index into `log` of the best validation R@1, earliest epoch on ties.
inline std::size_t select_best(const std::vector<EpochLog>& log) {
  if (log.empty()) throw EmptyInputError("select_best: empty training log");
  std::size_t best = 0;
  for (std::size_t i = 1; i < log.size(); ++i)
    if (log[i].val_r1 > log[best].val_r1) best = i;
  return best;
}

struct TrainResult {
  TwoTowerModel<float> best;
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const TrainConfig& cfg, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(derive_seed(cfg.seed, "epoch-shuffle"), static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> batches;
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < n; start += b) {
    const auto stop = std::min(n, start + b);
    if (stop - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

inline TrainResult train(TwoTowerModel<float> model, const std::vector<MetaverseRecord>& train_records,
                         const std::vector<MetaverseRecord>& val_records, const BundleMap& bundles,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  validate(cfg);
  if (train_records.size() < 2) throw EmptyInputError("train: need at least 2 training records");
  if (val_records.empty()) throw EmptyInputError("train: empty validation split");
  const auto items = detail::bundles_for(train_records, bundles);
  detail::bundles_for(val_records, bundles);

  auto params = model.params();
  AdamState<float> adam;
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  TrainResult result;
  EvalOptions val_opts;
  val_opts.double_precision = false;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    const auto batches = epoch_batches(items.size(), cfg, epoch);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      std::vector<const EmbeddingBundle*> batch;
      for (auto k : batches[bi]) batch.push_back(items[k]);
      model.zero_grad();
      const float loss = loss_and_gradients(model, batch, cfg.margin, ForwardMode::training(), &dropout_rng);
      if (!std::isfinite(loss)) {
        std::string ids;
        for (std::size_t i = 0; i < batch.size() && i < 8; ++i) ids += " " + batch[i]->metaverse_id;
        throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(bi + 1) + "; ids:" + ids + (batch.size() > 8 ? " ..." : ""));
      }
      adam_step(params, adam, lr, cfg);
      loss_sum += loss;
    }
    const auto val = evaluate(model, val_records, bundles, val_opts);
    EpochLog entry{epoch, lr, batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size()), val.r_at.at(1),
                   val.med_r};
    result.log.push_back(entry);
    if (select_best(result.log) == result.log.size() - 1) {
      result.best = model;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

}  // namespace t2m
