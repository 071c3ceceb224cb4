#pragma once

// GRU and LSTM layers over variable-length batches of sentence vectors.
// Only the final hidden state is produced. Gate layouts follow the common
// convention: GRU [reset, update, candidate], LSTM [input, forget, cell, output].

#include <string>
#include <vector>

#include "t2m/common.hpp"
#include "t2m/nn.hpp"

namespace t2m {

// Rows of all sequences stacked; sequence i spans rows [offsets[i], offsets[i+1]).
template <typename S>
struct SequenceBatch {
  Mat<S> rows;
  std::vector<Eigen::Index> offsets{0};

  Eigen::Index size() const { return static_cast<Eigen::Index>(offsets.size()) - 1; }
  Eigen::Index length(Eigen::Index i) const { return offsets[i + 1] - offsets[i]; }
  Eigen::Index max_length() const {
    Eigen::Index m = 0;
    for (Eigen::Index i = 0; i < size(); ++i) m = std::max(m, length(i));
    return m;
  }

  static SequenceBatch from(const std::vector<const Mat<S>*>& seqs) {
    SequenceBatch b;
    Eigen::Index total = 0, width = seqs.empty() ? 0 : seqs.front()->cols();
    for (const auto* s : seqs) {
      if (s->rows() < 1) throw EmptyInputError("empty sentence sequence");
      if (s->cols() != width) throw DimensionError("inconsistent sentence vector width in batch");
      total += s->rows();
      b.offsets.push_back(total);
    }
    b.rows.resize(total, width);
    for (std::size_t i = 0; i < seqs.size(); ++i) b.rows.middleRows(b.offsets[i], seqs[i]->rows()) = *seqs[i];
    return b;
  }

  static SequenceBatch single(const Mat<S>& seq) { return from({&seq}); }
};

namespace detail {

// Row of the packed input that sequence i consumes at step t.
template <typename S>
inline Eigen::Index step_row(const SequenceBatch<S>& b, Eigen::Index i, Eigen::Index t, bool reverse) {
  return reverse ? b.offsets[i + 1] - 1 - t : b.offsets[i] + t;
}

template <typename S>
inline Mat<S> gather_step(const Mat<S>& packed, const SequenceBatch<S>& b, Eigen::Index t, bool reverse,
                          Vec<S>& mask) {
  Mat<S> out = Mat<S>::Zero(b.size(), packed.cols());
  mask.setZero(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    if (t < b.length(i)) {
      out.row(i) = packed.row(step_row(b, i, t, reverse));
      mask[i] = S(1);
    }
  }
  return out;
}

template <typename S>
inline void scatter_step(Mat<S>& packed, const Mat<S>& step, const SequenceBatch<S>& b, Eigen::Index t,
                         bool reverse) {
  for (Eigen::Index i = 0; i < b.size(); ++i)
    if (t < b.length(i)) packed.row(step_row(b, i, t, reverse)) += step.row(i);
}

template <typename S>
inline Mat<S> sigmoid(const Mat<S>& x) {
  return (S(1) + (-x.array()).exp()).inverse().matrix();
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename S>
struct GruCache {
  Mat<S> gates_in;  // packed input projections, total x 3h
  std::vector<Mat<S>> h_prev, r, z, n, hn;  // hn = W_hn h + b_hn
  std::vector<Vec<S>> mask;
};

template <typename S>
class GruLayer {
 public:
  GruLayer() = default;
  GruLayer(const std::string& name, int in, int hidden, Rng& rng)
      : hidden_(hidden),
        w_ih_(name + ".w_ih", 3 * hidden, in),
        w_hh_(name + ".w_hh", 3 * hidden, hidden),
        b_ih_(name + ".b_ih", 3 * hidden, 1),
        b_hh_(name + ".b_hh", 3 * hidden, 1) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    init_uniform(w_ih_.value, bound, rng);
    init_uniform(w_hh_.value, bound, rng);
  }

  int hidden() const { return hidden_; }
  int in_dim() const { return static_cast<int>(w_ih_.value.cols()); }

  Mat<S> forward(const SequenceBatch<S>& batch, bool reverse, GruCache<S>* cache) const {
    if (batch.rows.cols() != in_dim()) throw DimensionError(w_ih_.name + ": input width mismatch");
    const auto h = hidden_;
    Mat<S> gates_in = batch.rows * w_ih_.value.transpose();
    gates_in.rowwise() += b_ih_.value.col(0).transpose();
    const auto steps = batch.max_length();
    Mat<S> state = Mat<S>::Zero(batch.size(), h);
    if (cache) {
      *cache = GruCache<S>{};
      cache->gates_in = gates_in;
    }
    Vec<S> mask;
    for (Eigen::Index t = 0; t < steps; ++t) {
      const Mat<S> gi = detail::gather_step(gates_in, batch, t, reverse, mask);
      Mat<S> gh = state * w_hh_.value.transpose();
      gh.rowwise() += b_hh_.value.col(0).transpose();
      const Mat<S> r = detail::sigmoid<S>(gi.leftCols(h) + gh.leftCols(h));
      const Mat<S> z = detail::sigmoid<S>(gi.middleCols(h, h) + gh.middleCols(h, h));
      const Mat<S> hn = gh.rightCols(h);
      const Mat<S> n = (gi.rightCols(h) + r.cwiseProduct(hn)).array().tanh().matrix();
      Mat<S> next = (Mat<S>::Ones(batch.size(), h) - z).cwiseProduct(n) + z.cwiseProduct(state);
      for (Eigen::Index i = 0; i < batch.size(); ++i)
        if (mask[i] == S(0)) next.row(i) = state.row(i);
      if (cache) {
        cache->h_prev.push_back(state);
        cache->r.push_back(r);
        cache->z.push_back(z);
        cache->n.push_back(n);
        cache->hn.push_back(hn);
        cache->mask.push_back(mask);
      }
      state = std::move(next);
    }
    return state;
  }

  // Input gradients are not produced: sentence vectors are fixed features.
  void backward(const SequenceBatch<S>& batch, bool reverse, const GruCache<S>& c, const Mat<S>& dstate_final) {
    const auto h = hidden_;
    const auto B = batch.size();
    Mat<S> dh = dstate_final;
    Mat<S> dgates_in = Mat<S>::Zero(c.gates_in.rows(), c.gates_in.cols());
    Mat<S> dgi(B, 3 * h), dgh(B, 3 * h);
    for (Eigen::Index t = static_cast<Eigen::Index>(c.r.size()) - 1; t >= 0; --t) {
      const auto& m = c.mask[t];
      const auto& r = c.r[t];
      const auto& z = c.z[t];
      const auto& n = c.n[t];
      const Mat<S> dh_act = m.asDiagonal() * dh;
      const Mat<S> dh_pass = dh - dh_act;
      const Mat<S> dn = dh_act.cwiseProduct(Mat<S>::Ones(B, h) - z);
      const Mat<S> dz = dh_act.cwiseProduct(c.h_prev[t] - n);
      const Mat<S> dn_pre = dn.cwiseProduct((S(1) - n.array().square()).matrix());
      const Mat<S> dr = dn_pre.cwiseProduct(c.hn[t]);
      dgi.leftCols(h) = dr.cwiseProduct(r.cwiseProduct(Mat<S>::Ones(B, h) - r));
      dgi.middleCols(h, h) = dz.cwiseProduct(z.cwiseProduct(Mat<S>::Ones(B, h) - z));
      dgi.rightCols(h) = dn_pre;
      dgh.leftCols(2 * h) = dgi.leftCols(2 * h);
      dgh.rightCols(h) = dn_pre.cwiseProduct(r);
      w_hh_.grad.noalias() += dgh.transpose() * c.h_prev[t];
      b_hh_.grad.col(0) += dgh.colwise().sum().transpose();
      dh = dh_act.cwiseProduct(z) + dgh * w_hh_.value + dh_pass;
      detail::scatter_step(dgates_in, dgi, batch, t, reverse);
    }
    w_ih_.grad.noalias() += dgates_in.transpose() * batch.rows;
    b_ih_.grad.col(0) += dgates_in.colwise().sum().transpose();
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&w_ih_);
    out.push_back(&w_hh_);
    out.push_back(&b_ih_);
    out.push_back(&b_hh_);
  }

 private:
  int hidden_ = 0;
  Param<S> w_ih_, w_hh_, b_ih_, b_hh_;
};

// ---------------------------------------------------------------------------

template <typename S>
struct LstmCache {
  Mat<S> gates_in;
  std::vector<Mat<S>> h_prev, c_prev, i, f, g, o, tanh_c;
  std::vector<Vec<S>> mask;
};

template <typename S>
class LstmLayer {
 public:
  LstmLayer() = default;
  LstmLayer(const std::string& name, int in, int hidden, Rng& rng)
      : hidden_(hidden),
        w_ih_(name + ".w_ih", 4 * hidden, in),
        w_hh_(name + ".w_hh", 4 * hidden, hidden),
        b_ih_(name + ".b_ih", 4 * hidden, 1),
        b_hh_(name + ".b_hh", 4 * hidden, 1) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    init_uniform(w_ih_.value, bound, rng);
    init_uniform(w_hh_.value, bound, rng);
  }

  int hidden() const { return hidden_; }
  int in_dim() const { return static_cast<int>(w_ih_.value.cols()); }

  Mat<S> forward(const SequenceBatch<S>& batch, bool reverse, LstmCache<S>* cache) const {
    if (batch.rows.cols() != in_dim()) throw DimensionError(w_ih_.name + ": input width mismatch");
    const auto h = hidden_;
    const auto B = batch.size();
    Mat<S> gates_in = batch.rows * w_ih_.value.transpose();
    gates_in.rowwise() += b_ih_.value.col(0).transpose();
    Mat<S> state = Mat<S>::Zero(B, h), cell = Mat<S>::Zero(B, h);
    if (cache) {
      *cache = LstmCache<S>{};
      cache->gates_in = gates_in;
    }
    Vec<S> mask;
    for (Eigen::Index t = 0; t < batch.max_length(); ++t) {
      Mat<S> gates = detail::gather_step(gates_in, batch, t, reverse, mask);
      gates.noalias() += state * w_hh_.value.transpose();
      gates.rowwise() += b_hh_.value.col(0).transpose();
      const Mat<S> i = detail::sigmoid<S>(gates.leftCols(h));
      const Mat<S> f = detail::sigmoid<S>(gates.middleCols(h, h));
      const Mat<S> g = gates.middleCols(2 * h, h).array().tanh().matrix();
      const Mat<S> o = detail::sigmoid<S>(gates.rightCols(h));
      Mat<S> next_cell = f.cwiseProduct(cell) + i.cwiseProduct(g);
      const Mat<S> tanh_c = next_cell.array().tanh().matrix();
      Mat<S> next = o.cwiseProduct(tanh_c);
      for (Eigen::Index r = 0; r < B; ++r) {
        if (mask[r] == S(0)) {
          next.row(r) = state.row(r);
          next_cell.row(r) = cell.row(r);
        }
      }
      if (cache) {
        cache->h_prev.push_back(state);
        cache->c_prev.push_back(cell);
        cache->i.push_back(i);
        cache->f.push_back(f);
        cache->g.push_back(g);
        cache->o.push_back(o);
        cache->tanh_c.push_back(tanh_c);
        cache->mask.push_back(mask);
      }
      state = std::move(next);
      cell = std::move(next_cell);
    }
    return state;
  }

  void backward(const SequenceBatch<S>& batch, bool reverse, const LstmCache<S>& c, const Mat<S>& dstate_final) {
    const auto h = hidden_;
    const auto B = batch.size();
    const Mat<S> ones = Mat<S>::Ones(B, h);
    Mat<S> dh = dstate_final;
    Mat<S> dc = Mat<S>::Zero(B, h);
    Mat<S> dgates_in = Mat<S>::Zero(c.gates_in.rows(), c.gates_in.cols());
    Mat<S> dgates(B, 4 * h);
    for (Eigen::Index t = static_cast<Eigen::Index>(c.i.size()) - 1; t >= 0; --t) {
      const auto& m = c.mask[t];
      const Mat<S> dh_act = m.asDiagonal() * dh;
      const Mat<S> dc_act = m.asDiagonal() * dc;
      const auto& i = c.i[t];
      const auto& f = c.f[t];
      const auto& g = c.g[t];
      const auto& o = c.o[t];
      const auto& tc = c.tanh_c[t];
      const Mat<S> dct = dc_act + dh_act.cwiseProduct(o).cwiseProduct(ones - tc.cwiseProduct(tc));
      dgates.leftCols(h) = dct.cwiseProduct(g).cwiseProduct(i.cwiseProduct(ones - i));
      dgates.middleCols(h, h) = dct.cwiseProduct(c.c_prev[t]).cwiseProduct(f.cwiseProduct(ones - f));
      dgates.middleCols(2 * h, h) = dct.cwiseProduct(i).cwiseProduct(ones - g.cwiseProduct(g));
      dgates.rightCols(h) = dh_act.cwiseProduct(tc).cwiseProduct(o.cwiseProduct(ones - o));
      w_hh_.grad.noalias() += dgates.transpose() * c.h_prev[t];
      b_hh_.grad.col(0) += dgates.colwise().sum().transpose();
      dh = dgates * w_hh_.value + (dh - dh_act);
      dc = dct.cwiseProduct(f) + (dc - dc_act);
      detail::scatter_step(dgates_in, dgates, batch, t, reverse);
    }
    w_ih_.grad.noalias() += dgates_in.transpose() * batch.rows;
    b_ih_.grad.col(0) += dgates_in.colwise().sum().transpose();
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&w_ih_);
    out.push_back(&w_hh_);
    out.push_back(&b_ih_);
    out.push_back(&b_hh_);
  }

 private:
  int hidden_ = 0;
  Param<S> w_ih_, w_hh_, b_ih_, b_hh_;
};

// ---------------------------------------------------------------------------
// Final state of a unidirectional layer, or [forward final ; backward final]
// for the bidirectional form.

template <typename S, template <typename> class Layer, template <typename> class Cache>
class RecurrentEncoder {
 public:
  struct EncoderCache {
    Cache<S> forward, backward;
  };

  RecurrentEncoder() = default;
  RecurrentEncoder(const std::string& name, int in, int out, bool bidirectional, Rng& rng)
      : bidirectional_(bidirectional) {
    if (bidirectional && out % 2 != 0) throw InvalidArgument(name + ": bidirectional output must be even");
    const int hidden = bidirectional ? out / 2 : out;
    fwd_ = Layer<S>(name + (bidirectional ? ".fwd" : ""), in, hidden, rng);
    if (bidirectional) bwd_ = Layer<S>(name + ".bwd", in, hidden, rng);
  }

  bool bidirectional() const { return bidirectional_; }

  Mat<S> forward(const SequenceBatch<S>& batch, EncoderCache* cache) const {
    Mat<S> f = fwd_.forward(batch, false, cache ? &cache->forward : nullptr);
    if (!bidirectional_) return f;
    Mat<S> b = bwd_.forward(batch, true, cache ? &cache->backward : nullptr);
    Mat<S> out(f.rows(), f.cols() + b.cols());
    out << f, b;
    return out;
  }

  void backward(const SequenceBatch<S>& batch, const EncoderCache& cache, const Mat<S>& dout) {
    const auto h = fwd_.hidden();
    fwd_.backward(batch, false, cache.forward, dout.leftCols(h));
    if (bidirectional_) bwd_.backward(batch, true, cache.backward, dout.rightCols(h));
  }

  void collect(ParamRefs<S>& out) {
    fwd_.collect(out);
    if (bidirectional_) bwd_.collect(out);
  }

  Layer<S>& forward_layer() { return fwd_; }
  Layer<S>& backward_layer() { return bwd_; }

 private:
  bool bidirectional_ = false;
  Layer<S> fwd_, bwd_;
};

template <typename S>
using GruEncoder = RecurrentEncoder<S, GruLayer, GruCache>;
template <typename S>
using LstmEncoder = RecurrentEncoder<S, LstmLayer, LstmCache>;

}  // namespace t2m
