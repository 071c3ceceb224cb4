#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "t2m/t2m.hpp"

namespace t2m::test {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("t2m_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string data_path(const std::string& file) { return std::string(T2M_DATA_DIR) + "/" + file; }

inline FurnitureGroup group(int n, std::string cat, std::string style, std::string theme, std::string material,
                            std::array<double, 3> pos = {0, 0, 0}) {
  return {n, std::move(cat), std::move(style), std::move(theme), std::move(material), pos};
}

template <typename S>
inline Mat<S> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Mat<S> m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = static_cast<S>(rng.normal() * scale);
  return m;
}

// Corpus of `scenes` synthetic scenes x `paintings` paintings, splits assigned.
inline std::vector<MetaverseRecord> small_corpus(std::size_t scenes, std::size_t paintings, std::uint64_t seed,
                                                  SyntheticSceneOptions opts = {2, 4, {6.0, 2.6, 6.0}}) {
  return build_corpus(synthetic_scene_catalog(scenes, seed, opts), synthetic_painting_catalog(paintings), seed);
}

// ---------------------------------------------------------------------------
// Five-point finite differences against analytic gradients, in 64-bit. The
// wider stencil allows a larger step, keeping roundoff (~eps |L| / h) well
// below the smallest gradients compared.

struct GradMismatch {
  std::string param;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckOptions {
  double step = 1e-4;
  double rel_tol = 1e-4;
  // Differences below this are treated as agreement regardless of scale.
  double abs_floor = 1e-9;
  // 0 checks every entry; otherwise this many random entries per parameter.
  std::size_t max_entries = 0;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t groups = 0;
  double worst_rel = 0.0;
  std::vector<GradMismatch> mismatches;
  bool ok() const { return mismatches.empty() && checked > 0; }
};

// `loss` recomputes the scalar from the current parameter values; `gradients`
// zeroes and fills the parameters' grad fields.
inline GradCheckReport check_gradients(const ParamRefs<double>& params, const std::function<double()>& loss,
                                       const std::function<void()>& gradients, const GradCheckOptions& opts = {}) {
  gradients();
  GradCheckReport report;
  Rng rng(opts.seed);
  for (auto* p : params) {
    if (!p->trainable) continue;
    ++report.groups;
    const auto n = p->value.size();
    std::vector<Eigen::Index> entries;
    if (opts.max_entries == 0 || static_cast<std::size_t>(n) <= opts.max_entries) {
      for (Eigen::Index i = 0; i < n; ++i) entries.push_back(i);
    } else {
      for (std::size_t k = 0; k < opts.max_entries; ++k)
        entries.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    }
    for (auto i : entries) {
      double& v = p->value.data()[i];
      const double saved = v;
      const double h = opts.step;
      auto at = [&](double offset) {
        v = saved + offset;
        return loss();
      };
      const double numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      v = saved;
      const double analytic = p->grad.data()[i];
      const double diff = std::abs(analytic - numeric);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      ++report.checked;
      const double rel = scale > opts.abs_floor ? diff / scale : 0.0;
      report.worst_rel = std::max(report.worst_rel, rel);
      if (diff > opts.abs_floor && rel > opts.rel_tol) report.mismatches.push_back({p->name, i, analytic, numeric});
    }
  }
  return report;
}

inline std::string describe(const GradCheckReport& r) {
  std::string s = std::to_string(r.checked) + " entries in " + std::to_string(r.groups) +
                  " groups, worst rel " + std::to_string(r.worst_rel);
  for (std::size_t i = 0; i < r.mismatches.size() && i < 5; ++i) {
    const auto& m = r.mismatches[i];
    s += "; " + m.param + "[" + std::to_string(m.index) + "] analytic " + std::to_string(m.analytic) + " numeric " +
         std::to_string(m.numeric);
  }
  return s;
}

// Weighted sum of outputs so that gradients are not annihilated by
// batch-statistics normalization (a plain sum has zero gradient there).
inline double weighted_sum(const Mat<double>& out, const Mat<double>& weights) { return out.cwiseProduct(weights).sum(); }

// Sequence batch with lengths `lens` and width `dim`.
inline SequenceBatch<double> random_sequences(const std::vector<int>& lens, int dim, Rng& rng) {
  std::vector<Mat<double>> seqs;
  for (int len : lens) seqs.push_back(random_matrix<double>(len, dim, rng));
  std::vector<const Mat<double>*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  return SequenceBatch<double>::from(ptrs);
}

// Gradient check of a description encoder variant on a variable-length batch.
inline GradCheckReport check_sequence_encoder(SequenceVariant variant, int in, int out,
                                              const std::vector<int>& lens, std::uint64_t seed,
                                              const GradCheckOptions& opts = {}) {
  Rng rng(seed);
  EncoderConfig cfg;
  cfg.sequence = variant;
  cfg.sentence_dim = in;
  cfg.joint_dim = out;
  DescriptionEncoder<double> enc(cfg, rng);
  // Non-zero biases exercise every bias path.
  ParamRefs<double> params;
  enc.collect(params);
  for (auto* p : params) p->value += random_matrix<double>(p->value.rows(), p->value.cols(), rng, 0.1);
  const auto batch = random_sequences(lens, in, rng);
  const Mat<double> w = random_matrix<double>(static_cast<Eigen::Index>(lens.size()), out, rng);
  auto loss = [&] { return weighted_sum(enc.forward(batch, nullptr), w); };
  auto grads = [&] {
    for (auto* p : params) p->zero_grad();
    DescriptionCache<double> cache;
    enc.forward(batch, &cache);
    enc.backward(batch, cache, w);
  };
  return check_gradients(params, loss, grads, opts);
}

// Gradient check of an FCNet; batch_stats selects batch-statistics
// normalization (full batch-norm backward) versus frozen running statistics.
inline GradCheckReport check_fcnet(const FcNetDims& dims, int batch, bool batch_stats, std::uint64_t seed,
                                   const GradCheckOptions& opts = {}) {
  Rng rng(seed);
  FcNet<double> net("fc", dims, rng);
  ParamRefs<double> params;
  net.collect(params);
  for (auto* p : params) {
    if (p->name.find("running_var") != std::string::npos)
      p->value = (random_matrix<double>(p->value.rows(), 1, rng).array().abs() + 0.5).matrix();
    else if (p->name.find("gamma") != std::string::npos)
      p->value = (random_matrix<double>(p->value.rows(), 1, rng, 0.2).array() + 1.0).matrix();
    else if (p->name.find("bias") != std::string::npos || p->name.find("beta") != std::string::npos ||
             p->name.find("running_mean") != std::string::npos)
      p->value = random_matrix<double>(p->value.rows(), p->value.cols(), rng, 0.1);
  }
  const Mat<double> x = random_matrix<double>(batch, dims.in, rng);
  const Mat<double> w = random_matrix<double>(batch, dims.out, rng);
  const ForwardMode mode{false, batch_stats, false};
  auto loss = [&] { return weighted_sum(net.forward(x, mode, nullptr, nullptr), w); };
  auto grads = [&] {
    for (auto* p : params) p->zero_grad();
    FcNetCache<double> cache;
    net.forward(x, mode, nullptr, &cache);
    net.backward(cache, w, false);
  };
  return check_gradients(params, loss, grads, opts);
}

}  // namespace t2m::test
