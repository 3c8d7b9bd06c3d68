// SPDX-License-Identifier: Apache-2.0
//
// Adam, the training loop, and evaluation: validity of reconstructions, edge
// AUC and linear property probes on the pooled embedding.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gvae/dataset.hpp"
#include "gvae/vaemodel.hpp"

namespace gvae {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta = 1.0;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_atoms = 20;
  double threshold = 0.5;
  /// Dataset column used as the side-predictor label.
  std::string property = "heavy_atoms";

  friend bool operator==(const TrainConfig &, const TrainConfig &) = default;
};

inline void validate(const TrainConfig &c) {
  auto fail = [](const std::string &m) { throw Error(ErrorCode::InvalidArgument, m); };
  if (c.batch_size == 0) fail("batch_size must be positive");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) fail("learning_rate must be positive");
  if (!(c.beta >= 0.0) || !std::isfinite(c.beta)) fail("beta must be non-negative");
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) fail("lambda must be non-negative");
  if (c.max_atoms == 0) fail("max_atoms must be positive");
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) fail("threshold must lie in (0, 1)");
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  ParamStore m;
  ParamStore v;
  std::uint64_t step = 0;

  static AdamState for_params(const ParamStore &p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

inline void adam_step(ParamStore &params, const ParamStore &grads, AdamState &state, double lr) {
  if (grads.names() != params.names() || state.m.names() != params.names() ||
      state.v.names() != params.names()) {
    throw Error(ErrorCode::ShapeMismatch, "adam: parameter, gradient and state names differ");
  }
  for (const auto &[name, p] : params) {
    const Shape &s = p.shape();
    if (grads.at(name).shape() != s || state.m.at(name).shape() != s ||
        state.v.at(name).shape() != s) {
      throw Error(ErrorCode::ShapeMismatch, "adam: shape mismatch for '" + name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (auto &[name, p] : params) {
    auto g = grads.at(name).values();
    auto m = state.m.at(name).data();
    auto v = state.v.at(name).data();
    auto w = p.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g[k];
      v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  ModelParams params;
  std::vector<LossBreakdown> history; // per-epoch means over molecules
};

/// Optional per-epoch callback (epoch index from 1, epoch means).
using EpochHook = std::function<void(std::size_t, const LossBreakdown &)>;

inline Tensor standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64 &rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor t = Tensor::matrix(rows, cols);
  for (double &x : t.data()) x = n01(rng);
  return t;
}

inline void check_trainable(const Dataset &data, const TrainConfig &cfg) {
  validate(cfg);
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  if (cfg.lambda > 0.0 && !data.has_property(cfg.property)) {
    throw Error(ErrorCode::InvalidArgument, "dataset has no property column '" + cfg.property + "'");
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.records[i].mol.num_atoms() > cfg.max_atoms) {
      throw Error(ErrorCode::MoleculeTooLarge,
                  "record " + std::to_string(i) + " (" + data.records[i].smiles + ") has " +
                      std::to_string(data.records[i].mol.num_atoms()) + " atoms, max " +
                      std::to_string(cfg.max_atoms));
    }
  }
}

/// Minibatch Adam on the joint loss. Parameters are initialized from
/// cfg.seed; the same generator then drives the per-epoch shuffle and the
/// per-molecule latent noise, so (data, cfg) determine the result exactly.
inline TrainResult train(const Dataset &data, const TrainConfig &cfg, const EpochHook &hook = {}) {
  check_trainable(data, cfg);
  TrainResult out{init_model_params(cfg.seed), {}};
  std::mt19937_64 rng(cfg.seed ^ 0x5eedf00dULL);
  AdamState adam = AdamState::for_params(out.params);
  const LossWeights weights{cfg.beta, cfg.lambda};

  std::vector<double> labels(data.size(), 0.0);
  if (data.has_property(cfg.property)) labels = data.column(cfg.property);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      ParamStore grad = out.params.zeros_like();
      for (std::size_t b = start; b < stop; ++b) {
        const Record &rec = data.records[order[b]];
        const Tensor noise = standard_normal(rec.mol.num_atoms(), kLatentWidth, rng);
        try {
          Tape tape;
          JointLossVars loss = joint_loss(tape, rec.mol, labels[order[b]], out.params, noise, weights);
          const LossBreakdown v = loss.values();
          if (!std::isfinite(v.total)) {
            throw Error(ErrorCode::NonFiniteValue, "loss is not finite");
          }
          ParamStore g = backward(tape, loss.total, out.params);
          for (auto &[name, acc] : grad) {
            auto src = g.at(name).values();
            auto dst = acc.data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
          }
          sum.recon += v.recon;
          sum.kl += v.kl;
          sum.side_mse += v.side_mse;
          sum.total += v.total;
        } catch (const Error &e) {
          if (e.code() != ErrorCode::NonFiniteValue) throw;
          throw Error(ErrorCode::NonFiniteValue, "epoch " + std::to_string(epoch) + ", molecule " +
                                                     std::to_string(order[b]) + " (" + rec.smiles +
                                                     "): " + e.what());
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto &[_, g] : grad)
        for (double &x : g.data()) x *= inv;
      adam_step(out.params, grad, adam, cfg.learning_rate);
    }
    const double n = static_cast<double>(data.size());
    LossBreakdown mean{sum.recon / n, sum.kl / n, sum.side_mse / n, sum.total / n};
    out.history.push_back(mean);
    if (hook) hook(epoch, mean);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline double evaluate_validity(const ModelParams &params, const Dataset &data,
                                double threshold = 0.5) {
  if (data.empty()) return 0.0;
  std::size_t valid = 0;
  for (const Record &r : data.records) valid += reconstruct(r.mol, params, threshold).validity.valid;
  return static_cast<double>(valid) / static_cast<double>(data.size());
}

/// ROC area with tied scores given their midrank. 0.5 when only one class is
/// present.
inline double roc_auc(const std::vector<double> &scores, const std::vector<bool> &positive) {
  if (scores.size() != positive.size()) {
    throw Error(ErrorCode::LengthMismatch, "scores and labels differ in length");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t lo = 0; lo < idx.size();) {
    std::size_t hi = lo;
    while (hi < idx.size() && scores[idx[hi]] == scores[idx[lo]]) ++hi;
    const double midrank = 0.5 * static_cast<double>(lo + 1 + hi);
    for (std::size_t k = lo; k < hi; ++k) {
      if (positive[idx[k]]) {
        pos_rank_sum += midrank;
        ++npos;
      }
    }
    lo = hi;
  }
  const std::size_t nneg = scores.size() - npos;
  if (npos == 0 || nneg == 0) return 0.5;
  const double p = static_cast<double>(npos), q = static_cast<double>(nneg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

/// AUC of p_ij against bonded / not bonded over every pair i < j of every
/// molecule (deterministic pass, Z = Mu).
inline double evaluate_edge_auc(const ModelParams &params, const Dataset &data) {
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const Record &r : data.records) {
    const Tensor p = edge_probabilities(r.mol, params);
    for (std::size_t i = 0; i < r.mol.num_atoms(); ++i) {
      for (std::size_t j = i + 1; j < r.mol.num_atoms(); ++j) {
        scores.push_back(p(i, j));
        labels.push_back(r.mol.bond_between(i, j).has_value());
      }
    }
  }
  return roc_auc(scores, labels);
}

inline constexpr double kRidge = 1e-6;

struct ProbeResult {
  std::vector<double> weights; // 64 slopes followed by the intercept
  double r2 = 0.0;
  double mse = 0.0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

namespace detail {

/// Coefficient of determination; 1 when the target has no variance.
inline double r_squared(const std::vector<double> &y, const std::vector<double> &pred) {
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    ss_res += (y[k] - pred[k]) * (y[k] - pred[k]);
    ss_tot += (y[k] - mean) * (y[k] - mean);
  }
  if (ss_tot == 0.0) return 1.0;
  return 1.0 - ss_res / ss_tot;
}

inline void split_indices(std::size_t n, std::uint64_t seed, std::vector<std::size_t> &train,
                          std::vector<std::size_t> &test, double train_fraction = 0.8) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  if (n >= 2) cut = std::clamp<std::size_t>(cut, 1, n - 1);
  train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
  test.assign(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
}

} // namespace detail

/// Seeded train/held-out split of a dataset (80/20 by default).
inline std::pair<Dataset, Dataset> split_dataset(const Dataset &data, std::uint64_t seed,
                                                 double train_fraction = 0.8) {
  std::vector<std::size_t> tr, te;
  detail::split_indices(data.size(), seed, tr, te, train_fraction);
  return {data.subset(tr), data.subset(te)};
}

/// Ridge regression (closed form, regularizer 1e-6, unpenalized intercept)
/// from the frozen pooled embedding to `targets`. R^2 and MSE are measured on
/// the held-out 20% of a seeded split.
inline ProbeResult fit_probe(const ModelParams &params, const std::vector<MolGraph> &mols,
                             const std::vector<double> &targets, std::uint64_t seed = 0) {
  if (mols.size() != targets.size()) {
    throw Error(ErrorCode::LengthMismatch, "molecules and targets differ in length");
  }
  if (mols.size() < 2) throw Error(ErrorCode::EmptyDataset, "probe needs at least two molecules");
  const Eigen::Index d = static_cast<Eigen::Index>(kPoolWidth);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(mols.size()), d + 1);
  for (std::size_t i = 0; i < mols.size(); ++i) {
    const Tensor g = pooled_embedding(mols[i], params);
    for (Eigen::Index k = 0; k < d; ++k) x(static_cast<Eigen::Index>(i), k) = g.values()[static_cast<std::size_t>(k)];
    x(static_cast<Eigen::Index>(i), d) = 1.0;
  }

  std::vector<std::size_t> tr, te;
  detail::split_indices(mols.size(), seed, tr, te);

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d + 1, d + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d + 1);
  for (std::size_t i : tr) {
    const auto row = x.row(static_cast<Eigen::Index>(i));
    a.noalias() += row.transpose() * row;
    rhs.noalias() += row.transpose() * targets[i];
  }
  a.diagonal().head(d).array() += kRidge;
  // The intercept column is unpenalized; a tiny ridge keeps the system
  // positive definite even for a one-row fold.
  a(d, d) += kRidge;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularSystem, "ridge normal equations are not positive definite");
  }
  const Eigen::VectorXd w = llt.solve(rhs);

  ProbeResult out;
  out.weights.assign(w.data(), w.data() + w.size());
  std::vector<double> y, pred;
  for (std::size_t i : te) {
    y.push_back(targets[i]);
    pred.push_back(x.row(static_cast<Eigen::Index>(i)).dot(w));
  }
  out.r2 = detail::r_squared(y, pred);
  double se = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) se += (y[k] - pred[k]) * (y[k] - pred[k]);
  out.mse = se / static_cast<double>(y.size());
  out.train_count = tr.size();
  out.test_count = te.size();
  return out;
}

inline ProbeResult fit_probe(const ModelParams &params, const Dataset &data,
                             const std::string &target_column, std::uint64_t seed = 0) {
  std::vector<MolGraph> mols;
  for (const auto &r : data.records) mols.push_back(r.mol);
  return fit_probe(params, mols, data.column(target_column), seed);
}

struct EvalReport {
  double validity_fraction = 0.0;
  double edge_auc = 0.5;
  double property_mse = 0.0; // side predictor vs the property column
  double property_r2 = 0.0;
  std::size_t molecules = 0;
  std::string split;
};

inline EvalReport evaluate(const ModelParams &params, const Dataset &data,
                           const std::string &property, double threshold, std::string split) {
  EvalReport r;
  r.split = std::move(split);
  r.molecules = data.size();
  r.validity_fraction = evaluate_validity(params, data, threshold);
  r.edge_auc = evaluate_edge_auc(params, data);
  if (data.has_property(property) && !data.empty()) {
    const auto y = data.column(property);
    std::vector<double> pred;
    for (const auto &rec : data.records) pred.push_back(predict_property(rec.mol, params));
    double se = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) se += (y[k] - pred[k]) * (y[k] - pred[k]);
    r.property_mse = se / static_cast<double>(y.size());
    r.property_r2 = detail::r_squared(y, pred);
  }
  return r;
}

} // namespace gvae
