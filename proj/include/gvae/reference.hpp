// SPDX-License-Identifier: Apache-2.0
//
// Tape-free forward evaluation of the joint loss, templated on the scalar
// type. It is a second, independent implementation of the model's forward
// pass and serves as the finite-difference oracle for model gradients.
//
// At initialization the KL term can reach 1e2..1e4 while some parameter
// gradients sit near 1e-6, so a central difference with eps = 1e-5 taken in
// 64-bit arithmetic is dominated by rounding of the loss itself. With
// __float128 available, model_grad_check takes the differences in quad
// precision and compares them with the 64-bit tape gradients.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#if defined(GVAE_HAVE_QUADMATH)
#include <quadmath.h>
#endif

#include "gvae/autodiff.hpp"
#include "gvae/chem.hpp"
#include "gvae/encoder.hpp"
#include "gvae/vaemodel.hpp"

namespace gvae {

#if defined(GVAE_HAVE_QUADMATH)
using ExtendedReal = __float128;
#else
using ExtendedReal = long double;
#endif

namespace refmath {

inline double exp(double x) { return std::exp(x); }
inline double expm1(double x) { return std::expm1(x); }
inline double log1p(double x) { return std::log1p(x); }
inline double log(double x) { return std::log(x); }
inline long double exp(long double x) { return std::exp(x); }
inline long double expm1(long double x) { return std::expm1(x); }
inline long double log1p(long double x) { return std::log1p(x); }
inline long double log(long double x) { return std::log(x); }
#if defined(GVAE_HAVE_QUADMATH)
inline __float128 exp(__float128 x) { return expq(x); }
inline __float128 expm1(__float128 x) { return expm1q(x); }
inline __float128 log1p(__float128 x) { return log1pq(x); }
inline __float128 log(__float128 x) { return logq(x); }
#endif

} // namespace refmath

template <class T> struct RefMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<T> v;

  RefMatrix() = default;
  RefMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, T(0)) {}
  explicit RefMatrix(const Tensor &t) : rows(t.rows()), cols(t.cols()), v(t.size()) {
    for (std::size_t k = 0; k < t.size(); ++k) v[k] = static_cast<T>(t[k]);
  }
  T &operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  const T &operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

namespace detail {

template <class T> RefMatrix<T> ref_matmul(const RefMatrix<T> &a, const RefMatrix<T> &b) {
  RefMatrix<T> c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t p = 0; p < a.cols; ++p) {
      const T x = a(i, p);
      if (x == T(0)) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += x * b(p, j);
    }
  }
  return c;
}

template <class T> T ref_elu(T x) { return x > T(0) ? x : refmath::expm1(x); }

} // namespace detail

/// Where a parameter first enters the forward pass. Perturbing it leaves
/// every earlier stage unchanged.
enum class RefStage { Layer1, Layer2, MuHead, LogStdHead, Pool, Side };

inline RefStage ref_stage_of(const std::string &name) {
  auto starts = [&](const std::string &prefix) { return name.rfind(prefix + ".", 0) == 0; };
  if (starts(pname::kLayer1)) return RefStage::Layer1;
  if (starts(pname::kLayer2)) return RefStage::Layer2;
  if (starts(pname::kMuHead)) return RefStage::MuHead;
  if (starts(pname::kLogStdHead)) return RefStage::LogStdHead;
  if (name == pname::kPool) return RefStage::Pool;
  return RefStage::Side;
}

template <class T> class ReferenceJointLoss {
public:
  ReferenceJointLoss(const MolGraph &mol, double label, const Tensor &noise,
                     LossWeights w = {})
      : n_(mol.num_atoms()), label_(static_cast<T>(label)), beta_(static_cast<T>(w.beta)),
        lambda_(static_cast<T>(w.lambda)), features_(node_features(mol)), noise_(noise) {
    if (noise.rows() != n_ || noise.cols() != kLatentWidth) {
      throw Error(ErrorCode::ShapeMismatch, "noise must be N x 16, got " +
                                                shape_string(noise.shape()));
    }
    const AdjacencyTensor adj = adjacency_tensor(mol);
    for (std::size_t r = 0; r < kNumBondTypes; ++r) {
      present_[r] = adj.relation_edge_count(r) > 0;
      if (!present_[r]) continue;
      RefMatrix<T> a(n_, n_);
      for (std::size_t i = 0; i < n_; ++i) {
        std::size_t deg = 0;
        for (std::size_t j = 0; j < n_; ++j) deg += adj.at(i, j, r) > 0.0;
        for (std::size_t j = 0; j < n_; ++j) {
          if (adj.at(i, j, r) > 0.0) a(i, j) = T(1) / static_cast<T>(deg);
        }
      }
      adjacency_[r] = std::move(a);
    }
    binary_ = RefMatrix<T>(binary_adjacency(adj));
    clamp_ = refmath::log((T(1) - T(kProbClamp)) / T(kProbClamp));
  }

  /// Converts `params` and evaluates every stage once.
  void bind(const ParamStore &params) {
    check_model_params(params);
    params_.clear();
    for (const auto &[name, t] : params) params_.emplace(name, RefMatrix<T>(t));
    base_ = run(RefStage::Layer1, nullptr);
  }

  T value() const { return base_.total; }

  /// (f(theta + eps e_k) - f(theta - eps e_k)) / 2 eps for entry k of `name`,
  /// with the perturbed parameter and the loss held in T.
  T central_difference(const std::string &name, std::size_t k, double eps) {
    T &slot = params_.at(name).v.at(k);
    const T saved = slot;
    const RefStage stage = ref_stage_of(name);
    slot = saved + static_cast<T>(eps);
    const T up = run(stage, &base_).total;
    slot = saved - static_cast<T>(eps);
    const T down = run(stage, &base_).total;
    slot = saved;
    return (up - down) / (T(2) * static_cast<T>(eps));
  }

private:
  struct Pass {
    RefMatrix<T> h1, h2, mu, logstd, pooled;
    T recon{}, kl{}, side{}, total{};
  };

  RefMatrix<T> layer(const RefMatrix<T> &h, const std::string &prefix, bool activate) const {
    RefMatrix<T> out = detail::ref_matmul(h, params_.at(pname::self(prefix)));
    for (std::size_t r = 0; r < kNumBondTypes; ++r) {
      if (!present_[r]) continue;
      RefMatrix<T> msg =
          detail::ref_matmul(adjacency_[r], detail::ref_matmul(h, params_.at(pname::relation(prefix, r))));
      for (std::size_t k = 0; k < out.v.size(); ++k) out.v[k] += msg.v[k];
    }
    if (activate) {
      for (T &x : out.v) x = detail::ref_elu(x);
    }
    return out;
  }

  // Recomputes from `from`; earlier stages are copied from `cache`.
  Pass run(RefStage from, const Pass *cache) const {
    Pass p;
    const bool all = cache == nullptr || from == RefStage::Layer1;
    const bool from_l2 = all || from == RefStage::Layer2;
    p.h1 = all ? layer(features_, pname::kLayer1, true) : cache->h1;
    p.h2 = from_l2 ? layer(p.h1, pname::kLayer2, true) : cache->h2;
    const bool new_mu = from_l2 || from == RefStage::MuHead;
    const bool new_ls = from_l2 || from == RefStage::LogStdHead;
    p.mu = new_mu ? layer(p.h2, pname::kMuHead, false) : cache->mu;
    p.logstd = new_ls ? layer(p.h2, pname::kLogStdHead, false) : cache->logstd;

    if (new_mu || new_ls) {
      latent_terms(p);
    } else {
      p.recon = cache->recon;
      p.kl = cache->kl;
    }
    if (new_mu || from == RefStage::Pool) {
      p.pooled = pool(p.mu);
    } else {
      p.pooled = cache->pooled;
    }
    const T y = side(p.pooled) - label_;
    p.side = y * y;
    p.total = p.recon + beta_ * p.kl + lambda_ * p.side;
    return p;
  }

  void latent_terms(Pass &p) const {
    RefMatrix<T> z(n_, kLatentWidth);
    T kl = 0;
    for (std::size_t k = 0; k < z.v.size(); ++k) {
      const T mu = p.mu.v[k], ls = p.logstd.v[k];
      z.v[k] = mu + refmath::exp(ls) * static_cast<T>(noise_[k]);
      kl += mu * mu + refmath::exp(T(2) * ls) - T(1) - T(2) * ls;
    }
    p.kl = kl / T(2);

    T bce = 0;
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = i + 1; j < n_; ++j) {
        T x = 0;
        for (std::size_t d = 0; d < kLatentWidth; ++d) x += z(i, d) * z(j, d);
        if (x > clamp_) x = clamp_;
        if (x < -clamp_) x = -clamp_;
        const T ax = x < T(0) ? -x : x;
        const T softplus = (x > T(0) ? x : T(0)) + refmath::log1p(refmath::exp(-ax));
        bce += softplus - binary_(i, j) * x;
      }
    }
    const std::size_t pairs = n_ * (n_ - 1) / 2;
    p.recon = pairs > 0 ? bce / static_cast<T>(pairs) : T(0);
  }

  RefMatrix<T> pool(const RefMatrix<T> &mu) const {
    RefMatrix<T> logits = detail::ref_matmul(mu, params_.at(pname::kPool));
    RefMatrix<T> g(1, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
      T mx = logits(i, 0);
      for (std::size_t j = 1; j < logits.cols; ++j) mx = logits(i, j) > mx ? logits(i, j) : mx;
      T denom = 0;
      std::vector<T> e(logits.cols);
      for (std::size_t j = 0; j < logits.cols; ++j) {
        e[j] = refmath::exp(logits(i, j) - mx);
        denom += e[j];
      }
      for (std::size_t j = 0; j < logits.cols; ++j) g(0, j) += e[j] / denom;
    }
    return g;
  }

  T side(const RefMatrix<T> &g) const {
    RefMatrix<T> hid = detail::ref_matmul(g, params_.at(pname::kSideM1));
    const RefMatrix<T> &b1 = params_.at(pname::kSideB1);
    for (std::size_t k = 0; k < hid.v.size(); ++k) hid.v[k] = detail::ref_elu(hid.v[k] + b1.v[k]);
    RefMatrix<T> out = detail::ref_matmul(hid, params_.at(pname::kSideM2));
    return out.v[0] + params_.at(pname::kSideB2).v[0];
  }

  std::size_t n_;
  T label_, beta_, lambda_, clamp_{};
  RefMatrix<T> features_;
  Tensor noise_;
  std::array<bool, kNumBondTypes> present_{};
  std::array<RefMatrix<T>, kNumBondTypes> adjacency_;
  RefMatrix<T> binary_;
  std::map<std::string, RefMatrix<T>> params_;
  Pass base_;
};

/// Gradient check of joint_loss: tape gradients against central differences
/// of the reference evaluator in ExtendedReal, on the same seeded coordinate
/// sample and relative-error rule as grad_check.
inline GradCheckResult model_grad_check(const MolGraph &mol, double label,
                                        const ModelParams &params, const Tensor &noise,
                                        double eps, std::size_t samples = 256,
                                        std::uint64_t seed = 0, LossWeights w = {}) {
  detail::check_grad_eps(eps);
  ParamStore analytic;
  {
    Tape tape;
    Var loss = joint_loss(tape, mol, label, params, noise, w).total;
    analytic = backward(tape, loss, params);
  }
  ReferenceJointLoss<ExtendedReal> ref(mol, label, noise, w);
  ref.bind(params);

  GradCheckResult result;
  const auto coords = detail::sample_coordinates(params, samples, seed);
  result.coordinates = coords.size();
  for (const auto &[name, k] : coords) {
    const double numeric = static_cast<double>(ref.central_difference(name, k, eps));
    if (!std::isfinite(numeric)) {
      throw Error(ErrorCode::NonFiniteValue, "loss not finite while perturbing " + name);
    }
    detail::record_error(result, detail::relative_error(numeric, analytic.at(name)[k]), name, k);
  }
  return result;
}

} // namespace gvae
