// SPDX-License-Identifier: Apache-2.0
//
// Latent sampling, inner-product decoder, side predictor and the joint loss
//   total = recon_bce + beta * KL + lambda * (y_hat - y)^2
#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "gvae/autodiff.hpp"
#include "gvae/chem.hpp"
#include "gvae/encoder.hpp"

namespace gvae {

inline constexpr std::size_t kSideHidden = 32;

namespace pname {
inline const std::string kSideM1 = "side.m1";
inline const std::string kSideB1 = "side.b1";
inline const std::string kSideM2 = "side.m2";
inline const std::string kSideB2 = "side.b2";
} // namespace pname

/// Every learnable tensor of the model lives in one ParamStore under the
/// names in `pname`; the decoder has no parameters.
using ModelParams = ParamStore;

inline void add_side_params(ParamStore &store, std::mt19937_64 &rng) {
  store.add(pname::kSideM1, glorot_uniform(kPoolWidth, kSideHidden, rng));
  store.add(pname::kSideB1, Tensor::matrix(1, kSideHidden));
  store.add(pname::kSideM2, glorot_uniform(kSideHidden, 1, rng));
  store.add(pname::kSideB2, Tensor::matrix(1, 1));
}

inline ModelParams init_model_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams p;
  add_encoder_params(p, rng);
  add_pool_params(p, rng);
  add_side_params(p, rng);
  return p;
}

/// Same layout as init_model_params with every entry zero.
inline ModelParams zero_model_params() { return init_model_params(0).zeros_like(); }

/// Throws ShapeMismatch unless `p` has exactly the model's names and shapes.
inline void check_model_params(const ModelParams &p) {
  const ModelParams ref = zero_model_params();
  if (p.names() != ref.names()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter set does not match the model layout");
  }
  for (const auto &[name, t] : ref) {
    if (p.at(name).shape() != t.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "parameter '" + name + "' has shape " +
                                                shape_string(p.at(name).shape()) + ", expected " +
                                                shape_string(t.shape()));
    }
  }
}

/// Z = Mu + exp(LogStd) * noise.
inline Var sample_latent(const Var &mu, const Var &logstd, const Tensor &noise) {
  if (mu.shape() != logstd.shape() || mu.shape() != noise.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "sample_latent shapes " + shape_string(mu.shape()) +
                                              ", " + shape_string(logstd.shape()) + ", " +
                                              shape_string(noise.shape()));
  }
  return add(mu, hadamard(exp(logstd), mu.tape().constant(noise)));
}

/// Inner-product logits z_i . z_j.
inline Var decode_logits(const Var &z) { return matmul(z, transpose(z)); }

/// P_ij = logistic(z_i . z_j), N x N and symmetric.
inline Var decode_adjacency(const Var &z) { return logistic(decode_logits(z)); }

/// KL( N(Mu, exp(LogStd)^2) || N(0, I) ) summed over nodes and dimensions.
inline Var kl_term(const Var &mu, const Var &logstd) {
  if (mu.shape() != logstd.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "kl_term shapes differ");
  }
  Var two_ls = scale(logstd, 2.0);
  Var inner = sub(add(square(mu), exp(two_ls)), two_ls);
  return scale(sum(add_scalar(inner, -1.0)), 0.5);
}

/// Type-collapsed 0/1 adjacency.
inline Tensor binary_adjacency(const AdjacencyTensor &a) {
  const std::size_t n = a.num_nodes();
  Tensor t = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t(i, j) = a.bonded(i, j) ? 1.0 : 0.0;
  return t;
}

/// Mean BCE over pairs i < j between decoder probabilities and the
/// type-collapsed adjacency.
inline Var recon_bce(const Var &probabilities, const AdjacencyTensor &a) {
  return pairwise_bce(probabilities, binary_adjacency(a));
}

/// recon_bce evaluated from decoder logits; the training loss uses this form
/// because 1 - logistic(x) cancels badly for large x.
inline Var recon_bce_logits(const Var &logits, const AdjacencyTensor &a) {
  return pairwise_bce_logits(logits, binary_adjacency(a));
}

struct SideVars {
  Var m1, b1, m2, b2;
};

inline SideVars bind_side(Tape &tape, const ParamStore &p) {
  return {tape.param(p, pname::kSideM1), tape.param(p, pname::kSideB1),
          tape.param(p, pname::kSideM2), tape.param(p, pname::kSideB2)};
}

/// y_hat = elu(g M1 + b1) M2 + b2 for a 1 x 64 pooled row g.
inline Var side_predict(const Var &g, const SideVars &s) {
  return add(matmul(elu(add(matmul(g, s.m1), s.b1)), s.m2), s.b2);
}

struct LossWeights {
  double beta = 1.0;
  double lambda = 1.0;
};

struct LossBreakdown {
  double recon = 0.0;
  double kl = 0.0;
  double side_mse = 0.0;
  double total = 0.0;
};

struct JointLossVars {
  Var recon, kl, side_mse, total;
  Var mu, logstd, z, logits, pooled, prediction;

  LossBreakdown values() const {
    return {recon.value().item(), kl.value().item(), side_mse.value().item(),
            total.value().item()};
  }
};

/// Records the full forward pass and joint loss on `tape`.
inline JointLossVars joint_loss(Tape &tape, const MolGraph &mol, double label,
                                const ModelParams &params, const Tensor &noise,
                                LossWeights w = {}) {
  const AdjacencyTensor adj = adjacency_tensor(mol);
  GraphInputs graph = graph_inputs(tape, node_features(mol), adj);
  auto enc = encode(graph, bind_encoder(tape, params));

  JointLossVars out;
  out.mu = enc.mu;
  out.logstd = enc.logstd;
  out.z = sample_latent(enc.mu, enc.logstd, noise);
  out.logits = decode_logits(out.z);
  out.recon = recon_bce_logits(out.logits, adj);
  out.kl = kl_term(enc.mu, enc.logstd);
  out.pooled = pool(enc.mu, tape.param(params, pname::kPool));
  out.prediction = side_predict(out.pooled, bind_side(tape, params));
  out.side_mse = square(add_scalar(out.prediction, -label));

  Var total = add(out.recon, scale(out.kl, w.beta));
  out.total = add(total, scale(out.side_mse, w.lambda));
  return out;
}

inline LossBreakdown joint_loss(const MolGraph &mol, double label, const ModelParams &params,
                                const Tensor &noise, LossWeights w = {}) {
  Tape tape;
  return joint_loss(tape, mol, label, params, noise, w).values();
}

/// Edge probabilities of the deterministic pass (Z = Mu).
inline Tensor edge_probabilities(const MolGraph &mol, const ModelParams &params) {
  Tape tape;
  auto enc = encode(graph_inputs(tape, mol), bind_encoder(tape, params));
  return decode_adjacency(enc.mu).value();
}

/// Side-predictor output for the deterministic pooled embedding.
inline double predict_property(const MolGraph &mol, const ModelParams &params) {
  Tape tape;
  auto enc = encode(graph_inputs(tape, mol), bind_encoder(tape, params));
  Var g = pool(enc.mu, tape.param(params, pname::kPool));
  return side_predict(g, bind_side(tape, params)).value().item();
}

struct Reconstruction {
  MolGraph mol;
  ValidityReport validity;
  Tensor probabilities;
};

/// Rebuilds bonds from the decoder: a pair i < j is bonded when p_ij exceeds
/// `threshold`. Bonds present in the input keep their type, new ones are
/// Single. Atoms keep element and charge; hydrogens are reset to the lowest
/// count that makes each atom valid (atoms with no such count are reported).
inline Reconstruction reconstruct(const MolGraph &mol, const ModelParams &params,
                                  double threshold = 0.5) {
  Tensor p = edge_probabilities(mol, params);
  const std::size_t n = mol.num_atoms();
  std::vector<Bond> bonds;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (p(i, j) > threshold) {
        bonds.push_back({i, j, mol.bond_between(i, j).value_or(BondType::Single)});
      }
    }
  }
  std::vector<double> valence(n, 0.0);
  for (const Bond &b : bonds) {
    valence[b.i] += valence_weight(b.type);
    valence[b.j] += valence_weight(b.type);
  }
  std::vector<Atom> atoms = mol.atoms();
  for (std::size_t i = 0; i < n; ++i) {
    const int v = static_cast<int>(std::ceil(valence[i]));
    atoms[i].implicit_h =
        lowest_valid_hydrogens(atoms[i].element, atoms[i].formal_charge, v).value_or(0);
  }
  Reconstruction out{build(std::move(atoms), std::move(bonds)), {}, std::move(p)};
  out.validity = check_valence(out.mol);
  return out;
}

} // namespace gvae
