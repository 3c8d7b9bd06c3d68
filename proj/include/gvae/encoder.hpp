// SPDX-License-Identifier: Apache-2.0
//
// Relational GCN encoder and softmax pooling.
//
// Layer update, row-vector convention (H is N x d):
//   H' = act( H W_self + sum_r  Ahat_r H W_r )
// where Ahat_r is the bond-type-r adjacency with each row divided by the
// node's r-neighbor count. Layers 1 and 2 use ELU and are shared by both
// heads; the mean and log-std heads each have their own linear third layer.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "gvae/autodiff.hpp"
#include "gvae/chem.hpp"

namespace gvae {

inline constexpr std::size_t kHiddenWidth = 32;
inline constexpr std::size_t kLatentWidth = 16;
inline constexpr std::size_t kPoolWidth = 64;

/// Parameter names. Each R-GCN layer owns "<prefix>.rel0".."rel3" and
/// "<prefix>.self".
namespace pname {
inline const std::string kLayer1 = "enc.l1";
inline const std::string kLayer2 = "enc.l2";
inline const std::string kMuHead = "enc.mu";
inline const std::string kLogStdHead = "enc.logstd";
inline const std::string kPool = "pool.w";

inline std::string relation(const std::string &layer, std::size_t r) {
  return layer + ".rel" + std::to_string(r);
}
inline std::string self(const std::string &layer) { return layer + ".self"; }
} // namespace pname

/// Glorot-uniform matrix: U(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64 &rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-s, s);
  Tensor t = Tensor::matrix(fan_in, fan_out);
  for (double &v : t.values()) v = u(rng);
  return t;
}

inline void add_rgcn_layer_params(ParamStore &store, const std::string &layer, std::size_t in,
                                  std::size_t out, std::mt19937_64 &rng) {
  for (std::size_t r = 0; r < kNumBondTypes; ++r) {
    store.add(pname::relation(layer, r), glorot_uniform(in, out, rng));
  }
  store.add(pname::self(layer), glorot_uniform(in, out, rng));
}

/// Encoder weights: two shared 32x32 layers and two 32x16 heads, each with
/// four relation matrices plus a self matrix.
inline void add_encoder_params(ParamStore &store, std::mt19937_64 &rng) {
  add_rgcn_layer_params(store, pname::kLayer1, kFeatureWidth, kHiddenWidth, rng);
  add_rgcn_layer_params(store, pname::kLayer2, kHiddenWidth, kHiddenWidth, rng);
  add_rgcn_layer_params(store, pname::kMuHead, kHiddenWidth, kLatentWidth, rng);
  add_rgcn_layer_params(store, pname::kLogStdHead, kHiddenWidth, kLatentWidth, rng);
}

inline void add_pool_params(ParamStore &store, std::mt19937_64 &rng) {
  store.add(pname::kPool, glorot_uniform(kLatentWidth, kPoolWidth, rng));
}

struct LayerVars {
  std::array<Var, kNumBondTypes> rel;
  Var self;
};

struct EncoderVars {
  LayerVars layer1, layer2, mu_head, logstd_head;
};

inline LayerVars bind_layer(Tape &tape, const ParamStore &store, const std::string &layer) {
  LayerVars lv;
  for (std::size_t r = 0; r < kNumBondTypes; ++r) {
    lv.rel[r] = tape.param(store, pname::relation(layer, r));
  }
  lv.self = tape.param(store, pname::self(layer));
  return lv;
}

inline EncoderVars bind_encoder(Tape &tape, const ParamStore &store) {
  return {bind_layer(tape, store, pname::kLayer1), bind_layer(tape, store, pname::kLayer2),
          bind_layer(tape, store, pname::kMuHead), bind_layer(tape, store, pname::kLogStdHead)};
}

/// Constant graph inputs recorded on a tape: node features and the
/// mean-normalized adjacency slice of every bond type present.
struct GraphInputs {
  Var features;
  std::array<std::optional<Var>, kNumBondTypes> adjacency;
  std::size_t num_nodes = 0;
};

inline GraphInputs graph_inputs(Tape &tape, const Tensor &features, const AdjacencyTensor &adj) {
  if (features.rows() != adj.num_nodes()) {
    throw Error(ErrorCode::ShapeMismatch, "feature rows differ from adjacency size");
  }
  GraphInputs in;
  in.num_nodes = adj.num_nodes();
  in.features = tape.constant(features);
  for (std::size_t r = 0; r < kNumBondTypes; ++r) {
    if (adj.relation_edge_count(r) == 0) continue;
    in.adjacency[r] = tape.constant(adj.mean_normalized(r));
  }
  return in;
}

inline GraphInputs graph_inputs(Tape &tape, const MolGraph &mol) {
  return graph_inputs(tape, node_features(mol), adjacency_tensor(mol));
}

inline Var rgcn_layer(const Var &h, const GraphInputs &graph, const LayerVars &layer,
                      bool activate) {
  if (h.rows() != graph.num_nodes) {
    throw Error(ErrorCode::ShapeMismatch, "rgcn_layer input rows differ from node count");
  }
  Var out = matmul(h, layer.self);
  for (std::size_t r = 0; r < kNumBondTypes; ++r) {
    if (!graph.adjacency[r]) continue;
    out = add(out, matmul(*graph.adjacency[r], matmul(h, layer.rel[r])));
  }
  return activate ? elu(out) : out;
}

struct EncoderOutput {
  Var mu;     // N x 16
  Var logstd; // N x 16, log standard deviation
};

inline EncoderOutput encode(const GraphInputs &graph, const EncoderVars &p) {
  if (graph.num_nodes == 0) throw Error(ErrorCode::ShapeMismatch, "encode needs N >= 1");
  Var h1 = rgcn_layer(graph.features, graph, p.layer1, true);
  Var h2 = rgcn_layer(h1, graph, p.layer2, true);
  return {rgcn_layer(h2, graph, p.mu_head, false), rgcn_layer(h2, graph, p.logstd_head, false)};
}

/// g = sum_i softmax(h_i W_p): a 1 x 64 row whose entries sum to N.
inline Var pool(const Var &h, const Var &w_pool) {
  if (h.cols() != w_pool.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "pool: node width " + std::to_string(h.cols()) +
                                              " vs pooling rows " + std::to_string(w_pool.rows()));
  }
  return reduce_sum(row_softmax(matmul(h, w_pool)), 0);
}

struct EncodedMolecule {
  Tensor mu;
  Tensor logstd;
};

/// Tape-free forward pass.
inline EncodedMolecule encode(const MolGraph &mol, const ParamStore &params) {
  Tape tape;
  auto out = encode(graph_inputs(tape, mol), bind_encoder(tape, params));
  return {out.mu.value(), out.logstd.value()};
}

/// Pooled 64-vector of the deterministic encoding (Z = Mu).
inline Tensor pooled_embedding(const MolGraph &mol, const ParamStore &params) {
  Tape tape;
  auto out = encode(graph_inputs(tape, mol), bind_encoder(tape, params));
  return pool(out.mu, tape.param(params, pname::kPool)).value();
}

} // namespace gvae
