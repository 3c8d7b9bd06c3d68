// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gvae/encoder.hpp"
#include "gvae/generate.hpp"
#include "gvae/smiles.hpp"
#include "gvae/vaemodel.hpp"

namespace gvae {
namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t = Tensor::matrix(r, c);
  for (double &v : t.values()) v = u(rng);
  return t;
}

ParamStore random_layer(std::size_t in, std::size_t out, std::mt19937_64 &rng) {
  ParamStore p;
  add_rgcn_layer_params(p, "L", in, out, rng);
  return p;
}

std::vector<std::size_t> random_perm(std::size_t n, std::mt19937_64 &rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

TEST(RgcnLayer, IsolatedNodeSeesOnlySelfTerm) {
  std::mt19937_64 rng(1);
  MolGraph m = parse_smiles("C");
  ParamStore p = random_layer(kFeatureWidth, 8, rng);
  Tape tape;
  GraphInputs g = graph_inputs(tape, m);
  Tensor out = rgcn_layer(g.features, g, bind_layer(tape, p, "L"), false).value();
  Tensor expected = matmul(node_features(m), p.at("L.self"));
  ASSERT_EQ(out.shape(), expected.shape());
  for (std::size_t k = 0; k < out.size(); ++k) EXPECT_DOUBLE_EQ(out[k], expected[k]);
}

TEST(RgcnLayer, TwoNodesSingleBondIdentityRelation) {
  std::mt19937_64 rng(2);
  MolGraph m = build({Atom{Element::C, 0, 3}, Atom{Element::O, 0, 1}}, {{0, 1, BondType::Single}});
  ParamStore p;
  for (std::size_t r = 0; r < kNumBondTypes; ++r) {
    p.add(pname::relation("L", r), r == 0 ? Tensor::identity(4) : random_matrix(4, 4, rng));
  }
  p.add(pname::self("L"), Tensor::matrix(4, 4));
  Tensor h = Tensor::matrix({{1, 2, 3, 4}, {5, 6, 7, 8}});
  Tape tape;
  GraphInputs g = graph_inputs(tape, Tensor::matrix(2, kFeatureWidth), adjacency_tensor(m));
  Var hv = tape.constant(h);
  Tensor out = rgcn_layer(hv, g, bind_layer(tape, p, "L"), false).value();
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(out(0, j), h(1, j));
    EXPECT_EQ(out(1, j), h(0, j));
  }
}

TEST(RgcnLayer, MeanAggregationOverNeighbors) {
  // Central C with three single-bonded neighbors: the message is their mean.
  MolGraph m = parse_smiles("CC(C)C");
  ParamStore p;
  for (std::size_t r = 0; r < kNumBondTypes; ++r) p.add(pname::relation("L", r), Tensor::identity(2));
  p.add(pname::self("L"), Tensor::matrix(2, 2));
  Tensor h = Tensor::matrix({{1, 0}, {0, 0}, {4, 2}, {7, 1}});
  Tape tape;
  GraphInputs g = graph_inputs(tape, Tensor::matrix(4, kFeatureWidth), adjacency_tensor(m));
  Tensor out = rgcn_layer(tape.constant(h), g, bind_layer(tape, p, "L"), false).value();
  EXPECT_DOUBLE_EQ(out(1, 0), 4.0);
  EXPECT_DOUBLE_EQ(out(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(out(0, 0), 0.0);
}

TEST(RgcnLayer, ActivationIsElu) {
  MolGraph m = parse_smiles("C");
  ParamStore p;
  for (std::size_t r = 0; r < kNumBondTypes; ++r) p.add(pname::relation("L", r), Tensor::matrix(2, 2));
  p.add(pname::self("L"), Tensor::identity(2));
  Tape tape;
  GraphInputs g = graph_inputs(tape, Tensor::matrix(1, kFeatureWidth), adjacency_tensor(m));
  Tensor out =
      rgcn_layer(tape.constant(Tensor::matrix({{2.0, -1.0}})), g, bind_layer(tape, p, "L"), true)
          .value();
  EXPECT_EQ(out(0, 0), 2.0);
  EXPECT_NEAR(out(0, 1), std::exp(-1.0) - 1.0, 1e-15);
}

TEST(RgcnLayer, AbsentRelationsContributeNothing) {
  std::mt19937_64 rng(3);
  MolGraph m = parse_smiles("CC(=O)O");
  ParamStore p = random_layer(kFeatureWidth, 6, rng);
  auto run = [&] {
    Tape tape;
    GraphInputs g = graph_inputs(tape, m);
    return rgcn_layer(g.features, g, bind_layer(tape, p, "L"), true).value();
  };
  Tensor before = run();
  p.set(pname::relation("L", 2), random_matrix(kFeatureWidth, 6, rng)); // triple
  p.set(pname::relation("L", 3), random_matrix(kFeatureWidth, 6, rng)); // aromatic
  EXPECT_EQ(run(), before);
  p.set(pname::relation("L", 1), random_matrix(kFeatureWidth, 6, rng)); // double
  EXPECT_NE(run(), before);
}

TEST(RgcnLayer, ShapeMismatch) {
  std::mt19937_64 rng(4);
  MolGraph m = parse_smiles("CC");
  ParamStore p = random_layer(kFeatureWidth, 4, rng);
  Tape tape;
  GraphInputs g = graph_inputs(tape, m);
  Var wrong_rows = tape.constant(Tensor::matrix(3, kFeatureWidth));
  try {
    rgcn_layer(wrong_rows, g, bind_layer(tape, p, "L"), true);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  try {
    graph_inputs(tape, Tensor::matrix(3, kFeatureWidth), adjacency_tensor(m));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(RgcnLayer, PermutationEquivariance) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    MolGraph m = random_molecule(rng, 1 + trial % 12);
    ParamStore p = random_layer(kFeatureWidth, 9, rng);
    const auto perm = random_perm(m.num_atoms(), rng);
    MolGraph pm = permuted(m, perm);
    auto run = [&](const MolGraph &g) {
      Tape tape;
      GraphInputs in = graph_inputs(tape, g);
      return rgcn_layer(in.features, in, bind_layer(tape, p, "L"), true).value();
    };
    Tensor a = run(m), b = run(pm);
    for (std::size_t i = 0; i < m.num_atoms(); ++i)
      for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(b(perm[i], j), a(i, j), 1e-12);
  }
}

TEST(Encode, ZeroParamsGiveZeroOutputs) {
  ModelParams p = zero_model_params();
  EncodedMolecule e = encode(parse_smiles("O=C(C)Oc1ccccc1C(=O)O"), p);
  for (double v : e.mu.values()) EXPECT_EQ(v, 0.0);
  for (double v : e.logstd.values()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, OutputShapes) {
  std::mt19937_64 rng(6);
  ModelParams p = init_model_params(6);
  for (std::size_t n = 1; n <= 20; ++n) {
    MolGraph m = random_molecule(rng, n);
    EncodedMolecule e = encode(m, p);
    EXPECT_EQ(e.mu.shape(), (Shape{m.num_atoms(), kLatentWidth}));
    EXPECT_EQ(e.logstd.shape(), (Shape{m.num_atoms(), kLatentWidth}));
  }
}

TEST(Encode, ParameterLayout) {
  ModelParams p = init_model_params(0);
  EXPECT_EQ(p.at("enc.l1.rel0").shape(), (Shape{32, 32}));
  EXPECT_EQ(p.at("enc.l2.self").shape(), (Shape{32, 32}));
  EXPECT_EQ(p.at("enc.mu.rel3").shape(), (Shape{32, 16}));
  EXPECT_EQ(p.at("enc.logstd.self").shape(), (Shape{32, 16}));
  EXPECT_EQ(p.at("pool.w").shape(), (Shape{16, 64}));
  const double s = std::sqrt(6.0 / 64.0);
  for (double v : p.at("enc.l1.rel0").values()) {
    EXPECT_LE(std::abs(v), s);
  }
}

TEST(Encode, GoldenFixture) {
  std::ifstream in(std::string(GVAE_TEST_DATA) + "/encoder_golden.txt");
  ASSERT_TRUE(in);
  MolGraph m = parse_smiles("CC(=O)Nc1ccccc1");
  EncodedMolecule e = encode(m, init_model_params(7));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::size_t i;
    ss >> i;
    ASSERT_LT(i, m.num_atoms());
    for (std::size_t k = 0; k < 2 * kLatentWidth; ++k) {
      double v;
      ss >> v;
      const double got = k < kLatentWidth ? e.mu(i, k) : e.logstd(i, k - kLatentWidth);
      EXPECT_NEAR(got, v, 1e-12 * std::max(1.0, std::abs(v))) << "node " << i << " col " << k;
    }
    ++rows;
  }
  EXPECT_EQ(rows, m.num_atoms());
}

TEST(Encode, SharedLayersFeedBothHeads) {
  MolGraph m = parse_smiles("CC(=O)N");
  ModelParams p = init_model_params(8);
  EncodedMolecule base = encode(m, p);

  // Feature column 1 (element C) is active on carbon rows, so this entry of
  // the layer-1 self weight reaches both heads.
  ModelParams q = p;
  q.at(pname::self(pname::kLayer1))(static_cast<std::size_t>(Element::C), 0) += 1e-3;
  EncodedMolecule l1 = encode(m, q);
  EXPECT_NE(l1.mu, base.mu);
  EXPECT_NE(l1.logstd, base.logstd);

  ModelParams r = p;
  r.at(pname::self(pname::kMuHead))(0, 0) += 1e-3;
  EncodedMolecule head = encode(m, r);
  EXPECT_NE(head.mu, base.mu);
  EXPECT_EQ(head.logstd, base.logstd);

  ModelParams s = p;
  s.at(pname::self(pname::kLogStdHead))(0, 0) += 1e-3;
  EncodedMolecule sh = encode(m, s);
  EXPECT_EQ(sh.mu, base.mu);
  EXPECT_NE(sh.logstd, base.logstd);
}

TEST(Encode, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    MolGraph m = random_molecule(rng, 4 + seed);
    ModelParams p = init_model_params(seed);
    Tensor r1 = random_matrix(m.num_atoms(), kLatentWidth, rng);
    Tensor r2 = random_matrix(m.num_atoms(), kLatentWidth, rng);
    LossFn f = [&](Tape &t, const ParamStore &ps) {
      auto enc = encode(graph_inputs(t, m), bind_encoder(t, ps));
      return add(sum(hadamard(enc.mu, t.constant(r1))), sum(hadamard(enc.logstd, t.constant(r2))));
    };
    EXPECT_LT(grad_check(f, p, 1e-5, 256, seed), 1e-5) << "seed " << seed;
  }
}

TEST(Pool, SingleNodeZeroLogitsIsUniform) {
  Tape tape;
  Var h = tape.constant(Tensor::matrix(1, kLatentWidth, 0.7));
  Var w = tape.constant(Tensor::matrix(kLatentWidth, kPoolWidth));
  Tensor g = pool(h, w).value();
  ASSERT_EQ(g.shape(), (Shape{1, kPoolWidth}));
  for (double v : g.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 64.0);
}

TEST(Pool, EntriesSumToNodeCount) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 20;
    Tape tape;
    Tensor hv = random_matrix(n, kLatentWidth, rng);
    for (double &v : hv.values()) v *= 5.0;
    Tensor g = pool(tape.constant(hv), tape.constant(random_matrix(kLatentWidth, kPoolWidth, rng)))
                   .value();
    double total = 0.0;
    for (double v : g.values()) total += v;
    EXPECT_NEAR(total, static_cast<double>(n), 1e-12);
  }
}

TEST(Pool, PermutationInvariance) {
  std::mt19937_64 rng(11);
  ModelParams p = init_model_params(11);
  for (int trial = 0; trial < 100; ++trial) {
    MolGraph m = random_molecule(rng, 1 + trial % 12);
    MolGraph pm = permuted(m, random_perm(m.num_atoms(), rng));
    Tensor a = pooled_embedding(m, p), b = pooled_embedding(pm, p);
    for (std::size_t k = 0; k < kPoolWidth; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
  }
}

TEST(Pool, ShapeMismatch) {
  Tape tape;
  try {
    pool(tape.constant(Tensor::matrix(2, 8)), tape.constant(Tensor::matrix(16, 64)));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

} // namespace
} // namespace gvae
