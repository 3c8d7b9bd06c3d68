// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "gvae/generate.hpp"
#include "gvae/smiles.hpp"
#include "gvae/train.hpp"

namespace gvae {
namespace {

Dataset random_dataset(std::size_t n, std::uint64_t seed, std::size_t max_atoms = 10) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size(2, max_atoms);
  Dataset ds;
  ds.property_names = {"heavy_atoms"};
  for (std::size_t i = 0; i < n; ++i) {
    MolGraph m = random_molecule(rng, size(rng));
    ds.records.push_back({write_smiles(m), m, {{"heavy_atoms", double(m.num_atoms())}}});
  }
  return ds;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  c.learning_rate = 3e-3;
  c.beta = 0.01;
  return c;
}

ParamStore single(const std::string &name, Tensor t) {
  ParamStore p;
  p.add(name, std::move(t));
  return p;
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore p = init_model_params(1);
  const ParamStore before = p;
  AdamState st = AdamState::for_params(p);
  adam_step(p, p.zeros_like(), st, 1e-3);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepIsSignScaled) {
  ParamStore p = single("w", Tensor({4}, std::vector<double>{1.0, -2.0, 0.5, 3.0}));
  ParamStore g = single("w", Tensor({4}, std::vector<double>{0.3, -7.0, 1e-4, -2.0}));
  AdamState st = AdamState::for_params(p);
  const double lr = 0.01;
  adam_step(p, g, st, lr);
  const std::vector<double> w0{1.0, -2.0, 0.5, 3.0}, g0{0.3, -7.0, 1e-4, -2.0};
  for (std::size_t k = 0; k < 4; ++k) {
    // Bias-corrected moments at t = 1 are exactly g and g^2.
    const double expected = w0[k] - lr * g0[k] / (std::abs(g0[k]) + 1e-8);
    EXPECT_NEAR(p.at("w").values()[k], expected, 1e-15);
    EXPECT_NEAR(p.at("w").values()[k], w0[k] - lr * (g0[k] > 0 ? 1 : -1), 1e-6);
  }
}

TEST(Adam, TwoStepsOnQuadraticByHand) {
  // f(t) = t^2, t0 = 1, lr = 0.1.
  ParamStore p = single("t", Tensor({1}, 1.0));
  AdamState st = AdamState::for_params(p);
  const double lr = 0.1;
  double m = 0, v = 0, t = 1.0;
  for (int step = 1; step <= 2; ++step) {
    const double g = 2 * t;
    adam_step(p, single("t", Tensor({1}, g)), st, lr);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    t -= lr * (m / (1 - std::pow(0.9, step))) / (std::sqrt(v / (1 - std::pow(0.999, step))) + 1e-8);
    EXPECT_NEAR(p.at("t").item(), t, 1e-15);
  }
  EXPECT_LT(p.at("t").item() * p.at("t").item(), 1.0);
}

TEST(Adam, ShapeMismatch) {
  ParamStore p = single("w", Tensor({3}));
  AdamState st = AdamState::for_params(p);
  try {
    adam_step(p, single("w", Tensor({4})), st, 1e-3);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  EXPECT_THROW(adam_step(p, single("v", Tensor({3})), st, 1e-3), Error);
}

TEST(TrainConfig, Defaults) {
  TrainConfig c;
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.beta, 1.0);
  EXPECT_EQ(c.lambda, 1.0);
  EXPECT_EQ(c.max_atoms, 20u);
  EXPECT_EQ(c.threshold, 0.5);
  EXPECT_NO_THROW(validate(c));
  using Mutator = void (*)(TrainConfig &);
  for (Mutator bad : {+[](TrainConfig &x) { x.batch_size = 0; }, +[](TrainConfig &x) { x.learning_rate = 0; },
                      +[](TrainConfig &x) { x.beta = -1; }, +[](TrainConfig &x) { x.max_atoms = 0; },
                      +[](TrainConfig &x) { x.threshold = 1.0; }}) {
    TrainConfig x;
    bad(x);
    EXPECT_THROW(validate(x), Error);
  }
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  TrainConfig c = quick_config(0);
  c.seed = 9;
  auto r = train(random_dataset(5, 1), c);
  EXPECT_EQ(r.params, init_model_params(9));
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, BitIdenticalForSameSeed) {
  Dataset ds = random_dataset(12, 2);
  auto a = train(ds, quick_config(3));
  auto b = train(ds, quick_config(3));
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(a.history[e].total, b.history[e].total);
  TrainConfig other = quick_config(3);
  other.seed = 1;
  EXPECT_FALSE(train(ds, other).params == a.params);
}

TEST(Train, LossDecreasesAndHistoryIsConsistent) {
  Dataset ds = random_dataset(30, 3);
  std::size_t calls = 0;
  auto r = train(ds, quick_config(25), [&](std::size_t epoch, const LossBreakdown &) {
    EXPECT_EQ(epoch, ++calls);
  });
  EXPECT_EQ(calls, 25u);
  for (const auto &h : r.history) {
    EXPECT_TRUE(std::isfinite(h.total));
    EXPECT_NEAR(h.total, h.recon + 0.01 * h.kl + h.side_mse, 1e-9 * h.total);
  }
  EXPECT_LT(r.history.back().total, 0.4 * r.history.front().total);
}

TEST(Train, Errors) {
  TrainConfig c = quick_config(1);
  try {
    train(Dataset{}, c);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
  Dataset big = random_dataset(3, 4, 10);
  c.max_atoms = 3;
  try {
    train(big, c);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::MoleculeTooLarge);
  }
  c = quick_config(1);
  c.property = "logp";
  EXPECT_THROW(train(big, c), Error);
  c.lambda = 0.0; // no label needed without the side term
  EXPECT_NO_THROW(train(big, c));
}

TEST(Train, DivergenceNamesTheMolecule) {
  TrainConfig c = quick_config(50);
  c.learning_rate = 1e4;
  try {
    train(random_dataset(8, 5), c);
    FAIL() << "expected divergence";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteValue);
    EXPECT_NE(std::string(e.what()).find("molecule"), std::string::npos);
  }
}

TEST(Auc, SimpleCases) {
  EXPECT_EQ(roc_auc({0.1, 0.2, 0.8, 0.9}, {false, false, true, true}), 1.0);
  EXPECT_EQ(roc_auc({0.9, 0.8, 0.2, 0.1}, {false, false, true, true}), 0.0);
  EXPECT_EQ(roc_auc({0.5, 0.5, 0.5}, {true, false, false}), 0.5);
  EXPECT_EQ(roc_auc({0.3, 0.4}, {true, true}), 0.5);
  // one tie between a positive and a negative counts half
  EXPECT_DOUBLE_EQ(roc_auc({0.2, 0.5, 0.5, 0.9}, {false, true, false, true}), 0.875);
  EXPECT_THROW(roc_auc({0.1}, {true, false}), Error);
}

TEST(Auc, MatchesPairCountingAndIsRankInvariant) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> level(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s;
    std::vector<bool> y;
    for (int k = 0; k < 60; ++k) {
      s.push_back(level(rng) / 10.0);
      y.push_back(level(rng) < 3 + (s.back() > 0.5 ? 3 : 0));
    }
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j)
        if (y[i] && !y[j]) {
          pairs += 1;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    const double auc = roc_auc(s, y);
    EXPECT_NEAR(auc, wins / pairs, 1e-12);
    std::vector<double> t;
    for (double v : s) t.push_back(std::exp(3 * v) - 7);
    EXPECT_NEAR(roc_auc(t, y), auc, 1e-12);
  }
}

TEST(Evaluate, ZeroParams) {
  Dataset ds = random_dataset(20, 7);
  const ModelParams z = zero_model_params();
  EXPECT_EQ(evaluate_validity(z, ds), 1.0);
  EXPECT_EQ(evaluate_edge_auc(z, ds), 0.5);
}

TEST(Evaluate, EdgeAucInRange) {
  Dataset ds = random_dataset(20, 8);
  const double auc = evaluate_edge_auc(init_model_params(3), ds);
  EXPECT_GE(auc, 0.0);
  EXPECT_LE(auc, 1.0);
}

TEST(Evaluate, ReportFields) {
  Dataset ds = random_dataset(10, 9);
  auto r = evaluate(init_model_params(2), ds, "heavy_atoms", 0.5, "train");
  EXPECT_EQ(r.molecules, 10u);
  EXPECT_EQ(r.split, "train");
  EXPECT_GE(r.property_mse, 0.0);
  EXPECT_LE(r.property_r2, 1.0);
}

TEST(Split, SeededEightyTwenty) {
  Dataset ds = random_dataset(50, 10);
  auto [a, b] = split_dataset(ds, 3);
  EXPECT_EQ(a.size(), 40u);
  EXPECT_EQ(b.size(), 10u);
  std::set<std::string> seen;
  for (const auto &r : a.records) seen.insert(r.smiles);
  std::size_t overlap = 0;
  for (const auto &r : b.records) overlap += seen.count(r.smiles);
  EXPECT_LE(overlap, 2u); // duplicates in the random set only
  auto [a2, b2] = split_dataset(ds, 3);
  EXPECT_EQ(a2.records.front().smiles, a.records.front().smiles);
  EXPECT_EQ(b2.records.back().smiles, b.records.back().smiles);
}

TEST(Probe, ConstantTargetHasUnitR2) {
  Dataset ds = random_dataset(40, 11);
  std::vector<MolGraph> mols;
  for (const auto &r : ds.records) mols.push_back(r.mol);
  auto res = fit_probe(init_model_params(1), mols, std::vector<double>(mols.size(), 0.0));
  EXPECT_EQ(res.r2, 1.0);
  EXPECT_EQ(res.weights.size(), kPoolWidth + 1);
  for (double w : res.weights) EXPECT_NEAR(w, 0.0, 1e-12);
}

TEST(Probe, NoiseTargetIsNotPredictable) {
  Dataset ds = random_dataset(300, 12, 12);
  std::vector<MolGraph> mols;
  for (const auto &r : ds.records) mols.push_back(r.mol);
  const ModelParams p = init_model_params(4);
  double mean_r2 = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    std::normal_distribution<double> n01;
    std::vector<double> y;
    for (std::size_t i = 0; i < mols.size(); ++i) y.push_back(n01(rng));
    const double r2 = fit_probe(p, mols, y, seed).r2;
    EXPECT_LE(r2, 0.1);
    mean_r2 += r2 / 5;
  }
  EXPECT_LE(mean_r2, 0.05);
}

TEST(Probe, HeavyAtomCountIsLinearInPooledVector) {
  // The pooled vector sums to N for any parameters.
  Dataset ds = random_dataset(100, 13, 12);
  auto res = fit_probe(init_model_params(5), ds, "heavy_atoms");
  EXPECT_GT(res.r2, 0.99);
  EXPECT_EQ(res.train_count, 80u);
  EXPECT_EQ(res.test_count, 20u);
  EXPECT_THROW(fit_probe(init_model_params(5), ds, "missing"), Error);
}

} // namespace
} // namespace gvae
