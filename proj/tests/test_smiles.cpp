// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "gvae/chem.hpp"
#include "gvae/generate.hpp"
#include "gvae/smiles.hpp"

namespace gvae {
namespace {

ErrorCode parse_error(const std::string &s) {
  try {
    parse_smiles(s);
  } catch (const Error &e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a parse error for '" << s << "'";
  return ErrorCode::InvalidArgument;
}

std::size_t count_bonds(const MolGraph &m, BondType t) {
  std::size_t c = 0;
  for (const Bond &b : m.bonds()) c += b.type == t;
  return c;
}

TEST(Parse, Ethane) {
  MolGraph m = parse_smiles("CC");
  ASSERT_EQ(m.num_atoms(), 2u);
  ASSERT_EQ(m.num_bonds(), 1u);
  EXPECT_EQ(m.bonds()[0].type, BondType::Single);
  EXPECT_EQ(m.atom(0).implicit_h, 3);
  EXPECT_EQ(m.atom(1).implicit_h, 3);
}

TEST(Parse, Aspirin) {
  // O=C(C)Oc1ccccc1C(=O)O: 13 heavy atoms; 7 chain bonds + 6 ring bonds.
  MolGraph m = parse_smiles("O=C(C)Oc1ccccc1C(=O)O");
  EXPECT_EQ(m.num_atoms(), 13u);
  EXPECT_EQ(m.num_bonds(), 13u);
  EXPECT_EQ(count_bonds(m, BondType::Aromatic), 6u);
  EXPECT_EQ(count_bonds(m, BondType::Double), 2u);
  EXPECT_TRUE(check_valence(m).valid);
}

TEST(Parse, Cyclopropane) {
  MolGraph m = parse_smiles("C1CC1");
  ASSERT_EQ(m.num_atoms(), 3u);
  ASSERT_EQ(m.num_bonds(), 3u);
  EXPECT_TRUE(m.bond_between(0, 2).has_value());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(m.degree(i), 2u);
    EXPECT_EQ(m.atom(i).implicit_h, 2);
  }
  EXPECT_EQ(count_bonds(m, BondType::Single), 3u);
}

TEST(Parse, Errors) {
  EXPECT_EQ(parse_error("C("), ErrorCode::UnbalancedParenthesis);
  EXPECT_EQ(parse_error("C)C"), ErrorCode::UnbalancedParenthesis);
  EXPECT_EQ(parse_error("C1CC"), ErrorCode::UnclosedRing);
  EXPECT_EQ(parse_error(""), ErrorCode::EmptyInput);
  EXPECT_EQ(parse_error("CC.O"), ErrorCode::DisconnectedInput);
  EXPECT_EQ(parse_error("CXC"), ErrorCode::UnknownSymbol);
  EXPECT_EQ(parse_error("B"), ErrorCode::UnknownSymbol);
  EXPECT_EQ(parse_error("[Xe]"), ErrorCode::UnknownSymbol);
  EXPECT_EQ(parse_error("[C"), ErrorCode::UnknownSymbol);
  EXPECT_EQ(parse_error("C="), ErrorCode::DanglingBond);
  EXPECT_EQ(parse_error("C=1CC-1"), ErrorCode::InvalidRingBond);
  EXPECT_EQ(parse_error("C11"), ErrorCode::SelfLoop);
  EXPECT_EQ(parse_error("C12CC12"), ErrorCode::DuplicateBond);
  EXPECT_EQ(parse_error("[CH5]"), ErrorCode::InvalidAtom);
}

TEST(Parse, BracketAtoms) {
  MolGraph m = parse_smiles("C[NH3+]");
  EXPECT_EQ(m.atom(1).element, Element::N);
  EXPECT_EQ(m.atom(1).formal_charge, 1);
  EXPECT_EQ(m.atom(1).implicit_h, 3);
  EXPECT_TRUE(check_valence(m).valid);

  MolGraph o = parse_smiles("CC(=O)[O-]");
  EXPECT_EQ(o.atom(3).formal_charge, -1);
  EXPECT_EQ(o.atom(3).implicit_h, 0);
  EXPECT_TRUE(check_valence(o).valid);

  EXPECT_EQ(parse_smiles("[O--]").atom(0).formal_charge, -2);
  EXPECT_EQ(parse_smiles("[N+2]").atom(0).formal_charge, 2);
  EXPECT_EQ(parse_smiles("[Cl]").atom(0).element, Element::Cl);
  EXPECT_EQ(parse_smiles("[Cl]").atom(0).implicit_h, 0);
}

TEST(Parse, StereoAndIsotopesAreStripped) {
  auto r = parse_smiles_detailed("F/C=C/[13CH2][C@@H](O)Cl");
  EXPECT_EQ(r.stripped, 4u);
  EXPECT_EQ(r.mol.num_atoms(), 7u);
  EXPECT_TRUE(check_valence(r.mol).valid);
}

TEST(Parse, AromaticDefaultsAndExplicitSingle) {
  MolGraph bip = parse_smiles("c1ccccc1-c1ccccc1");
  EXPECT_EQ(count_bonds(bip, BondType::Aromatic), 12u);
  EXPECT_EQ(count_bonds(bip, BondType::Single), 1u);
  MolGraph pyr = parse_smiles("c1ccncc1");
  EXPECT_EQ(pyr.atom(3).implicit_h, 0);
  EXPECT_EQ(pyr.atom(0).implicit_h, 1);
}

TEST(Parse, PercentRingClosure) {
  MolGraph m = parse_smiles("C%12CC%12");
  EXPECT_EQ(m.num_bonds(), 3u);
}

TEST(Parse, RingBondSymbolOnEitherSide) {
  EXPECT_EQ(parse_smiles("C=1CCC1").bond_between(0, 3), BondType::Double);
  EXPECT_EQ(parse_smiles("C1CCC=1").bond_between(0, 3), BondType::Double);
}

TEST(Parse, HypervalentInputIsReportedNotRejected) {
  MolGraph m = parse_smiles("FC(F)(F)(F)F");
  EXPECT_FALSE(check_valence(m).valid);
}

TEST(Parse, AtomCountMatchesAtomTokens) {
  for (std::string s : {"CC", "O=C(C)Oc1ccccc1C(=O)O", "[H]C([H])([H])[H]", "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
                        "ClC(Br)I"}) {
    std::size_t atom_tokens = 0;
    for (const auto &t : tokenize_smiles(s))
      atom_tokens += t.kind == TokenKind::OrganicAtom || t.kind == TokenKind::BracketAtom;
    EXPECT_EQ(parse_smiles(s).num_atoms(), atom_tokens) << s;
  }
}

TEST(Write, Basics) {
  EXPECT_EQ(write_smiles(parse_smiles("C")), "C");
  EXPECT_EQ(write_smiles(parse_smiles("CC")), "CC");
  EXPECT_EQ(write_smiles(parse_smiles("C1CC1")), "C1CC1");
  EXPECT_EQ(write_smiles(parse_smiles("CC(C)C")), "CC(C)C");
  EXPECT_EQ(write_smiles(build({Atom{Element::H, 0, 0}, Atom{Element::H, 0, 0}},
                               {{0, 1, BondType::Single}})),
            "[H][H]");
}

TEST(Write, DisconnectedIsAnError) {
  MolGraph m = build({Atom{Element::C, 0, 4}, Atom{Element::C, 0, 4}}, {});
  try {
    write_smiles(m);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::Disconnected);
  }
}

TEST(Write, FragmentsJoinedWithDot) {
  MolGraph m = build({Atom{Element::C, 0, 3}, Atom{Element::O, 0, 2}, Atom{Element::C, 0, 3}},
                     {{0, 2, BondType::Single}});
  EXPECT_EQ(write_smiles_fragments(m), "CC.O");
  EXPECT_EQ(write_smiles_fragments(parse_smiles("CCO")), "CCO");
  EXPECT_THROW(write_smiles_fragments(MolGraph{}), Error);
}

void expect_round_trip(const std::string &s) {
  MolGraph m = parse_smiles(s);
  const std::string w = write_smiles(m);
  MolGraph back = parse_smiles(w);
  EXPECT_TRUE(is_isomorphic(m, back)) << s << " -> " << w;
}

TEST(RoundTrip, HandPicked) {
  for (const char *s :
       {"O=C(C)Oc1ccccc1C(=O)O", "CC(N)Cc1ccccc1", "CC(NC)Cc1ccc2OCOc2c1",
        "Cn1cnc2c1c(=O)n(C)c(=O)n2C", "CN1CCCC1c1cccnc1", "C[NH3+]", "CC(=O)[O-]",
        "c1ccccc1-c1ccccc1", "C1CC2CCC1C2", "C#N", "[H]C([H])([H])[H]", "c1cc[nH]c1",
        "C12C3C4C1C5C2C3C45", "OC1C(O)C(O)C(O)C(O)C1O"}) {
    expect_round_trip(s);
  }
}

TEST(RoundTrip, GeneratedMolecules) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    MolGraph m = random_molecule(rng, 1 + trial % 20);
    const std::string w = write_smiles(m);
    EXPECT_TRUE(is_isomorphic(m, parse_smiles(w))) << w;
  }
}

TEST(RoundTrip, BundledCorpus) {
  std::ifstream in(GVAE_CORPUS);
  ASSERT_TRUE(in) << GVAE_CORPUS;
  std::string line;
  std::getline(in, line);
  std::size_t n = 0;
  while (std::getline(in, line)) {
    expect_round_trip(line.substr(0, line.find(',')));
    ++n;
  }
  EXPECT_GE(n, 500u);
}

TEST(Fuzz, RandomBytesNeverCrash) {
  std::mt19937_64 rng(2024);
  const std::string alphabet = "CNOSPFIBrcl[]()=#-:/\\@%+.0123456789Hnos";
  std::uniform_int_distribution<int> len(0, 24);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::size_t parsed = 0;
  for (int trial = 0; trial < 20000; ++trial) {
    std::string s;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) {
      s += trial % 2 ? static_cast<char>(byte(rng)) : alphabet[pick(rng)];
    }
    try {
      MolGraph m = parse_smiles(s);
      ++parsed;
      if (is_connected(m)) {
        EXPECT_TRUE(is_isomorphic(m, parse_smiles(write_smiles(m)))) << s;
      }
    } catch (const Error &) {
    }
  }
  EXPECT_GT(parsed, 0u);
}

} // namespace
} // namespace gvae
