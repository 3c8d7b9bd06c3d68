// SPDX-License-Identifier: Apache-2.0
//
// Regenerates data/corpus.csv: 500 generated molecules of 3..12 heavy atoms
// followed by the five reference drugs.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <string>

#include "gvae/dataio.hpp"
#include "gvae/generate.hpp"
#include "gvae/smiles.hpp"

int main(int argc, char **argv) {
  using namespace gvae;
  const std::string path = argc > 1 ? argv[1] : "data/corpus.csv";
  std::ofstream out(path);
  if (!out) {
    std::cerr << "cannot write " << path << "\n";
    return 2;
  }
  out << "smiles,heavy_atoms\n";

  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<std::size_t> size(3, 12);
  std::set<std::string> seen;
  std::size_t written = 0;
  while (written < 500) {
    const MolGraph m = random_molecule(rng, size(rng));
    const std::string s = write_smiles(m);
    if (!seen.insert(s).second) continue;
    if (!check_valence(m).valid || !is_isomorphic(parse_smiles(s), m)) {
      std::cerr << "generator produced a bad molecule: " << s << "\n";
      return 3;
    }
    out << s << ',' << m.num_atoms() << '\n';
    ++written;
  }
  for (const auto &drug : kReferenceDrugs) {
    out << drug.smiles << ',' << parse_smiles(drug.smiles).num_atoms() << '\n';
  }
  std::cout << "wrote " << written + kReferenceDrugs.size() << " molecules to " << path << "\n";
  return 0;
}
