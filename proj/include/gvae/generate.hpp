// SPDX-License-Identifier: Apache-2.0
//
// Seeded generator of small valence-valid molecules. Used to build the
// bundled corpus and to draw random inputs for property tests and gradient
// checks.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <queue>
#include <random>
#include <vector>

#include "gvae/chem.hpp"

namespace gvae {

namespace detail {

inline int base_valence(Element e) { return allowed_valences(e, 0).front(); }

struct GrowState {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::vector<double> used; // bond valence consumed per atom

  int free_valence(std::size_t i) const {
    return base_valence(atoms[i].element) - static_cast<int>(std::ceil(used[i]));
  }

  bool bonded(std::size_t a, std::size_t b) const {
    for (const Bond &bd : bonds) {
      if ((bd.i == a && bd.j == b) || (bd.i == b && bd.j == a)) return true;
    }
    return false;
  }

  void add_bond(std::size_t a, std::size_t b, BondType t) {
    bonds.push_back({a, b, t});
    used[a] += valence_weight(t);
    used[b] += valence_weight(t);
  }

  std::size_t add_atom(Element e) {
    atoms.push_back({e, 0, 0});
    used.push_back(0.0);
    return atoms.size() - 1;
  }

  std::vector<int> distances_from(std::size_t s) const {
    std::vector<int> dist(atoms.size(), -1);
    std::queue<std::size_t> q;
    dist[s] = 0;
    q.push(s);
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (const Bond &bd : bonds) {
        std::size_t v;
        if (bd.i == u) v = bd.j;
        else if (bd.j == u) v = bd.i;
        else continue;
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          q.push(v);
        }
      }
    }
    return dist;
  }
};

} // namespace detail

/// Grows a connected molecule of at most `n_atoms` heavy atoms (fewer if
/// every atom saturates early). Optional aromatic six-ring seed, chain and
/// branch growth with occasional double/triple bonds, and occasional
/// five/six-membered ring closures. Hydrogens are implicit and set to the
/// lowest valid count, so the result always passes check_valence.
inline MolGraph random_molecule(std::mt19937_64 &rng, std::size_t n_atoms) {
  n_atoms = std::max<std::size_t>(n_atoms, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  detail::GrowState st;

  static constexpr std::array<Element, 8> kPool = {Element::C, Element::N,  Element::O,
                                                   Element::F, Element::Cl, Element::S,
                                                   Element::Br, Element::P};
  static constexpr std::array<double, 8> kWeights = {0.66, 0.12, 0.12, 0.03,
                                                     0.03, 0.02, 0.01, 0.01};
  std::discrete_distribution<std::size_t> pick_element(kWeights.begin(), kWeights.end());

  if (n_atoms >= 6 && unit(rng) < 0.35) {
    const bool pyridine = unit(rng) < 0.25;
    for (std::size_t k = 0; k < 6; ++k) {
      st.add_atom(pyridine && k == 3 ? Element::N : Element::C);
    }
    for (std::size_t k = 0; k < 6; ++k) st.add_bond(k, (k + 1) % 6, BondType::Aromatic);
  } else {
    st.add_atom(Element::C);
  }

  std::size_t attempts = 0;
  while (st.atoms.size() < n_atoms && attempts++ < 200) {
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < st.atoms.size(); ++i) {
      if (st.free_valence(i) >= 1) open.push_back(i);
    }
    if (open.empty()) break;

    // Ring closure between atoms four or five bonds apart.
    if (st.atoms.size() >= 5 && unit(rng) < 0.12) {
      std::vector<std::pair<std::size_t, std::size_t>> candidates;
      for (std::size_t a : open) {
        const auto dist = st.distances_from(a);
        for (std::size_t b : open) {
          if (b > a && (dist[b] == 4 || dist[b] == 5) && !st.bonded(a, b)) {
            candidates.emplace_back(a, b);
          }
        }
      }
      if (!candidates.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        const auto [a, b] = candidates[pick(rng)];
        st.add_bond(a, b, BondType::Single);
        continue;
      }
    }

    std::uniform_int_distribution<std::size_t> pick_open(0, open.size() - 1);
    const std::size_t anchor = open[pick_open(rng)];
    const Element e = kPool[pick_element(rng)];
    const int room = std::min(st.free_valence(anchor), detail::base_valence(e));
    BondType t = BondType::Single;
    const double r = unit(rng);
    if (room >= 3 && r < 0.04) t = BondType::Triple;
    else if (room >= 2 && r < 0.2) t = BondType::Double;
    const std::size_t idx = st.add_atom(e);
    st.add_bond(anchor, idx, t);
  }

  for (std::size_t i = 0; i < st.atoms.size(); ++i) {
    const int v = static_cast<int>(std::ceil(st.used[i]));
    st.atoms[i].implicit_h = lowest_valid_hydrogens(st.atoms[i].element, 0, v).value_or(0);
  }
  return build(std::move(st.atoms), std::move(st.bonds));
}

} // namespace gvae
