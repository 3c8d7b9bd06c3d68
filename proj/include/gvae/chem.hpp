// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "gvae/error.hpp"
#include "gvae/tensor.hpp"

namespace gvae {

enum class Element : std::uint8_t { H, C, N, O, F, P, S, Cl, Br, I };

inline constexpr std::size_t kNumElements = 10;

inline constexpr std::array<std::string_view, kNumElements> kElementSymbols = {
    "H", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"};

inline std::string_view symbol(Element e) {
  return kElementSymbols[static_cast<std::size_t>(e)];
}

inline std::optional<Element> element_from_symbol(std::string_view sym) {
  for (std::size_t k = 0; k < kNumElements; ++k) {
    if (kElementSymbols[k] == sym) return static_cast<Element>(k);
  }
  return std::nullopt;
}

enum class BondType : std::uint8_t { Single, Double, Triple, Aromatic };

inline constexpr std::size_t kNumBondTypes = 4;

inline constexpr double valence_weight(BondType t) {
  switch (t) {
  case BondType::Single: return 1.0;
  case BondType::Double: return 2.0;
  case BondType::Triple: return 3.0;
  case BondType::Aromatic: return 1.5;
  }
  return 0.0;
}

inline constexpr char bond_char(BondType t) {
  switch (t) {
  case BondType::Single: return '-';
  case BondType::Double: return '=';
  case BondType::Triple: return '#';
  case BondType::Aromatic: return ':';
  }
  return '?';
}

struct Atom {
  Element element = Element::C;
  int formal_charge = 0;
  int implicit_h = 0;

  static Atom from_symbol(std::string_view sym, int charge = 0, int h = 0) {
    auto e = element_from_symbol(sym);
    if (!e) throw Error(ErrorCode::UnknownElement, std::string(sym));
    return Atom{*e, charge, h};
  }

  friend bool operator==(const Atom &, const Atom &) = default;
};

struct Bond {
  std::size_t i = 0;
  std::size_t j = 0;
  BondType type = BondType::Single;

  friend bool operator==(const Bond &, const Bond &) = default;
};

struct Neighbor {
  std::size_t atom;
  BondType type;
};

/// Undirected molecular graph with typed bonds. Node ids are positions in
/// atoms() and never change after construction; bonds are stored with i < j.
class MolGraph {
public:
  MolGraph() = default;

  std::size_t num_atoms() const noexcept { return atoms_.size(); }
  std::size_t num_bonds() const noexcept { return bonds_.size(); }
  const std::vector<Atom> &atoms() const noexcept { return atoms_; }
  const Atom &atom(std::size_t i) const { return atoms_.at(i); }
  const std::vector<Bond> &bonds() const noexcept { return bonds_; }

  std::span<const Neighbor> neighbors(std::size_t i) const {
    return adjacency_.at(i);
  }

  std::size_t degree(std::size_t i) const { return adjacency_.at(i).size(); }

  std::size_t heavy_degree(std::size_t i) const {
    std::size_t d = 0;
    for (const auto &nb : adjacency_.at(i)) {
      if (atoms_[nb.atom].element != Element::H) ++d;
    }
    return d;
  }

  std::optional<BondType> bond_between(std::size_t i, std::size_t j) const {
    for (const auto &nb : adjacency_.at(i)) {
      if (nb.atom == j) return nb.type;
    }
    return std::nullopt;
  }

  /// Sum of bond valence weights at atom i (aromatic counts 1.5).
  double bond_order_sum(std::size_t i) const {
    double s = 0.0;
    for (const auto &nb : adjacency_.at(i)) s += valence_weight(nb.type);
    return s;
  }

  bool is_aromatic(std::size_t i) const {
    for (const auto &nb : adjacency_.at(i)) {
      if (nb.type == BondType::Aromatic) return true;
    }
    return false;
  }

  std::size_t heavy_atom_count() const {
    return static_cast<std::size_t>(
        std::count_if(atoms_.begin(), atoms_.end(),
                      [](const Atom &a) { return a.element != Element::H; }));
  }

  friend MolGraph build(std::vector<Atom> atoms, std::vector<Bond> bonds);

private:
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

inline constexpr int kMinCharge = -2;
inline constexpr int kMaxCharge = 2;
inline constexpr int kMaxImplicitH = 4;

/// Validates and canonicalizes a molecule. Throws on self-loops, duplicate
/// bonds, out-of-range indices, unknown elements, and atoms whose charge or
/// hydrogen count falls outside the supported ranges.
inline MolGraph build(std::vector<Atom> atoms, std::vector<Bond> bonds) {
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    const Atom &a = atoms[k];
    if (static_cast<std::size_t>(a.element) >= kNumElements) {
      throw Error(ErrorCode::UnknownElement,
                  "atom " + std::to_string(k) + " has an unknown element");
    }
    if (a.formal_charge < kMinCharge || a.formal_charge > kMaxCharge) {
      throw Error(ErrorCode::InvalidAtom,
                  "atom " + std::to_string(k) + " charge " +
                      std::to_string(a.formal_charge) + " outside [-2,2]");
    }
    if (a.implicit_h < 0 || a.implicit_h > kMaxImplicitH) {
      throw Error(ErrorCode::InvalidAtom,
                  "atom " + std::to_string(k) + " implicit H count " +
                      std::to_string(a.implicit_h) + " outside [0,4]");
    }
  }

  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (Bond &b : bonds) {
    if (b.i >= atoms.size() || b.j >= atoms.size()) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "bond (" + std::to_string(b.i) + "," + std::to_string(b.j) +
                      ") with " + std::to_string(atoms.size()) + " atoms");
    }
    if (b.i == b.j) {
      throw Error(ErrorCode::SelfLoop, "atom " + std::to_string(b.i));
    }
    if (static_cast<std::size_t>(b.type) >= kNumBondTypes) {
      throw Error(ErrorCode::InvalidArgument, "unknown bond type");
    }
    if (b.i > b.j) std::swap(b.i, b.j);
    if (!seen.emplace(b.i, b.j).second) {
      throw Error(ErrorCode::DuplicateBond,
                  "(" + std::to_string(b.i) + "," + std::to_string(b.j) + ")");
    }
  }

  MolGraph g;
  g.adjacency_.resize(atoms.size());
  for (const Bond &b : bonds) {
    g.adjacency_[b.i].push_back({b.j, b.type});
    g.adjacency_[b.j].push_back({b.i, b.type});
  }
  g.atoms_ = std::move(atoms);
  g.bonds_ = std::move(bonds);
  return g;
}

/// Relabels nodes so that old node i becomes node perm[i].
inline MolGraph permuted(const MolGraph &mol, std::span<const std::size_t> perm) {
  const std::size_t n = mol.num_atoms();
  if (perm.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "permutation size differs from atom count");
  }
  std::vector<Atom> atoms(n);
  std::vector<bool> hit(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (perm[i] >= n || hit[perm[i]]) {
      throw Error(ErrorCode::InvalidArgument, "not a permutation");
    }
    hit[perm[i]] = true;
    atoms[perm[i]] = mol.atom(i);
  }
  std::vector<Bond> bonds;
  bonds.reserve(mol.num_bonds());
  for (const Bond &b : mol.bonds()) bonds.push_back({perm[b.i], perm[b.j], b.type});
  return build(std::move(atoms), std::move(bonds));
}

/// Connected components as sorted node lists, ordered by their smallest node.
inline std::vector<std::vector<std::size_t>> connected_components(const MolGraph &mol) {
  const std::size_t n = mol.num_atoms();
  std::vector<int> comp(n, -1);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    const int id = static_cast<int>(out.size());
    out.emplace_back();
    std::vector<std::size_t> stack{s};
    comp[s] = id;
    while (!stack.empty()) {
      std::size_t u = stack.back();
      stack.pop_back();
      out.back().push_back(u);
      for (const auto &nb : mol.neighbors(u)) {
        if (comp[nb.atom] < 0) {
          comp[nb.atom] = id;
          stack.push_back(nb.atom);
        }
      }
    }
    std::sort(out.back().begin(), out.back().end());
  }
  return out;
}

inline bool is_connected(const MolGraph &mol) {
  return mol.num_atoms() > 0 && connected_components(mol).size() == 1;
}

/// Induced subgraph on `nodes`, renumbered in the given order.
inline MolGraph subgraph(const MolGraph &mol, std::span<const std::size_t> nodes) {
  std::vector<std::size_t> index(mol.num_atoms(), SIZE_MAX);
  std::vector<Atom> atoms;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    index.at(nodes[k]) = k;
    atoms.push_back(mol.atom(nodes[k]));
  }
  std::vector<Bond> bonds;
  for (const Bond &b : mol.bonds()) {
    if (index[b.i] != SIZE_MAX && index[b.j] != SIZE_MAX) {
      bonds.push_back({index[b.i], index[b.j], b.type});
    }
  }
  return build(std::move(atoms), std::move(bonds));
}

// ---------------------------------------------------------------------------
// Tensor views of a molecule

/// N x N x 4 one-hot bond tensor; slice r is the adjacency matrix of bond type r.
class AdjacencyTensor {
public:
  explicit AdjacencyTensor(std::size_t n)
      : n_(n), data_(n * n * kNumBondTypes, 0.0) {}

  std::size_t num_nodes() const noexcept { return n_; }

  double at(std::size_t i, std::size_t j, std::size_t r) const {
    return data_[(i * n_ + j) * kNumBondTypes + r];
  }
  double &at(std::size_t i, std::size_t j, std::size_t r) {
    return data_[(i * n_ + j) * kNumBondTypes + r];
  }

  /// Binary adjacency with bond types collapsed.
  bool bonded(std::size_t i, std::size_t j) const {
    double s = 0.0;
    for (std::size_t r = 0; r < kNumBondTypes; ++r) s += at(i, j, r);
    return s == 1.0;
  }

  std::size_t relation_edge_count(std::size_t r) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) c += at(i, j, r) != 0.0;
    return c;
  }

  /// Slice r with each row divided by its neighbor count (mean aggregation).
  /// Rows of nodes with no r-neighbors stay zero.
  Tensor mean_normalized(std::size_t r) const {
    Tensor out = Tensor::matrix(n_, n_);
    for (std::size_t i = 0; i < n_; ++i) {
      double deg = 0.0;
      for (std::size_t j = 0; j < n_; ++j) deg += at(i, j, r);
      if (deg == 0.0) continue;
      for (std::size_t j = 0; j < n_; ++j) out(i, j) = at(i, j, r) / deg;
    }
    return out;
  }

  Tensor as_tensor() const { return Tensor({n_, n_, kNumBondTypes}, data_); }

  std::span<const double> data() const noexcept { return data_; }

private:
  std::size_t n_;
  std::vector<double> data_;
};

inline AdjacencyTensor adjacency_tensor(const MolGraph &mol) {
  AdjacencyTensor a(mol.num_atoms());
  for (const Bond &b : mol.bonds()) {
    const auto r = static_cast<std::size_t>(b.type);
    a.at(b.i, b.j, r) = 1.0;
    a.at(b.j, b.i, r) = 1.0;
  }
  return a;
}

inline constexpr std::size_t kFeatureWidth = 32;

namespace feature_layout {
inline constexpr std::size_t kElementOffset = 0;
inline constexpr std::size_t kChargeOffset = 10;  // -1, 0, +1 (clamped)
inline constexpr std::size_t kHydrogenOffset = 13; // 0..4
inline constexpr std::size_t kDegreeOffset = 18;   // heavy degree 0..4 (clamped)
inline constexpr std::size_t kUsed = 23;
} // namespace feature_layout

/// N x 32 node feature matrix: four one-hot blocks (element, charge,
/// hydrogen count, heavy-atom degree) followed by zero padding.
inline Tensor node_features(const MolGraph &mol) {
  using namespace feature_layout;
  const std::size_t n = mol.num_atoms();
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "molecule has no atoms");
  Tensor h = Tensor::matrix(n, kFeatureWidth);
  for (std::size_t i = 0; i < n; ++i) {
    const Atom &a = mol.atom(i);
    h(i, kElementOffset + static_cast<std::size_t>(a.element)) = 1.0;
    const int charge = std::clamp(a.formal_charge, -1, 1);
    h(i, kChargeOffset + static_cast<std::size_t>(charge + 1)) = 1.0;
    h(i, kHydrogenOffset + static_cast<std::size_t>(std::clamp(a.implicit_h, 0, 4))) = 1.0;
    const std::size_t deg = std::min<std::size_t>(mol.heavy_degree(i), 4);
    h(i, kDegreeOffset + deg) = 1.0;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Valence

/// Allowed total valences for an element at a formal charge. Charge shifts the
/// set only for N and O; any other charged atom has no allowed valence.
inline std::vector<int> allowed_valences(Element e, int charge) {
  std::vector<int> base;
  switch (e) {
  case Element::H: base = {1}; break;
  case Element::C: base = {4}; break;
  case Element::N: base = {3}; break;
  case Element::O: base = {2}; break;
  case Element::F: base = {1}; break;
  case Element::P: base = {3, 5}; break;
  case Element::S: base = {2, 4, 6}; break;
  case Element::Cl: base = {1}; break;
  case Element::Br: base = {1}; break;
  case Element::I: base = {1}; break;
  }
  if (charge == 0) return base;
  if (e != Element::N && e != Element::O) return {};
  std::vector<int> shifted;
  for (int v : base) {
    if (v + charge >= 0) shifted.push_back(v + charge);
  }
  return shifted;
}

/// Bond valence at atom i with half-integral (aromatic) sums rounded up.
inline int rounded_bond_valence(const MolGraph &mol, std::size_t i) {
  return static_cast<int>(std::ceil(mol.bond_order_sum(i)));
}

/// Smallest hydrogen count that makes the atom valence-valid, if any.
inline std::optional<int> lowest_valid_hydrogens(Element e, int charge, int bond_valence) {
  for (int v : allowed_valences(e, charge)) {
    if (v >= bond_valence && v - bond_valence <= kMaxImplicitH) return v - bond_valence;
  }
  return std::nullopt;
}

struct ValidityReport {
  bool valid = true;
  std::vector<std::size_t> offending;
};

inline bool atom_valence_ok(const MolGraph &mol, std::size_t i) {
  const Atom &a = mol.atom(i);
  const int total = rounded_bond_valence(mol, i) + a.implicit_h;
  const auto allowed = allowed_valences(a.element, a.formal_charge);
  return std::find(allowed.begin(), allowed.end(), total) != allowed.end();
}

inline ValidityReport check_valence(const MolGraph &mol) {
  ValidityReport report;
  for (std::size_t i = 0; i < mol.num_atoms(); ++i) {
    if (!atom_valence_ok(mol, i)) report.offending.push_back(i);
  }
  report.valid = report.offending.empty();
  return report;
}

// ---------------------------------------------------------------------------
// Isomorphism

namespace detail {

struct IsoState {
  const MolGraph &a;
  const MolGraph &b;
  std::vector<std::size_t> order;    // a-nodes in matching order
  std::vector<std::size_t> a_to_b;
  std::vector<bool> b_used;
  std::vector<std::array<std::size_t, kNumBondTypes>> a_bond_counts;
  std::vector<std::array<std::size_t, kNumBondTypes>> b_bond_counts;

  static constexpr std::size_t kUnmapped = SIZE_MAX;

  bool compatible(std::size_t u, std::size_t v) const {
    return a.atom(u) == b.atom(v) && a_bond_counts[u] == b_bond_counts[v];
  }

  bool feasible(std::size_t u, std::size_t v) const {
    // Every mapped neighbor of u must map to a neighbor of v with the same
    // bond type; degree equality then rules out extra edges at v.
    std::size_t mapped_nbrs = 0;
    for (const auto &nb : a.neighbors(u)) {
      const std::size_t w = a_to_b[nb.atom];
      if (w == kUnmapped) continue;
      ++mapped_nbrs;
      auto t = b.bond_between(v, w);
      if (!t || *t != nb.type) return false;
    }
    std::size_t v_mapped_nbrs = 0;
    for (const auto &nb : b.neighbors(v)) {
      if (b_used[nb.atom]) ++v_mapped_nbrs;
    }
    return mapped_nbrs == v_mapped_nbrs;
  }

  bool search(std::size_t depth) {
    if (depth == order.size()) return true;
    const std::size_t u = order[depth];
    for (std::size_t v = 0; v < b.num_atoms(); ++v) {
      if (b_used[v] || !compatible(u, v) || !feasible(u, v)) continue;
      a_to_b[u] = v;
      b_used[v] = true;
      if (search(depth + 1)) return true;
      a_to_b[u] = kUnmapped;
      b_used[v] = false;
    }
    return false;
  }
};

inline std::vector<std::array<std::size_t, kNumBondTypes>> bond_type_counts(const MolGraph &m) {
  std::vector<std::array<std::size_t, kNumBondTypes>> out(m.num_atoms());
  for (std::size_t i = 0; i < m.num_atoms(); ++i) {
    out[i].fill(0);
    for (const auto &nb : m.neighbors(i)) ++out[i][static_cast<std::size_t>(nb.type)];
  }
  return out;
}

} // namespace detail

/// Label-preserving isomorphism test (element, charge, hydrogen count and
/// bond type). Backtracking over a BFS ordering of `a` so that each newly
/// placed node is usually adjacent to an already mapped one.
inline bool is_isomorphic(const MolGraph &a, const MolGraph &b) {
  if (a.num_atoms() != b.num_atoms() || a.num_bonds() != b.num_bonds()) return false;
  if (a.num_atoms() > 64 || b.num_atoms() > 64) {
    throw Error(ErrorCode::InvalidArgument, "isomorphism test limited to 64 atoms");
  }

  auto label_multiset = [](const MolGraph &m,
                           const std::vector<std::array<std::size_t, kNumBondTypes>> &counts) {
    std::vector<std::tuple<int, int, int, std::array<std::size_t, kNumBondTypes>>> labels;
    for (std::size_t i = 0; i < m.num_atoms(); ++i) {
      const Atom &at = m.atom(i);
      labels.emplace_back(static_cast<int>(at.element), at.formal_charge, at.implicit_h,
                          counts[i]);
    }
    std::sort(labels.begin(), labels.end());
    return labels;
  };

  detail::IsoState st{a, b, {}, {}, {}, detail::bond_type_counts(a), detail::bond_type_counts(b)};
  if (label_multiset(a, st.a_bond_counts) != label_multiset(b, st.b_bond_counts)) return false;

  const std::size_t n = a.num_atoms();
  std::vector<bool> queued(n, false);
  for (std::size_t s = 0; s < n; ++s) {
    if (queued[s]) continue;
    std::size_t head = st.order.size();
    st.order.push_back(s);
    queued[s] = true;
    while (head < st.order.size()) {
      const std::size_t u = st.order[head++];
      for (const auto &nb : a.neighbors(u)) {
        if (!queued[nb.atom]) {
          queued[nb.atom] = true;
          st.order.push_back(nb.atom);
        }
      }
    }
  }
  st.a_to_b.assign(n, detail::IsoState::kUnmapped);
  st.b_used.assign(n, false);
  return st.search(0);
}

} // namespace gvae
