// SPDX-License-Identifier: Apache-2.0
//
// SMILES subset reader and writer.
//
// Supported: organic-subset atoms (C N O F P S Cl Br I and aromatic c n o s p),
// bracket atoms [isotope? symbol chirality? Hn? charge?], bonds - = # :,
// branches, ring closures 1-9 and %nn. Stereo marks (/ \ @) and isotopes are
// accepted and dropped; each one bumps ParsedSmiles::stripped. Dots are
// rejected because the model handles single connected molecules only.
#pragma once

#include <array>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gvae/chem.hpp"
#include "gvae/error.hpp"

namespace gvae {

enum class TokenKind { OrganicAtom, BracketAtom, Bond, RingClosure, BranchOpen, BranchClose, Dot };

struct SmilesToken {
  TokenKind kind = TokenKind::OrganicAtom;
  std::size_t position = 0;
  // OrganicAtom / BracketAtom
  Element element = Element::C;
  bool aromatic = false;
  int charge = 0;
  int hydrogens = 0;
  // Bond
  std::optional<BondType> bond{}; // empty for stereo '/' and '\'
  // RingClosure
  int ring = 0;
  // count of stripped stereo / isotope marks carried by this token
  int stripped = 0;
};

namespace detail {

inline Error smiles_error(ErrorCode code, std::string_view what, std::size_t pos) {
  return Error(code, std::string(what) + " at position " + std::to_string(pos));
}

inline bool aromatic_capable(Element e) {
  return e == Element::C || e == Element::N || e == Element::O || e == Element::S ||
         e == Element::P;
}

inline SmilesToken read_bracket_atom(std::string_view s, std::size_t &pos) {
  const std::size_t start = pos;
  SmilesToken tok{TokenKind::BracketAtom, start};
  ++pos; // '['
  auto at_end = [&] { return pos >= s.size(); };

  if (!at_end() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
    while (!at_end() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    ++tok.stripped; // isotope
  }
  if (at_end()) throw smiles_error(ErrorCode::UnknownSymbol, "unterminated bracket atom", start);

  const char c = s[pos];
  if (std::islower(static_cast<unsigned char>(c))) {
    auto e = element_from_symbol(std::string(1, static_cast<char>(std::toupper(c))));
    if (!e || !aromatic_capable(*e)) {
      throw smiles_error(ErrorCode::UnknownSymbol, "unknown aromatic symbol", pos);
    }
    tok.element = *e;
    tok.aromatic = true;
    ++pos;
  } else if (std::isupper(static_cast<unsigned char>(c))) {
    std::optional<Element> e;
    if (pos + 1 < s.size() && std::islower(static_cast<unsigned char>(s[pos + 1]))) {
      e = element_from_symbol(s.substr(pos, 2));
      if (e) pos += 2;
    }
    if (!e) {
      e = element_from_symbol(s.substr(pos, 1));
      if (!e) throw smiles_error(ErrorCode::UnknownSymbol, "unknown element", pos);
      ++pos;
    }
    tok.element = *e;
  } else {
    throw smiles_error(ErrorCode::UnknownSymbol, "expected element symbol", pos);
  }

  if (!at_end() && s[pos] == '@') {
    while (!at_end() && s[pos] == '@') ++pos;
    ++tok.stripped; // chirality
  }
  if (!at_end() && s[pos] == 'H') {
    ++pos;
    tok.hydrogens = 1;
    if (!at_end() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      tok.hydrogens = s[pos] - '0';
      ++pos;
    }
  }
  if (!at_end() && (s[pos] == '+' || s[pos] == '-')) {
    const char sign = s[pos];
    const int unit = sign == '+' ? 1 : -1;
    ++pos;
    if (!at_end() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      tok.charge = unit * (s[pos] - '0');
      ++pos;
    } else {
      tok.charge = unit;
      while (!at_end() && s[pos] == sign) {
        tok.charge += unit;
        ++pos;
      }
    }
    if (tok.charge < kMinCharge || tok.charge > kMaxCharge) {
      throw smiles_error(ErrorCode::UnknownSymbol, "charge outside [-2,2]", start);
    }
  }
  if (at_end() || s[pos] != ']') {
    throw smiles_error(ErrorCode::UnknownSymbol, "malformed bracket atom", start);
  }
  ++pos;
  return tok;
}

} // namespace detail

/// Splits a SMILES string into tokens. Throws UnknownSymbol on anything
/// outside the supported grammar.
inline std::vector<SmilesToken> tokenize_smiles(std::string_view s) {
  std::vector<SmilesToken> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const char c = s[pos];
    const std::size_t start = pos;
    switch (c) {
    case '[':
      out.push_back(detail::read_bracket_atom(s, pos));
      continue;
    case '(':
      out.push_back({TokenKind::BranchOpen, start});
      ++pos;
      continue;
    case ')':
      out.push_back({TokenKind::BranchClose, start});
      ++pos;
      continue;
    case '.':
      out.push_back({TokenKind::Dot, start});
      ++pos;
      continue;
    case '-':
    case '=':
    case '#':
    case ':':
    case '/':
    case '\\': {
      SmilesToken tok{TokenKind::Bond, start};
      switch (c) {
      case '-': tok.bond = BondType::Single; break;
      case '=': tok.bond = BondType::Double; break;
      case '#': tok.bond = BondType::Triple; break;
      case ':': tok.bond = BondType::Aromatic; break;
      default: tok.stripped = 1; break;
      }
      out.push_back(tok);
      ++pos;
      continue;
    }
    case '%': {
      if (pos + 2 >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos + 1])) ||
          !std::isdigit(static_cast<unsigned char>(s[pos + 2]))) {
        throw detail::smiles_error(ErrorCode::UnknownSymbol, "malformed %nn ring closure", start);
      }
      SmilesToken tok{TokenKind::RingClosure, start};
      tok.ring = (s[pos + 1] - '0') * 10 + (s[pos + 2] - '0');
      out.push_back(tok);
      pos += 3;
      continue;
    }
    default:
      break;
    }

    if (std::isdigit(static_cast<unsigned char>(c))) {
      SmilesToken tok{TokenKind::RingClosure, start};
      tok.ring = c - '0';
      out.push_back(tok);
      ++pos;
      continue;
    }

    SmilesToken tok{TokenKind::OrganicAtom, start};
    if (c == 'C' && pos + 1 < s.size() && s[pos + 1] == 'l') {
      tok.element = Element::Cl;
      pos += 2;
    } else if (c == 'B' && pos + 1 < s.size() && s[pos + 1] == 'r') {
      tok.element = Element::Br;
      pos += 2;
    } else {
      switch (c) {
      case 'C': tok.element = Element::C; break;
      case 'N': tok.element = Element::N; break;
      case 'O': tok.element = Element::O; break;
      case 'F': tok.element = Element::F; break;
      case 'P': tok.element = Element::P; break;
      case 'S': tok.element = Element::S; break;
      case 'I': tok.element = Element::I; break;
      case 'c': tok.element = Element::C; tok.aromatic = true; break;
      case 'n': tok.element = Element::N; tok.aromatic = true; break;
      case 'o': tok.element = Element::O; tok.aromatic = true; break;
      case 's': tok.element = Element::S; tok.aromatic = true; break;
      case 'p': tok.element = Element::P; tok.aromatic = true; break;
      default:
        throw detail::smiles_error(ErrorCode::UnknownSymbol,
                                   std::string("unexpected character '") + c + "'", start);
      }
      ++pos;
    }
    out.push_back(tok);
  }
  return out;
}

struct ParsedSmiles {
  MolGraph mol;
  std::size_t stripped = 0; // stereo and isotope marks discarded
};

/// Parses a SMILES string into a molecular graph. Unbracketed atoms receive
/// the lowest hydrogen count that satisfies their valence (zero if none does,
/// leaving the atom for check_valence to flag).
inline ParsedSmiles parse_smiles_detailed(std::string_view text) {
  if (text.empty()) throw Error(ErrorCode::EmptyInput, "empty SMILES");
  const auto tokens = tokenize_smiles(text);

  struct PendingAtom {
    Atom atom;
    bool aromatic;
    bool bracket;
  };
  struct OpenRing {
    std::size_t atom;
    std::optional<BondType> bond;
    std::size_t position;
  };

  std::vector<PendingAtom> atoms;
  std::vector<Bond> bonds;
  std::vector<std::size_t> branch_stack;
  std::map<int, OpenRing> rings;
  std::optional<std::size_t> prev;
  std::optional<BondType> pending_bond;
  bool bond_pending = false;
  std::size_t bond_position = 0;
  ParsedSmiles result;

  auto default_bond = [&](std::size_t a, std::size_t b) {
    return atoms[a].aromatic && atoms[b].aromatic ? BondType::Aromatic : BondType::Single;
  };
  auto take_bond = [&](std::size_t a, std::size_t b) {
    const BondType t = pending_bond.value_or(default_bond(a, b));
    pending_bond.reset();
    bond_pending = false;
    return t;
  };

  for (const SmilesToken &tok : tokens) {
    result.stripped += static_cast<std::size_t>(tok.stripped);
    switch (tok.kind) {
    case TokenKind::OrganicAtom:
    case TokenKind::BracketAtom: {
      const std::size_t idx = atoms.size();
      Atom a{tok.element, tok.charge, tok.hydrogens};
      atoms.push_back({a, tok.aromatic, tok.kind == TokenKind::BracketAtom});
      if (prev) {
        bonds.push_back({*prev, idx, take_bond(*prev, idx)});
      } else if (bond_pending) {
        throw detail::smiles_error(ErrorCode::DanglingBond, "bond without a preceding atom",
                                   bond_position);
      }
      prev = idx;
      break;
    }
    case TokenKind::Bond:
      if (bond_pending) {
        throw detail::smiles_error(ErrorCode::DanglingBond, "consecutive bond symbols",
                                   tok.position);
      }
      bond_pending = true;
      bond_position = tok.position;
      pending_bond = tok.bond;
      break;
    case TokenKind::BranchOpen:
      if (!prev) {
        throw detail::smiles_error(ErrorCode::UnbalancedParenthesis, "branch before any atom",
                                   tok.position);
      }
      if (bond_pending) {
        throw detail::smiles_error(ErrorCode::DanglingBond, "bond before branch", bond_position);
      }
      branch_stack.push_back(*prev);
      break;
    case TokenKind::BranchClose:
      if (branch_stack.empty()) {
        throw detail::smiles_error(ErrorCode::UnbalancedParenthesis, "unmatched ')'",
                                   tok.position);
      }
      if (bond_pending) {
        throw detail::smiles_error(ErrorCode::DanglingBond, "bond before ')'", bond_position);
      }
      prev = branch_stack.back();
      branch_stack.pop_back();
      break;
    case TokenKind::RingClosure: {
      if (!prev) {
        throw detail::smiles_error(ErrorCode::UnknownSymbol, "ring closure before any atom",
                                   tok.position);
      }
      auto it = rings.find(tok.ring);
      if (it == rings.end()) {
        rings.emplace(tok.ring, OpenRing{*prev, pending_bond, tok.position});
        pending_bond.reset();
        bond_pending = false;
      } else {
        const OpenRing open = it->second;
        rings.erase(it);
        if (open.bond && pending_bond && *open.bond != *pending_bond) {
          throw detail::smiles_error(ErrorCode::InvalidRingBond,
                                     "ring closure " + std::to_string(tok.ring) +
                                         " has conflicting bond symbols",
                                     tok.position);
        }
        if (open.bond && !pending_bond) pending_bond = open.bond;
        bonds.push_back({open.atom, *prev, take_bond(open.atom, *prev)});
      }
      break;
    }
    case TokenKind::Dot:
      throw detail::smiles_error(ErrorCode::DisconnectedInput,
                                 "multi-fragment input is not supported", tok.position);
    }
  }

  if (!branch_stack.empty()) {
    throw Error(ErrorCode::UnbalancedParenthesis, "unclosed '(' at end of input");
  }
  if (!rings.empty()) {
    throw detail::smiles_error(ErrorCode::UnclosedRing,
                               "ring " + std::to_string(rings.begin()->first) + " never closed",
                               rings.begin()->second.position);
  }
  if (bond_pending) {
    throw detail::smiles_error(ErrorCode::DanglingBond, "trailing bond", bond_position);
  }
  if (atoms.empty()) throw Error(ErrorCode::EmptyInput, "no atoms in SMILES");

  // Bond valence per atom, used to fill implicit hydrogens.
  std::vector<double> valence(atoms.size(), 0.0);
  for (const Bond &b : bonds) {
    valence[b.i] += valence_weight(b.type);
    valence[b.j] += valence_weight(b.type);
  }
  std::vector<Atom> final_atoms;
  final_atoms.reserve(atoms.size());
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    Atom a = atoms[k].atom;
    if (!atoms[k].bracket) {
      const int v = static_cast<int>(std::ceil(valence[k]));
      a.implicit_h = lowest_valid_hydrogens(a.element, 0, v).value_or(0);
    }
    final_atoms.push_back(a);
  }
  result.mol = build(std::move(final_atoms), std::move(bonds));
  return result;
}

inline MolGraph parse_smiles(std::string_view text) { return parse_smiles_detailed(text).mol; }

// ---------------------------------------------------------------------------
// Writer

namespace detail {

inline bool organic_subset(Element e) { return e != Element::H; }

inline bool written_aromatic(const MolGraph &mol, std::size_t i) {
  return aromatic_capable(mol.atom(i).element) && mol.is_aromatic(i);
}

inline bool needs_brackets(const MolGraph &mol, std::size_t i) {
  const Atom &a = mol.atom(i);
  if (!organic_subset(a.element) || a.formal_charge != 0) return true;
  const int inferred =
      lowest_valid_hydrogens(a.element, 0, rounded_bond_valence(mol, i)).value_or(0);
  return inferred != a.implicit_h;
}

inline std::string atom_text(const MolGraph &mol, std::size_t i) {
  const Atom &a = mol.atom(i);
  std::string sym(symbol(a.element));
  if (written_aromatic(mol, i)) sym[0] = static_cast<char>(std::tolower(sym[0]));
  if (!needs_brackets(mol, i)) return sym;
  std::string out = "[" + sym;
  if (a.implicit_h > 0) {
    out += 'H';
    if (a.implicit_h > 1) out += std::to_string(a.implicit_h);
  }
  if (a.formal_charge != 0) {
    out += a.formal_charge > 0 ? '+' : '-';
    if (std::abs(a.formal_charge) > 1) out += std::to_string(std::abs(a.formal_charge));
  }
  return out + "]";
}

inline std::string bond_text(const MolGraph &mol, std::size_t a, std::size_t b, BondType t) {
  const BondType implied = written_aromatic(mol, a) && written_aromatic(mol, b)
                               ? BondType::Aromatic
                               : BondType::Single;
  return t == implied ? std::string() : std::string(1, bond_char(t));
}

inline std::string ring_label(int digit) {
  return digit < 10 ? std::to_string(digit) : "%" + std::to_string(digit);
}

} // namespace detail

/// Depth-first SMILES starting at node 0; neighbors are visited in bond
/// insertion order and ring-closure digits take the lowest free number when
/// opened. Deterministic but not canonical.
inline std::string write_smiles(const MolGraph &mol) {
  const std::size_t n = mol.num_atoms();
  if (n == 0) throw Error(ErrorCode::EmptyInput, "molecule has no atoms");
  if (!is_connected(mol)) throw Error(ErrorCode::Disconnected, "molecule is disconnected");

  constexpr std::size_t kNone = SIZE_MAX;
  std::vector<std::size_t> parent(n, kNone), order;
  std::vector<std::vector<std::size_t>> children(n);
  std::vector<bool> seen(n, false);
  // Iterative DFS reproducing recursive visit order.
  struct Frame {
    std::size_t atom;
    std::size_t next;
  };
  std::vector<Frame> stack{{0, 0}};
  seen[0] = true;
  order.push_back(0);
  while (!stack.empty()) {
    Frame &f = stack.back();
    const auto nbrs = mol.neighbors(f.atom);
    if (f.next == nbrs.size()) {
      stack.pop_back();
      continue;
    }
    const std::size_t v = nbrs[f.next++].atom;
    if (seen[v]) continue;
    seen[v] = true;
    parent[v] = f.atom;
    children[f.atom].push_back(v);
    order.push_back(v);
    stack.push_back({v, 0});
  }
  std::vector<std::size_t> rank(n);
  for (std::size_t k = 0; k < n; ++k) rank[order[k]] = k;

  // Non-tree edges open at the earlier atom and close at the later one.
  struct RingEdge {
    std::size_t other;
    BondType type;
  };
  std::vector<std::vector<RingEdge>> opens(n), closes(n);
  for (const Bond &b : mol.bonds()) {
    if (parent[b.i] == b.j || parent[b.j] == b.i) continue;
    const std::size_t first = rank[b.i] < rank[b.j] ? b.i : b.j;
    const std::size_t second = first == b.i ? b.j : b.i;
    opens[first].push_back({second, b.type});
    closes[second].push_back({first, b.type});
  }
  for (auto &v : opens)
    std::sort(v.begin(), v.end(), [&](auto x, auto y) { return rank[x.other] < rank[y.other]; });
  for (auto &v : closes)
    std::sort(v.begin(), v.end(), [&](auto x, auto y) { return rank[x.other] < rank[y.other]; });

  std::map<std::pair<std::size_t, std::size_t>, int> ring_digit;
  std::vector<bool> digit_used(100, false);
  std::string out;

  std::vector<std::pair<std::size_t, std::size_t>> work; // (atom, child index) emission stack
  auto emit_atom = [&](std::size_t a) {
    out += detail::atom_text(mol, a);
    for (const RingEdge &e : closes[a]) {
      const auto key = std::make_pair(e.other, a);
      const int d = ring_digit.at(key);
      digit_used[static_cast<std::size_t>(d)] = false;
      out += detail::ring_label(d);
    }
    for (const RingEdge &e : opens[a]) {
      int d = 1;
      while (d < 100 && digit_used[static_cast<std::size_t>(d)]) ++d;
      if (d == 100) throw Error(ErrorCode::InvalidArgument, "too many open rings");
      digit_used[static_cast<std::size_t>(d)] = true;
      ring_digit[{a, e.other}] = d;
      out += detail::bond_text(mol, a, e.other, e.type) + detail::ring_label(d);
    }
  };

  emit_atom(0);
  work.emplace_back(0, 0);
  while (!work.empty()) {
    auto &[a, idx] = work.back();
    if (idx == children[a].size()) {
      const std::size_t done = a;
      work.pop_back();
      // close the parenthesis opened for `done` unless it was the last child
      if (!work.empty()) {
        const auto &[pa, pidx] = work.back();
        if (pidx < children[pa].size()) out += ')';
      }
      (void)done;
      continue;
    }
    const std::size_t child = children[a][idx++];
    const bool last = idx == children[a].size();
    if (!last) out += '(';
    out += detail::bond_text(mol, a, child, *mol.bond_between(a, child));
    emit_atom(child);
    work.emplace_back(child, 0);
  }
  return out;
}

/// Connected components written separately and joined with '.', each
/// starting from its lowest-numbered atom.
inline std::string write_smiles_fragments(const MolGraph &mol) {
  if (mol.num_atoms() == 0) throw Error(ErrorCode::EmptyInput, "molecule has no atoms");
  std::string out;
  for (const auto &comp : connected_components(mol)) {
    if (!out.empty()) out += '.';
    out += write_smiles(subgraph(mol, comp));
  }
  return out;
}

} // namespace gvae
