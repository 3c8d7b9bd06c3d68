// SPDX-License-Identifier: Apache-2.0
//
// Path fingerprints, bit-set similarity metrics and the latent similarity
// built on the pooled embedding.
#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gvae/chem.hpp"
#include "gvae/encoder.hpp"

namespace gvae {

struct FpConfig {
  std::size_t min_path = 1;
  std::size_t max_path = 7;
  std::size_t bits_per_hash = 2;
  std::size_t nbits = 2048;
  /// Stored for reference only; the fingerprint length is fixed, so the
  /// achieved density is reported instead of targeted.
  double target_density = 0.3;
};

inline void validate(const FpConfig &cfg) {
  if (cfg.min_path < 1 || cfg.max_path < cfg.min_path) {
    throw Error(ErrorCode::InvalidArgument, "path lengths need 1 <= min_path <= max_path");
  }
  if (cfg.bits_per_hash < 1) throw Error(ErrorCode::InvalidArgument, "bits_per_hash must be >= 1");
  if (cfg.nbits < 4 || cfg.nbits % 4 != 0) {
    throw Error(ErrorCode::InvalidArgument, "nbits must be a positive multiple of 4");
  }
}

/// A trail through the molecule: atoms[k] and atoms[k+1] are joined by
/// bonds[k]. No bond repeats; atoms may (ring closures).
struct BondPath {
  std::vector<std::size_t> atoms;
  std::vector<BondType> bonds;

  std::size_t length() const noexcept { return bonds.size(); }
};

/// Every trail of min_len..max_len bonds, one entry per trail regardless of
/// direction.
inline std::vector<BondPath> enumerate_paths(const MolGraph &mol, std::size_t min_len,
                                             std::size_t max_len) {
  if (min_len < 1 || max_len < min_len) {
    throw Error(ErrorCode::InvalidArgument, "path lengths need 1 <= min_len <= max_len");
  }
  std::vector<BondPath> out;
  BondPath cur;
  std::vector<std::pair<std::size_t, std::size_t>> used;

  auto bond_used = [&](std::size_t a, std::size_t b) {
    const auto key = std::minmax(a, b);
    return std::find(used.begin(), used.end(), std::pair(key.first, key.second)) != used.end();
  };

  auto emit = [&] {
    // Atom sequences identify trails (no multi-bonds) and are never
    // palindromes (that would reuse a bond), so keep the smaller direction.
    if (std::lexicographical_compare(cur.atoms.begin(), cur.atoms.end(), cur.atoms.rbegin(),
                                     cur.atoms.rend())) {
      out.push_back(cur);
    }
  };

  auto extend = [&](auto &self) -> void {
    if (cur.length() >= min_len) emit();
    if (cur.length() == max_len) return;
    const std::size_t tail = cur.atoms.back();
    for (const Neighbor &nb : mol.neighbors(tail)) {
      if (bond_used(tail, nb.atom)) continue;
      const auto key = std::minmax(tail, nb.atom);
      used.emplace_back(key.first, key.second);
      cur.atoms.push_back(nb.atom);
      cur.bonds.push_back(nb.type);
      self(self);
      cur.atoms.pop_back();
      cur.bonds.pop_back();
      used.pop_back();
    }
  };

  for (std::size_t start = 0; start < mol.num_atoms(); ++start) {
    cur.atoms.assign(1, start);
    cur.bonds.clear();
    extend(extend);
  }
  return out;
}

namespace detail {

inline std::string path_atom_text(const MolGraph &mol, std::size_t i) {
  std::string s(symbol(mol.atom(i).element));
  if (mol.is_aromatic(i)) {
    for (char &c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return s;
}

} // namespace detail

/// Alternating atom symbol / bond character rendering, read in whichever
/// direction sorts first. Aromatic atoms are lower case.
inline std::string canonical_path_key(const MolGraph &mol, const BondPath &path) {
  auto render = [&](bool reversed) {
    const std::size_t n = path.atoms.size();
    std::string s;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t a = reversed ? n - 1 - k : k;
      if (k > 0) s += bond_char(path.bonds[reversed ? a : a - 1]);
      s += detail::path_atom_text(mol, path.atoms[a]);
    }
    return s;
  };
  return std::min(render(false), render(true));
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// splitmix64 generator.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

private:
  std::uint64_t state_;
};

class Fingerprint {
public:
  explicit Fingerprint(std::size_t nbits = 2048) : nbits_(nbits), words_((nbits + 63) / 64, 0) {}

  static Fingerprint from_positions(std::size_t nbits, const std::vector<std::size_t> &on) {
    Fingerprint fp(nbits);
    for (std::size_t b : on) fp.set(b);
    return fp;
  }

  std::size_t nbits() const noexcept { return nbits_; }

  void set(std::size_t b) {
    if (b >= nbits_) throw Error(ErrorCode::IndexOutOfRange, "bit " + std::to_string(b));
    words_[b / 64] |= std::uint64_t{1} << (b % 64);
  }

  bool test(std::size_t b) const {
    if (b >= nbits_) throw Error(ErrorCode::IndexOutOfRange, "bit " + std::to_string(b));
    return (words_[b / 64] >> (b % 64)) & 1U;
  }

  std::size_t on_count() const {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  double density() const { return static_cast<double>(on_count()) / static_cast<double>(nbits_); }

  std::vector<std::size_t> on_bits() const {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < nbits_; ++b)
      if (test(b)) out.push_back(b);
    return out;
  }

  /// nbits/4 hex digits; bit 0 is the most significant bit of the first.
  std::string to_hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s;
    s.reserve(nbits_ / 4);
    for (std::size_t k = 0; k < nbits_ / 4; ++k) {
      unsigned v = 0;
      for (std::size_t b = 0; b < 4; ++b) v = (v << 1) | (test(4 * k + b) ? 1U : 0U);
      s += kDigits[v];
    }
    return s;
  }

  static Fingerprint from_hex(std::string_view hex) {
    Fingerprint fp(hex.size() * 4);
    for (std::size_t k = 0; k < hex.size(); ++k) {
      const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(hex[k])));
      unsigned v;
      if (c >= '0' && c <= '9') v = static_cast<unsigned>(c - '0');
      else if (c >= 'a' && c <= 'f') v = static_cast<unsigned>(c - 'a' + 10);
      else throw Error(ErrorCode::InvalidArgument, "bad hex digit in fingerprint");
      for (std::size_t b = 0; b < 4; ++b)
        if (v & (8U >> b)) fp.set(4 * k + b);
    }
    return fp;
  }

  std::size_t intersection_count(const Fingerprint &o) const {
    check_length(o);
    std::size_t c = 0;
    for (std::size_t k = 0; k < words_.size(); ++k)
      c += static_cast<std::size_t>(std::popcount(words_[k] & o.words_[k]));
    return c;
  }

  friend bool operator==(const Fingerprint &, const Fingerprint &) = default;

private:
  void check_length(const Fingerprint &o) const {
    if (o.nbits_ != nbits_) {
      throw Error(ErrorCode::LengthMismatch, "fingerprint lengths " + std::to_string(nbits_) +
                                                 " and " + std::to_string(o.nbits_));
    }
  }

  std::size_t nbits_;
  std::vector<std::uint64_t> words_;
};

/// Sets bits_per_hash positions per distinct path key, drawn by splitmix64
/// seeded with the key's FNV-1a hash.
inline Fingerprint path_fingerprint(const MolGraph &mol, const FpConfig &cfg = {}) {
  validate(cfg);
  Fingerprint fp(cfg.nbits);
  std::vector<std::string> keys;
  for (const BondPath &p : enumerate_paths(mol, cfg.min_path, cfg.max_path)) {
    keys.push_back(canonical_path_key(mol, p));
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  for (const std::string &key : keys) {
    SplitMix64 gen(fnv1a64(key));
    for (std::size_t k = 0; k < cfg.bits_per_hash; ++k) fp.set(gen.next() % cfg.nbits);
  }
  return fp;
}

namespace detail {

struct Counts {
  double c, na, nb;
};

inline Counts counts(const Fingerprint &a, const Fingerprint &b) {
  const double c = static_cast<double>(a.intersection_count(b));
  return {c, static_cast<double>(a.on_count()), static_cast<double>(b.on_count())};
}

} // namespace detail

// Both empty -> 1, exactly one empty -> 0.

inline double tanimoto(const Fingerprint &a, const Fingerprint &b) {
  const auto [c, na, nb] = detail::counts(a, b);
  if (na == 0 && nb == 0) return 1.0;
  if (na == 0 || nb == 0) return 0.0;
  return c / (na + nb - c);
}

inline double dice(const Fingerprint &a, const Fingerprint &b) {
  const auto [c, na, nb] = detail::counts(a, b);
  if (na == 0 && nb == 0) return 1.0;
  if (na == 0 || nb == 0) return 0.0;
  return 2.0 * c / (na + nb);
}

inline double cosine(const Fingerprint &a, const Fingerprint &b) {
  const auto [c, na, nb] = detail::counts(a, b);
  if (na == 0 && nb == 0) return 1.0;
  if (na == 0 || nb == 0) return 0.0;
  return c / std::sqrt(na * nb);
}

/// Pooled embedding scaled to unit Euclidean norm.
inline std::vector<double> normalized_embedding(const MolGraph &mol, const ParamStore &params) {
  Tensor g = pooled_embedding(mol, params);
  double norm = 0.0;
  for (double v : g.values()) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw Error(ErrorCode::ZeroVector, "pooled embedding has zero norm");
  std::vector<double> out(g.values().begin(), g.values().end());
  for (double &v : out) v /= norm;
  return out;
}

/// 1 / (1 + ||g1/|g1| - g2/|g2|||) on the deterministic pooled embeddings.
inline double latent_similarity(const MolGraph &a, const MolGraph &b, const ParamStore &params) {
  const auto ga = normalized_embedding(a, params);
  const auto gb = normalized_embedding(b, params);
  double d2 = 0.0;
  for (std::size_t k = 0; k < ga.size(); ++k) d2 += (ga[k] - gb[k]) * (ga[k] - gb[k]);
  return 1.0 / (1.0 + std::sqrt(d2));
}

} // namespace gvae
