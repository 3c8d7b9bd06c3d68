// SPDX-License-Identifier: Apache-2.0
//
// CSV / .smi ingestion and JSON checkpoints.
#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvae/dataset.hpp"
#include "gvae/smiles.hpp"
#include "gvae/train.hpp"

namespace gvae {

struct ReferenceDrug {
  std::string_view name;
  std::string_view smiles;
};

/// Aspirin and the four comparison drugs (PubChem canonical SMILES).
inline constexpr std::array<ReferenceDrug, 5> kReferenceDrugs = {{
    {"Aspirin", "CC(=O)OC1=CC=CC=C1C(=O)O"},
    {"Amphetamine", "CC(CC1=CC=CC=C1)N"},
    {"MDMA", "CC(CC1=CC2=C(C=C1)OCO2)NC"},
    {"Caffeine", "CN1C=NC2=C1C(=O)N(C(=O)N2C)C"},
    {"Nicotine", "CN1CCCC1C2=CN=CC=C2"},
}};

inline const ReferenceDrug &reference_drug(std::string_view name) {
  for (const auto &d : kReferenceDrugs)
    if (d.name == name) return d;
  throw Error(ErrorCode::InvalidArgument, "unknown reference drug '" + std::string(name) + "'");
}

namespace skip {
inline const std::string kParse = "parse_error";
inline const std::string kOversize = "oversize";
inline const std::string kBadRow = "bad_row";
} // namespace skip

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

inline bool parse_double(std::string_view s, double &out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::ifstream open_input(const std::string &path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::FileNotFound, path);
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return in;
}

/// Adds the molecule or records why it was skipped.
inline void ingest(Dataset &ds, std::string_view smiles, std::size_t max_atoms,
                   std::map<std::string, double> props) {
  MolGraph mol;
  try {
    mol = parse_smiles(smiles);
  } catch (const Error &) {
    ++ds.skipped_count;
    ++ds.skip_reasons[skip::kParse];
    return;
  }
  if (mol.num_atoms() > max_atoms) {
    ++ds.skipped_count;
    ++ds.skip_reasons[skip::kOversize];
    return;
  }
  ds.records.push_back({std::string(smiles), std::move(mol), std::move(props)});
}

} // namespace detail

/// Header "smiles,<prop>,...". Rows that fail to parse, exceed max_atoms, or
/// have the wrong field count or a non-numeric property are skipped and
/// counted by reason.
inline Dataset load_csv(const std::string &path, std::size_t max_atoms = 20) {
  std::ifstream in = detail::open_input(path);
  Dataset ds;
  ds.source = path;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::BadHeader, path + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split(line, ',');
  if (header.empty() || header[0] != "smiles") {
    throw Error(ErrorCode::BadHeader, path + ": first column must be 'smiles'");
  }
  for (std::size_t k = 1; k < header.size(); ++k) {
    if (header[k].empty()) throw Error(ErrorCode::BadHeader, path + ": empty column name");
    ds.property_names.emplace_back(header[k]);
  }

  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line, ',');
    std::map<std::string, double> props;
    bool ok = fields.size() == header.size();
    for (std::size_t k = 1; ok && k < fields.size(); ++k) {
      double v;
      ok = detail::parse_double(fields[k], v);
      props[ds.property_names[k - 1]] = v;
    }
    if (!ok) {
      ++ds.skipped_count;
      ++ds.skip_reasons[skip::kBadRow];
      continue;
    }
    detail::ingest(ds, fields[0], max_atoms, std::move(props));
  }
  if (ds.empty()) throw Error(ErrorCode::EmptyAfterFiltering, path + ": no usable molecules");
  return ds;
}

/// One SMILES per line, optionally followed by whitespace and a name.
inline Dataset load_smi(const std::string &path, std::size_t max_atoms = 20) {
  std::ifstream in = detail::open_input(path);
  Dataset ds;
  ds.source = path;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    detail::ingest(ds, t.substr(0, t.find_first_of(" \t")), max_atoms, {});
  }
  if (ds.empty()) throw Error(ErrorCode::EmptyAfterFiltering, path + ": no usable molecules");
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::vector<std::uint8_t> &bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    std::uint32_t v = std::uint32_t{bytes[i]} << 16;
    if (i + 1 < bytes.size()) v |= std::uint32_t{bytes[i + 1]} << 8;
    if (i + 2 < bytes.size()) v |= bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kB64[v & 63] : '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view s) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (s.size() % 4 != 0) throw Error(ErrorCode::CorruptTensor, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    const bool last = i + 4 == s.size();
    const int pad = last ? (s[i + 3] == '=') + (s[i + 2] == '=') : 0;
    std::uint32_t v = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const int d = k >= 4 - static_cast<std::size_t>(pad) ? 0 : value(s[i + k]);
      if (d < 0) throw Error(ErrorCode::CorruptTensor, "invalid base64 character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

inline std::string encode_doubles(std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * 8);
  for (std::size_t k = 0; k < values.size(); ++k) {
    auto bits = std::bit_cast<std::uint64_t>(values[k]);
    for (std::size_t b = 0; b < 8; ++b) bytes[8 * k + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64_encode(bytes);
}

inline std::vector<double> decode_doubles(std::string_view b64) {
  const auto bytes = base64_decode(b64);
  if (bytes.size() % 8 != 0) throw Error(ErrorCode::CorruptTensor, "tensor byte count is not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[8 * k + b]} << (8 * b);
    out[k] = std::bit_cast<double>(bits);
  }
  return out;
}

} // namespace detail

inline nlohmann::json to_json(const TrainConfig &c) {
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"beta", c.beta},           {"lambda", c.lambda},         {"seed", c.seed},
          {"max_atoms", c.max_atoms}, {"threshold", c.threshold},   {"property", c.property}};
}

inline TrainConfig config_from_json(const nlohmann::json &j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta = j.at("beta").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.max_atoms = j.at("max_atoms").get<std::size_t>();
  c.threshold = j.at("threshold").get<double>();
  c.property = j.at("property").get<std::string>();
  return c;
}

inline std::string checkpoint_json(const ModelParams &params, const TrainConfig &config) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto &[name, t] : params) {
    tensors[name] = {{"shape", t.shape()}, {"data", detail::encode_doubles(t.values())}};
  }
  nlohmann::json doc = {{"version", kCheckpointVersion}, {"config", to_json(config)}, {"tensors", tensors}};
  return doc.dump(1) + "\n";
}

inline void save_checkpoint(const ModelParams &params, const TrainConfig &config,
                            const std::string &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << checkpoint_json(params, config);
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

struct Checkpoint {
  ModelParams params;
  TrainConfig config;
};

inline Checkpoint parse_checkpoint(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::CorruptTensor, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw Error(ErrorCode::VersionMismatch,
                  "checkpoint format version " + std::to_string(version) +
                      ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    Checkpoint ck;
    ck.config = config_from_json(doc.at("config"));
    for (const auto &[name, entry] : doc.at("tensors").items()) {
      const Shape shape = entry.at("shape").get<Shape>();
      std::vector<double> data = detail::decode_doubles(entry.at("data").get<std::string>());
      if (shape.empty() || data.size() != shape_size(shape)) {
        throw Error(ErrorCode::CorruptTensor, "tensor '" + name + "' has " + std::to_string(data.size()) +
                                                  " values for shape " + shape_string(shape));
      }
      ck.params.add(name, Tensor(shape, std::move(data)));
    }
    check_model_params(ck.params);
    return ck;
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::CorruptTensor, std::string("malformed checkpoint: ") + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::string &path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::FileNotFound, path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

/// epoch,recon,kl,side,total with 17 significant digits.
inline void write_history_csv(const std::vector<LossBreakdown> &history, const std::string &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << "epoch,recon,kl,side,total\n";
  char buf[160];
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto &h = history[e];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e + 1, h.recon, h.kl,
                  h.side_mse, h.total);
    out << buf;
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

} // namespace gvae
