// SPDX-License-Identifier: Apache-2.0
//
// gvae: training, inference, similarity and verification from the shell.
//
// Exit codes: 0 success, 1 usage, 2 I/O or parse error, 3 domain error
// (invalid or oversize molecule), 4 numeric failure.
#include <charconv>
#include <cstdio>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gvae/dataio.hpp"
#include "gvae/fingerprint.hpp"
#include "gvae/generate.hpp"
#include "gvae/reference.hpp"
#include "gvae/smiles.hpp"
#include "gvae/train.hpp"

namespace {

using namespace gvae;
using Json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitDomain = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(ErrorCode c) {
  switch (c) {
  case ErrorCode::MoleculeTooLarge:
  case ErrorCode::EmptyDataset:
  case ErrorCode::InvalidAtom:
  case ErrorCode::Disconnected:
  case ErrorCode::DisconnectedInput:
    return kExitDomain;
  case ErrorCode::NonFiniteValue:
  case ErrorCode::SingularSystem:
  case ErrorCode::ZeroVector:
    return kExitNumeric;
  case ErrorCode::InvalidArgument:
    return kExitUsage;
  default:
    return kExitIo;
  }
}

/// Shortest round-trip decimal, always with a decimal point or exponent.
std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string format_17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Output {
  bool json = false;
  Json doc;

  explicit Output(const std::string &command) { doc["command"] = command; }

  void flush() const {
    if (json) std::cout << doc.dump() << "\n";
  }
};

MolGraph molecule_for(const std::string &smiles, std::size_t max_atoms) {
  MolGraph m = parse_smiles(smiles);
  if (m.num_atoms() > max_atoms) {
    throw Error(ErrorCode::MoleculeTooLarge, smiles + " has " + std::to_string(m.num_atoms()) +
                                                 " atoms, max " + std::to_string(max_atoms));
  }
  return m;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out;
  TrainConfig config;
};

int run_train(const TrainArgs &a, Output &o) {
  Dataset ds = load_csv(a.data, a.config.max_atoms);
  for (const auto &[reason, count] : ds.skip_reasons) {
    std::cerr << "warning: skipped " << count << " row(s): " << reason << "\n";
  }
  const std::size_t report_every = std::max<std::size_t>(1, a.config.epochs / 10);
  auto result = train(ds, a.config, [&](std::size_t epoch, const LossBreakdown &h) {
    if (epoch % report_every == 0 || epoch == 1) {
      std::cerr << "epoch " << epoch << " total " << format_17(h.total) << "\n";
    }
  });
  save_checkpoint(result.params, a.config, a.out);
  const std::string history = a.out + ".history.csv";
  write_history_csv(result.history, history);

  o.doc["checkpoint"] = a.out;
  o.doc["history"] = history;
  o.doc["molecules"] = ds.size();
  o.doc["skipped"] = ds.skipped_count;
  o.doc["epochs"] = result.history.size();
  if (!result.history.empty()) {
    const auto &f = result.history.front(), &l = result.history.back();
    o.doc["first_total"] = f.total;
    o.doc["final"] = {{"recon", l.recon}, {"kl", l.kl}, {"side", l.side_mse}, {"total", l.total}};
  }
  if (!o.json) {
    std::cout << "trained on " << ds.size() << " molecules (" << ds.skipped_count << " skipped)\n";
    if (!result.history.empty()) {
      std::cout << "final total " << format_17(result.history.back().total) << "\n";
    }
    std::cout << "checkpoint " << a.out << "\nhistory " << history << "\n";
  }
  return kExitOk;
}

int run_encode(const std::string &ckpt, const std::string &smiles, Output &o) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const MolGraph m = molecule_for(smiles, ck.config.max_atoms);
  const Tensor g = pooled_embedding(m, ck.params);
  o.doc["smiles"] = smiles;
  o.doc["pooled"] = std::vector<double>(g.values().begin(), g.values().end());
  if (!o.json)
    for (double v : g.values()) std::cout << format_17(v) << "\n";
  return kExitOk;
}

int run_reconstruct(const std::string &ckpt, const std::string &smiles, double threshold, Output &o) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold must lie in [0, 1]");
  }
  const Checkpoint ck = load_checkpoint(ckpt);
  const MolGraph m = molecule_for(smiles, ck.config.max_atoms);
  const Reconstruction r = reconstruct(m, ck.params, threshold);
  const std::string out = write_smiles_fragments(r.mol);

  Json edges = Json::array();
  for (std::size_t i = 0; i < m.num_atoms(); ++i) {
    for (std::size_t j = i + 1; j < m.num_atoms(); ++j) {
      edges.push_back({{"i", i},
                       {"j", j},
                       {"p", r.probabilities(i, j)},
                       {"input_bond", m.bond_between(i, j).has_value()},
                       {"predicted_bond", r.mol.bond_between(i, j).has_value()}});
    }
  }
  o.doc["smiles"] = smiles;
  o.doc["reconstructed"] = out;
  o.doc["valid"] = r.validity.valid;
  o.doc["offending_atoms"] = r.validity.offending;
  o.doc["threshold"] = threshold;
  o.doc["edges"] = edges;
  if (!o.json) {
    std::cout << out << "\n";
    if (r.validity.valid) {
      std::cout << "valid\n";
    } else {
      std::cout << "invalid: atoms";
      for (std::size_t i : r.validity.offending) std::cout << ' ' << i;
      std::cout << "\n";
    }
    std::cout << "i,j,p,input_bond,predicted_bond\n";
    for (const auto &e : edges) {
      std::cout << e["i"].get<std::size_t>() << ',' << e["j"].get<std::size_t>() << ','
                << format_17(e["p"].get<double>()) << ',' << e["input_bond"].get<bool>() << ','
                << e["predicted_bond"].get<bool>() << "\n";
    }
  }
  return kExitOk;
}

int run_predict(const std::string &ckpt, const std::string &smiles, Output &o) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const double y = predict_property(molecule_for(smiles, ck.config.max_atoms), ck.params);
  o.doc["smiles"] = smiles;
  o.doc["property"] = ck.config.property;
  o.doc["prediction"] = y;
  if (!o.json) std::cout << format_17(y) << "\n";
  return kExitOk;
}

int run_similar(const std::optional<std::string> &ckpt, const std::vector<std::string> &smiles,
                const std::string &metric, const FpConfig &fp, Output &o) {
  if (smiles.size() != 2) {
    throw Error(ErrorCode::InvalidArgument, "similar needs exactly two --smiles");
  }
  double value = 0.0;
  if (metric == "latent") {
    if (!ckpt) throw Error(ErrorCode::InvalidArgument, "--metric latent requires --ckpt");
    const Checkpoint ck = load_checkpoint(*ckpt);
    value = latent_similarity(molecule_for(smiles[0], ck.config.max_atoms),
                              molecule_for(smiles[1], ck.config.max_atoms), ck.params);
  } else {
    const Fingerprint a = path_fingerprint(parse_smiles(smiles[0]), fp);
    const Fingerprint b = path_fingerprint(parse_smiles(smiles[1]), fp);
    if (metric == "tanimoto") value = tanimoto(a, b);
    else if (metric == "dice") value = dice(a, b);
    else value = cosine(a, b);
  }
  o.doc["metric"] = metric;
  o.doc["smiles"] = smiles;
  o.doc["similarity"] = value;
  if (!o.json) std::cout << format_real(value) << "\n";
  return kExitOk;
}

int run_fingerprint(const std::string &smiles, const FpConfig &fp, Output &o) {
  const Fingerprint f = path_fingerprint(parse_smiles(smiles), fp);
  o.doc["smiles"] = smiles;
  o.doc["nbits"] = f.nbits();
  o.doc["hex"] = f.to_hex();
  o.doc["on_bits"] = f.on_count();
  o.doc["density"] = f.density();
  if (!o.json) {
    std::cout << f.to_hex() << "\n";
    std::cout << "density " << format_real(f.density()) << " (" << f.on_count() << "/" << f.nbits()
              << " bits on)\n";
  }
  return kExitOk;
}

int run_validate(const std::string &smiles, Output &o) {
  const MolGraph m = parse_smiles(smiles);
  const ValidityReport r = check_valence(m);
  Json bad = Json::array();
  for (std::size_t i : r.offending) {
    bad.push_back({{"atom", i},
                   {"element", std::string(symbol(m.atom(i).element))},
                   {"bond_valence", rounded_bond_valence(m, i)},
                   {"hydrogens", m.atom(i).implicit_h},
                   {"charge", m.atom(i).formal_charge}});
  }
  o.doc["smiles"] = smiles;
  o.doc["valid"] = r.valid;
  o.doc["offending_atoms"] = bad;
  if (!o.json) {
    std::cout << (r.valid ? "valid" : "invalid") << "\n";
    for (const auto &b : bad) {
      std::cout << "atom " << b["atom"].get<std::size_t>() << " " << b["element"].get<std::string>()
                << ": bond valence " << b["bond_valence"].get<int>() << ", hydrogens "
                << b["hydrogens"].get<int>() << ", charge " << b["charge"].get<int>() << "\n";
    }
  }
  return r.valid ? kExitOk : kExitDomain;
}

inline constexpr double kGradTolerance = 1e-5;

int run_gradcheck(std::uint64_t seed, double eps, std::size_t samples, Output &o) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size(4, 10);
  MolGraph mol;
  do {
    mol = random_molecule(rng, size(rng));
  } while (mol.num_atoms() < 4 || mol.num_atoms() > 10);
  const double label = static_cast<double>(mol.num_atoms());
  const ModelParams params = init_model_params(seed);
  const Tensor noise = standard_normal(mol.num_atoms(), kLatentWidth, rng);
  const GradCheckResult r = model_grad_check(mol, label, params, noise, eps, samples, seed);
  const bool pass = r.max_rel_error < kGradTolerance;

  o.doc["seed"] = seed;
  o.doc["smiles"] = write_smiles(mol);
  o.doc["atoms"] = mol.num_atoms();
  o.doc["eps"] = eps;
  o.doc["coordinates"] = r.coordinates;
  o.doc["max_rel_error"] = r.max_rel_error;
  o.doc["worst_param"] = r.worst_param;
  o.doc["worst_index"] = r.worst_index;
  o.doc["pass"] = pass;
  if (!o.json) {
    std::cout << "molecule " << write_smiles(mol) << " (" << mol.num_atoms() << " atoms)\n";
    std::cout << "coordinates " << r.coordinates << "\n";
    std::cout << "max_rel_error " << format_17(r.max_rel_error) << " at " << r.worst_param << "["
              << r.worst_index << "]\n";
    std::cout << (pass ? "PASS" : "FAIL") << "\n";
  }
  return pass ? kExitOk : kExitNumeric;
}

void add_fp_options(CLI::App *cmd, FpConfig &fp) {
  cmd->add_option("--nbits", fp.nbits, "fingerprint length in bits")->capture_default_str();
  cmd->add_option("--min-path", fp.min_path, "shortest path in bonds")->capture_default_str();
  cmd->add_option("--max-path", fp.max_path, "longest path in bonds")->capture_default_str();
  cmd->add_option("--bits-per-hash", fp.bits_per_hash, "bits set per path")->capture_default_str();
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Graph VAE for molecules"};
  app.require_subcommand(1);
  app.fallthrough();
  bool json = false;
  app.add_flag("--json", json, "machine-readable JSON output");

  TrainArgs train_args;
  auto *train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  train_cmd->add_option("--data", train_args.data, "CSV with a smiles column")->required();
  train_cmd->add_option("--property", train_args.config.property, "side-property column")->required();
  train_cmd->add_option("--epochs", train_args.config.epochs)->required();
  train_cmd->add_option("--seed", train_args.config.seed)->required();
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
  train_cmd->add_option("--lr", train_args.config.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", train_args.config.batch_size)->capture_default_str();
  train_cmd->add_option("--beta", train_args.config.beta, "KL weight")->capture_default_str();
  train_cmd->add_option("--lambda", train_args.config.lambda, "side-loss weight")->capture_default_str();
  train_cmd->add_option("--max-atoms", train_args.config.max_atoms)->capture_default_str();

  std::string ckpt, smiles;
  std::optional<std::string> opt_ckpt;
  double threshold = 0.5;
  auto *encode_cmd = app.add_subcommand("encode", "print the pooled 64-vector");
  encode_cmd->add_option("--ckpt", ckpt)->required();
  encode_cmd->add_option("--smiles", smiles)->required();

  auto *recon_cmd = app.add_subcommand("reconstruct", "decode bonds from the mean latent");
  recon_cmd->add_option("--ckpt", ckpt)->required();
  recon_cmd->add_option("--smiles", smiles)->required();
  recon_cmd->add_option("--threshold", threshold)->capture_default_str();

  auto *predict_cmd = app.add_subcommand("predict", "side-predictor output");
  predict_cmd->add_option("--ckpt", ckpt)->required();
  predict_cmd->add_option("--smiles", smiles)->required();

  std::vector<std::string> pair;
  std::string metric = "latent";
  FpConfig fp;
  auto *similar_cmd = app.add_subcommand("similar", "similarity of two molecules");
  similar_cmd->add_option("--ckpt", opt_ckpt, "required for --metric latent");
  similar_cmd->add_option("--smiles", pair, "give twice")->required();
  similar_cmd->add_option("--metric", metric)
      ->check(CLI::IsMember({"latent", "tanimoto", "dice", "cosine"}))
      ->capture_default_str();
  add_fp_options(similar_cmd, fp);

  auto *fp_cmd = app.add_subcommand("fingerprint", "hex path fingerprint");
  fp_cmd->add_option("--smiles", smiles)->required();
  add_fp_options(fp_cmd, fp);

  auto *validate_cmd = app.add_subcommand("validate", "valence check; exit 3 if invalid");
  validate_cmd->add_option("--smiles", smiles)->required();

  std::uint64_t seed = 0;
  double eps = 1e-5;
  std::size_t samples = 256;
  auto *grad_cmd = app.add_subcommand("gradcheck", "finite-difference check on a random molecule");
  grad_cmd->add_option("--seed", seed)->required();
  grad_cmd->add_option("--eps", eps)->capture_default_str();
  grad_cmd->add_option("--samples", samples, "coordinates checked (at least 200)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitUsage;
  }

  const CLI::App *cmd = app.get_subcommands().front();
  Output out(cmd->get_name());
  out.json = json;
  int code = kExitOk;
  try {
    if (cmd == train_cmd) code = run_train(train_args, out);
    else if (cmd == encode_cmd) code = run_encode(ckpt, smiles, out);
    else if (cmd == recon_cmd) code = run_reconstruct(ckpt, smiles, threshold, out);
    else if (cmd == predict_cmd) code = run_predict(ckpt, smiles, out);
    else if (cmd == similar_cmd) code = run_similar(opt_ckpt, pair, metric, fp, out);
    else if (cmd == fp_cmd) code = run_fingerprint(smiles, fp, out);
    else if (cmd == validate_cmd) code = run_validate(smiles, out);
    else if (cmd == grad_cmd) code = run_gradcheck(seed, eps, samples, out);
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    out.doc["error"] = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
    code = exit_code_for(e.code());
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    out.doc["error"] = {{"code", "IoError"}, {"message", e.what()}};
    code = kExitIo;
  }
  out.doc["exit_code"] = code;
  out.flush();
  return code;
}
