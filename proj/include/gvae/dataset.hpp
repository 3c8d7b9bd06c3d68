// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "gvae/chem.hpp"
#include "gvae/error.hpp"

namespace gvae {

struct Record {
  std::string smiles;
  MolGraph mol;
  std::map<std::string, double> properties;
};

/// Parsed molecules in file order. Every record has the same property names.
struct Dataset {
  std::vector<Record> records;
  std::vector<std::string> property_names;
  std::size_t skipped_count = 0;
  std::map<std::string, std::size_t> skip_reasons;
  std::string source;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  bool has_property(const std::string &name) const {
    for (const auto &p : property_names)
      if (p == name) return true;
    return false;
  }

  std::vector<double> column(const std::string &name) const {
    if (!has_property(name)) {
      throw Error(ErrorCode::InvalidArgument, "dataset has no property '" + name + "'");
    }
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto &r : records) out.push_back(r.properties.at(name));
    return out;
  }

  /// Records at `indices`, in that order; the property layout is kept.
  Dataset subset(const std::vector<std::size_t> &indices) const {
    Dataset out;
    out.property_names = property_names;
    out.source = source;
    for (std::size_t i : indices) out.records.push_back(records.at(i));
    return out;
  }
};

} // namespace gvae
