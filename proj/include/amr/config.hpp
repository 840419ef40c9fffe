#pragma once

#include <map>
#include <string>
#include <vector>

#include "amr/common.hpp"

namespace amr {

// Flat key=value run configuration. '#' starts a comment, keys must belong
// to the built-in registry (typos are configuration errors), values are
// stored as strings so that a written resolved config reparses bit-identically.
class RunConfig {
 public:
  RunConfig();  // registry defaults

  void load_file(const std::string& path);        // applies overrides
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  const std::string& str(const std::string& key) const;
  int integer(const std::string& key) const;
  double real(const std::string& key) const;
  std::vector<double> real_list(const std::string& key) const;  // comma-separated
  std::vector<int> int_list(const std::string& key) const;

  // Writes every key in sorted order ("resolved" config next to outputs).
  void save(const std::string& path) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace amr
