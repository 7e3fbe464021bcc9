#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pstyle/params.hpp"

namespace pstyle {

/// One file format for every artifact that carries tensors:
///
///   pstyle-checkpoint 1
///   config_hash = <16 hex digits>
///   [config]    canonical `key = value` lines
///   [meta]      free-form `key = value` lines
///   [vocab]     one token per line, in id order
///   [tensors]   `name d0xd1... offset count`, offsets in floats
///   [data]
///   raw little-endian float32 values
struct Checkpoint {
  std::string config_hash;
  std::string config_text;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::string> vocab;
  std::vector<NamedTensor<float>> tensors;

  void save(const std::filesystem::path& path) const;  // write-then-rename
  static Checkpoint load(const std::filesystem::path& path);

  void add_tensors(const ParamStore<float>& store, const std::string& prefix = "", const std::string& rename = "");
  const Tensor<float>* find(const std::string& name) const;
  void set_meta(const std::string& key, const std::string& value);
  bool has_meta(const std::string& key) const;
  const std::string& get_meta(const std::string& key) const;
};

}  // namespace pstyle
