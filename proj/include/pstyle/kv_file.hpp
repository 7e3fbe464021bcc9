#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pstyle {

/// Ordered `key = value` entries; `#` starts a comment. Repeated keys keep
/// every value in file order.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;  // last value
  std::vector<std::string> get_all(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string trim(const std::string& s);
std::vector<std::string> split_words(const std::string& s);
std::vector<std::string> split_list(const std::string& s, char sep = ',');

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace pstyle
