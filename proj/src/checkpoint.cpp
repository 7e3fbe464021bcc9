#include "pstyle/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "pstyle/kv_file.hpp"

namespace pstyle {

static_assert(std::endian::native == std::endian::little, "checkpoint data is stored little-endian");

namespace {

constexpr const char* kMagic = "pstyle-checkpoint 1";

std::string shape_field(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& f) {
  if (f == "scalar") return {};
  Shape s;
  std::istringstream is(f);
  std::string part;
  while (std::getline(is, part, 'x')) s.push_back(std::stoi(part));
  return s;
}

}  // namespace

void Checkpoint::add_tensors(const ParamStore<float>& store, const std::string& prefix, const std::string& rename) {
  for (const auto& e : store.group(prefix)) {
    auto name = rename.empty() ? e.name : rename + e.name.substr(prefix.size());
    tensors.push_back({name, e.tensor});
  }
}

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = value;
      return;
    }
  }
  meta.emplace_back(key, value);
}

bool Checkpoint::has_meta(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return true;
  }
  return false;
}

const std::string& Checkpoint::get_meta(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw std::out_of_range("checkpoint: missing meta key '" + key + "'");
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ostringstream head;
  head << kMagic << '\n' << "config_hash = " << config_hash << '\n' << "[config]\n" << config_text;
  if (!config_text.empty() && config_text.back() != '\n') head << '\n';
  head << "[meta]\n";
  for (const auto& [k, v] : meta) head << k << " = " << v << '\n';
  head << "[vocab]\n";
  for (const auto& t : vocab) head << t << '\n';
  head << "[tensors]\n";
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    head << t.name << ' ' << shape_field(t.tensor.shape()) << ' ' << offset << ' ' << t.tensor.numel() << '\n';
    offset += t.tensor.numel();
  }
  head << "[data]\n";
  std::string bytes = head.str();
  const std::size_t start = bytes.size();
  bytes.resize(start + offset * sizeof(float));
  char* out = bytes.data() + start;
  for (const auto& t : tensors) {
    const auto d = t.tensor.data();
    std::memcpy(out, d.data(), d.size() * sizeof(float));
    out += d.size() * sizeof(float);
  }
  write_file_atomic(path, bytes);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto fail = [&](const std::string& why) {
    return std::runtime_error("checkpoint " + path.string() + ": " + why);
  };
  const std::string data_tag = "\n[data]\n";
  const auto data_pos = bytes.find(data_tag);
  if (bytes.rfind(kMagic, 0) != 0 || data_pos == std::string::npos) throw fail("not a checkpoint file");
  std::istringstream head(bytes.substr(0, data_pos + 1));
  std::string line;
  std::getline(head, line);
  Checkpoint ck;
  std::string section;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, count;
  };
  std::vector<Entry> entries;
  while (std::getline(head, line)) {
    if (!line.empty() && line.front() == '[' && line.back() == ']') {
      section = line;
      continue;
    }
    if (section.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string::npos || trim(line.substr(0, eq)) != "config_hash") throw fail("bad header line");
      ck.config_hash = trim(line.substr(eq + 1));
    } else if (section == "[config]") {
      ck.config_text += line + '\n';
    } else if (section == "[meta]") {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw fail("bad meta line '" + line + "'");
      ck.meta.emplace_back(line.substr(0, eq), line.substr(eq + 3));
    } else if (section == "[vocab]") {
      ck.vocab.push_back(line);
    } else if (section == "[tensors]") {
      std::istringstream is(line);
      Entry e;
      std::string shape;
      if (!(is >> e.name >> shape >> e.offset >> e.count)) throw fail("bad tensor line '" + line + "'");
      e.shape = parse_shape(shape);
      if (shape_numel(e.shape) != e.count) throw fail("tensor " + e.name + " count disagrees with its shape");
      entries.push_back(std::move(e));
    }
  }
  const std::size_t start = data_pos + data_tag.size();
  const std::size_t floats = (bytes.size() - start) / sizeof(float);
  if ((bytes.size() - start) % sizeof(float) != 0) throw fail("truncated data");
  for (const auto& e : entries) {
    if (e.offset + e.count > floats) throw fail("tensor " + e.name + " runs past the end of the data");
    std::vector<float> values(e.count);
    std::memcpy(values.data(), bytes.data() + start + e.offset * sizeof(float), e.count * sizeof(float));
    ck.tensors.push_back({e.name, Tensor<float>(e.shape, std::move(values))});
  }
  if (fnv1a_hex(ck.config_text) != ck.config_hash) throw fail("config hash does not match the stored config");
  return ck;
}

}  // namespace pstyle
