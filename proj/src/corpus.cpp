#include "pstyle/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pstyle/kv_file.hpp"
#include "pstyle/log.hpp"

namespace pstyle {

namespace {

const char* const kReservedNames[tokens::kNumReserved] = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open corpus file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

}  // namespace

Vocab::Vocab() {
  for (const char* name : kReservedNames) push(name);
}

void Vocab::push(const std::string& token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::build_from_lines(const std::vector<std::string>& lines, int min_freq) {
  std::map<std::string, long> counts;
  for (const auto& line : lines) {
    for (auto& w : split_words(line)) ++counts[w];
  }
  if (counts.empty()) throw std::invalid_argument("build_vocab: corpus is empty");
  std::vector<std::pair<std::string, long>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [w, c] : sorted) {
    if (c >= min_freq && !v.contains(w)) v.push(w);
  }
  return v;
}

Vocab Vocab::build(const std::vector<std::filesystem::path>& files, int min_freq) {
  std::vector<std::string> lines;
  for (const auto& f : files) {
    auto part = read_lines(f);
    lines.insert(lines.end(), part.begin(), part.end());
  }
  return build_from_lines(lines, min_freq);
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) {
    if (v.contains(t)) throw std::invalid_argument("vocab: duplicate token '" + t + "'");
    v.push(t);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? tokens::kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

Sentence Vocab::tokenize(const std::string& text) const {
  Sentence out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (i == tokens::kPad || i == tokens::kBos || i == tokens::kEos || i == tokens::kSep) continue;
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

Split load_split(const std::filesystem::path& style0_file, const std::filesystem::path& style1_file,
                 const Vocab& vocab, int max_len, const std::string& split_name) {
  Split split;
  int truncated = 0;
  const std::filesystem::path files[2] = {style0_file, style1_file};
  for (int s = 0; s < 2; ++s) {
    if (!std::filesystem::exists(files[s])) throw std::runtime_error("missing corpus file: " + files[s].string());
    for (const auto& line : read_lines(files[s])) {
      if (trim(line).empty()) continue;
      auto ids = vocab.tokenize(line);
      if (max_len > 0 && static_cast<int>(ids.size()) > max_len) {
        ids.resize(static_cast<std::size_t>(max_len));
        ++truncated;
      }
      split.items.push_back({std::move(ids), s});
    }
  }
  if (truncated > 0) log_warn(split_name, ": truncated ", truncated, " sentences to ", max_len, " tokens");
  log_info(split_name, ": ", split.items.size(), " items");
  return split;
}

Dataset load_dataset(const std::filesystem::path& dir, int max_len, int min_freq, const std::optional<Vocab>& vocab) {
  Dataset ds;
  ds.vocab = vocab ? *vocab : Vocab::build({dir / "train.0", dir / "train.1"}, min_freq);
  ds.train = load_split(dir / "train.0", dir / "train.1", ds.vocab, max_len, "train");
  ds.dev = load_split(dir / "dev.0", dir / "dev.1", ds.vocab, max_len, "dev");
  ds.test = load_split(dir / "test.0", dir / "test.1", ds.vocab, max_len, "test");
  if (std::filesystem::exists(dir / "reference.0") && std::filesystem::exists(dir / "reference.1")) {
    auto refs = load_split(dir / "reference.0", dir / "reference.1", ds.vocab, max_len, "reference");
    if (refs.items.size() != ds.test.items.size()) {
      throw std::runtime_error("reference files have " + std::to_string(refs.items.size()) + " lines but test has " +
                               std::to_string(ds.test.items.size()));
    }
    for (auto& e : refs.items) ds.test.references.push_back(std::move(e.tokens));
  }
  return ds;
}

SynthSpec SynthSpec::defaults() {
  SynthSpec s;
  s.templates = {
      "the {N} was {I} {A}",
      "the {N} here is always {A}",
      "i {V} the {N} at this place",
      "our {N} was {A} and the {N} was ok",
      "we ordered the {N} and it was {I} {A}",
      "the {N} and the {N} were {A} {T}",
      "this place has {A} {N} and {N}",
      "my {N} came out {A} {T}",
      "they {V} the {N} and the {N} here",
      "the {N} was {A} but the {N} was fine",
      "i had the {N} with {N} and it tasted {A}",
      "when we came here {T} the {N} was {I} {A} as usual",
  };
  s.adjectives0 = {"bad",  "terrible", "awful", "rude",     "bland",        "dirty",
                   "slow", "cold",     "stale", "horrible", "disappointing", "overpriced"};
  s.adjectives1 = {"good", "great", "excellent", "friendly",  "tasty",   "clean",
                   "fast", "warm",  "fresh",     "wonderful", "amazing", "affordable"};
  s.verbs0 = {"hate", "avoid", "dislike", "regret"};
  s.verbs1 = {"love", "recommend", "enjoy", "adore"};
  s.nouns = {"food",  "service", "staff",  "pizza", "pasta",  "salad",  "coffee", "waiter", "room",  "menu",
             "bread", "soup",    "steak",  "burger", "music", "table",  "dessert", "sushi", "wine",  "beer",
             "fries", "chicken", "noodles", "tea",   "sauce", "cake",   "rice",   "manager", "patio", "decor",
             "breakfast", "lunch", "dinner", "bar", "hotel", "owner", "cashier", "sandwich", "taco", "salmon"};
  s.intensifiers = {"very", "really", "quite", "so"};
  s.times = {"today", "tonight", "yesterday", "again"};
  return s;
}

SynthSpec SynthSpec::load(const std::filesystem::path& path) {
  auto kv = KeyValueFile::load(path);
  SynthSpec s = defaults();
  auto list = [&](const char* key, std::vector<std::string>& dst) {
    if (kv.has(key)) dst = split_list(kv.get(key));
  };
  if (kv.has("template")) s.templates = kv.get_all("template");
  list("adjectives.0", s.adjectives0);
  list("adjectives.1", s.adjectives1);
  list("verbs.0", s.verbs0);
  list("verbs.1", s.verbs1);
  list("nouns", s.nouns);
  list("intensifiers", s.intensifiers);
  list("times", s.times);
  auto integer = [&](const char* key, int& dst) {
    if (kv.has(key)) dst = std::stoi(kv.get(key));
  };
  integer("train_per_style", s.train_per_style);
  integer("dev_per_style", s.dev_per_style);
  integer("test_per_style", s.test_per_style);
  if (kv.has("write_references")) s.write_references = kv.get("write_references") == "true";
  if (kv.has("seed")) s.seed = std::stoull(kv.get("seed"));
  for (const auto& [k, v] : kv.entries()) {
    static const std::set<std::string> known = {"template", "adjectives.0", "adjectives.1", "verbs.0", "verbs.1",
                                                "nouns", "intensifiers", "times", "train_per_style", "dev_per_style",
                                                "test_per_style", "write_references", "seed"};
    if (!known.count(k)) throw std::invalid_argument(path.string() + ": unknown synth key '" + k + "'");
  }
  return s;
}

std::vector<std::string> SynthSpec::lexicon(int style) const {
  auto out = style == 0 ? adjectives0 : adjectives1;
  const auto& v = style == 0 ? verbs0 : verbs1;
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

void SynthSpec::validate() const {
  if (templates.empty()) throw std::invalid_argument("synth spec: no templates");
  if (adjectives0.size() != adjectives1.size() || verbs0.size() != verbs1.size()) {
    throw std::invalid_argument("synth spec: style lexicons must be aligned (equal lengths)");
  }
  const auto l0 = lexicon(0);
  const auto l1 = lexicon(1);
  std::set<std::string> s0(l0.begin(), l0.end());
  std::vector<std::string> shared;
  for (const auto& w : std::set<std::string>(l1.begin(), l1.end())) {
    if (s0.count(w)) shared.push_back(w);
  }
  if (!shared.empty()) {
    std::string names;
    for (const auto& w : shared) names += (names.empty() ? "" : ", ") + w;
    throw std::invalid_argument("synth spec: style lexicons overlap on: " + names);
  }
  for (const auto& t : templates) {
    const bool has_a = t.find("{A}") != std::string::npos;
    const bool has_v = t.find("{V}") != std::string::npos;
    if (!has_a && !has_v) throw std::invalid_argument("synth spec: template has no style slot: '" + t + "'");
    if ((has_a && adjectives0.empty()) || (has_v && verbs0.empty())) {
      throw std::invalid_argument("synth spec: template uses an empty word list: '" + t + "'");
    }
    if (t.find("{N}") != std::string::npos && nouns.empty()) throw std::invalid_argument("synth spec: no nouns");
  }
  if (train_per_style < 1 || dev_per_style < 1 || test_per_style < 1) {
    throw std::invalid_argument("synth spec: split counts must be positive");
  }
}

std::vector<SynthSentence> synth_sentences(const SynthSpec& spec, int style, int count, std::mt19937_64& rng) {
  std::vector<SynthSentence> out;
  out.reserve(static_cast<std::size_t>(count));
  const auto& adj = style == 0 ? spec.adjectives0 : spec.adjectives1;
  const auto& adj_other = style == 0 ? spec.adjectives1 : spec.adjectives0;
  const auto& verb = style == 0 ? spec.verbs0 : spec.verbs1;
  const auto& verb_other = style == 0 ? spec.verbs1 : spec.verbs0;
  for (int i = 0; i < count; ++i) {
    const auto& tmpl = spec.templates[uniform_index(rng, spec.templates.size())];
    SynthSentence s;
    for (const auto& slot : split_words(tmpl)) {
      std::string word, other;
      if (slot == "{N}") {
        word = other = spec.nouns[uniform_index(rng, spec.nouns.size())];
      } else if (slot == "{I}") {
        word = other = spec.intensifiers[uniform_index(rng, spec.intensifiers.size())];
      } else if (slot == "{T}") {
        word = other = spec.times[uniform_index(rng, spec.times.size())];
      } else if (slot == "{A}") {
        const auto k = uniform_index(rng, adj.size());
        word = adj[k];
        other = adj_other[k];
      } else if (slot == "{V}") {
        const auto k = uniform_index(rng, verb.size());
        word = verb[k];
        other = verb_other[k];
      } else {
        word = other = slot;
      }
      if (!s.text.empty()) {
        s.text += ' ';
        s.counterpart += ' ';
      }
      s.text += word;
      s.counterpart += other;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::filesystem::path> synth_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<std::filesystem::path> written;
  const std::pair<const char*, int> splits[] = {
      {"train", spec.train_per_style}, {"dev", spec.dev_per_style}, {"test", spec.test_per_style}};
  for (const auto& [name, count] : splits) {
    for (int style = 0; style < 2; ++style) {
      auto sentences = synth_sentences(spec, style, count, rng);
      std::string text, refs;
      for (const auto& s : sentences) {
        text += s.text + '\n';
        refs += s.counterpart + '\n';
      }
      const auto path = out_dir / (std::string(name) + "." + std::to_string(style));
      write_file_atomic(path, text);
      written.push_back(path);
      if (spec.write_references && std::string(name) == "test") {
        const auto ref_path = out_dir / ("reference." + std::to_string(style));
        write_file_atomic(ref_path, refs);
        written.push_back(ref_path);
      }
    }
  }
  return written;
}

BatchIterator::BatchIterator(const std::vector<Example>* items, int batch_size, std::uint64_t seed)
    : items_(items), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (items_ == nullptr || items_->empty()) throw std::invalid_argument("batch iterator over an empty item list");
  shuffle();
}

void BatchIterator::shuffle() {
  order_.resize(items_->size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  std::mt19937_64 rng(seed_ ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch_ + 1)));
  fisher_yates(order_, rng);
}

void BatchIterator::seek(int epoch, int position) {
  epoch_ = epoch;
  position_ = position;
  shuffle();
}

Batch BatchIterator::make(int count) {
  Batch b;
  for (int i = 0; i < count; ++i) {
    const int idx = order_[static_cast<std::size_t>(position_ + i)];
    const auto& e = (*items_)[static_cast<std::size_t>(idx)];
    b.width = std::max(b.width, static_cast<int>(e.tokens.size()));
    b.indices.push_back(idx);
    b.styles.push_back(e.style);
    b.lengths.push_back(static_cast<int>(e.tokens.size()));
  }
  b.ids.assign(static_cast<std::size_t>(count) * b.width, tokens::kPad);
  for (int i = 0; i < count; ++i) {
    const auto& e = (*items_)[static_cast<std::size_t>(b.indices[i])];
    std::copy(e.tokens.begin(), e.tokens.end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i) * b.width);
  }
  position_ += count;
  return b;
}

bool BatchIterator::next_in_epoch(Batch& out) {
  const int remaining = static_cast<int>(order_.size()) - position_;
  if (remaining <= 0) return false;
  out = make(std::min(batch_size_, remaining));
  return true;
}

Batch BatchIterator::next() {
  Batch b;
  if (!next_in_epoch(b)) {
    ++epoch_;
    position_ = 0;
    shuffle();
    next_in_epoch(b);
  }
  return b;
}

std::vector<Example> filter_style(const std::vector<Example>& items, int style) {
  std::vector<Example> out;
  for (const auto& e : items) {
    if (e.style == style) out.push_back(e);
  }
  return out;
}

std::vector<Sentence> pretraining_sequences(const std::vector<Example>& items, double copy_fraction,
                                            std::mt19937_64& rng) {
  std::vector<Sentence> out;
  out.reserve(items.size());
  for (const auto& e : items) {
    Sentence s = e.tokens;
    if (uniform_unit(rng) < copy_fraction) {
      s.push_back(tokens::kSep);
      s.insert(s.end(), e.tokens.begin(), e.tokens.end());
    }
    s.push_back(tokens::kEos);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pstyle
