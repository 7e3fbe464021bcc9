#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pstyle/backbone.hpp"

namespace pstyle {

using Sentence = std::vector<int>;

/// Word-level vocabulary. Ids 0..4 are the reserved markers; the rest are
/// ordered by (frequency desc, token asc).
class Vocab {
 public:
  Vocab();

  static Vocab build(const std::vector<std::filesystem::path>& files, int min_freq = 1);
  static Vocab build_from_lines(const std::vector<std::string>& lines, int min_freq = 1);
  static Vocab from_tokens(const std::vector<std::string>& tokens);  // non-reserved tokens, in id order

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;

  Sentence tokenize(const std::string& text) const;
  /// Joins tokens with single spaces; PAD/BOS/EOS/SEP are dropped.
  std::string detokenize(std::span<const int> ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void push(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct Example {
  Sentence tokens;
  int style = 0;
};

struct Split {
  std::vector<Example> items;
  std::vector<Sentence> references;  // aligned with items when present
  bool has_references() const { return !references.empty(); }
};

struct Dataset {
  Vocab vocab;
  Split train, dev, test;
};

/// Loads one split from its two style files (label = file index).
/// Blank lines are skipped; sentences over `max_len` tokens are truncated.
Split load_split(const std::filesystem::path& style0_file, const std::filesystem::path& style1_file,
                 const Vocab& vocab, int max_len, const std::string& split_name = "split");

/// Reads `<dir>/{train,dev,test}.{0,1}` and, when both exist,
/// `<dir>/reference.{0,1}` (aligned with test.{0,1}). The vocabulary comes
/// from the training files unless one is supplied.
Dataset load_dataset(const std::filesystem::path& dir, int max_len, int min_freq = 1,
                     const std::optional<Vocab>& vocab = std::nullopt);

/// Synthetic two-style corpus. Templates use the slots {N} (content noun),
/// {A} (style adjective), {V} (style verb), {I} (intensifier), {T} (time).
/// The two adjective lists and the two verb lists are aligned by index, so
/// swapping a word for its counterpart gives a reference transfer.
struct SynthSpec {
  std::vector<std::string> templates;
  std::vector<std::string> adjectives0, adjectives1;
  std::vector<std::string> verbs0, verbs1;
  std::vector<std::string> nouns, intensifiers, times;
  int train_per_style = 500;
  int dev_per_style = 100;
  int test_per_style = 100;
  bool write_references = false;
  std::uint64_t seed = 42;

  static SynthSpec defaults();
  /// Overrides defaults from a `key = value` file; lists are comma separated
  /// and `template` may repeat.
  static SynthSpec load(const std::filesystem::path& path);
  /// Throws invalid_argument naming any word shared by the two lexicons.
  void validate() const;
  std::vector<std::string> lexicon(int style) const;
};

struct SynthSentence {
  std::string text;
  std::string counterpart;  // same sentence with every style word swapped
};

/// Deterministic given spec.seed.
std::vector<SynthSentence> synth_sentences(const SynthSpec& spec, int style, int count, std::mt19937_64& rng);
/// Writes train/dev/test files (and references when requested); returns the paths.
std::vector<std::filesystem::path> synth_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir);

struct Batch {
  std::vector<int> ids;      // rows × width, PAD-filled
  std::vector<int> lengths;  // unpadded lengths
  std::vector<int> styles;
  std::vector<int> indices;  // positions in the source item list
  int width = 0;

  int size() const { return static_cast<int>(lengths.size()); }
  std::span<const int> row(int i) const {
    return std::span<const int>(ids).subspan(static_cast<std::size_t>(i) * width, lengths[i]);
  }
  std::span<const int> padded_row(int i) const {
    return std::span<const int>(ids).subspan(static_cast<std::size_t>(i) * width, width);
  }
};

/// Epoch-wise seeded shuffling. The order of epoch e depends only on
/// (seed, e), so a saved (epoch, position) pair resumes exactly.
class BatchIterator {
 public:
  BatchIterator() = default;
  BatchIterator(const std::vector<Example>* items, int batch_size, std::uint64_t seed);

  Batch next();  // wraps into the next epoch when exhausted
  bool next_in_epoch(Batch& out);  // false at the end of the current epoch

  int epoch() const { return epoch_; }
  int position() const { return position_; }
  void seek(int epoch, int position);

 private:
  void shuffle();
  Batch make(int count);

  const std::vector<Example>* items_ = nullptr;
  int batch_size_ = 8;
  std::uint64_t seed_ = 0;
  int epoch_ = 0;
  int position_ = 0;
  std::vector<int> order_;
};

/// Items of one style only.
std::vector<Example> filter_style(const std::vector<Example>& items, int style);

/// Sequences for backbone pretraining: the plain sentence `X EOS`, or with
/// probability `copy_fraction` the copy form `X SEP X EOS`.
std::vector<Sentence> pretraining_sequences(const std::vector<Example>& items, double copy_fraction,
                                            std::mt19937_64& rng);

}  // namespace pstyle
