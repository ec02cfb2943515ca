#ifndef FAITHBENCH_DATA_HPP
#define FAITHBENCH_DATA_HPP

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace faithbench {

/// Token table with three reserved ids: 0 = PAD, 1 = UNK, 2 = MASK.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;

  Vocabulary();

  /// Builds a vocabulary from tokenized documents, keeping tokens whose
  /// frequency is at least `min_freq`. Insertion order: first occurrence.
  static Vocabulary build(const std::vector<std::vector<std::string>>& docs, int min_freq = 2);

  int add(const std::string& token);           // idempotent
  int lookup(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

struct Example {
  std::vector<int> ids;
  int label = 0;
  std::vector<int> polarity;  // per token: -1/0/+1 ground truth; empty if unknown
  bool all_unknown = false;   // every token mapped to UNK
};

struct Corpus {
  std::vector<Example> examples;
  std::shared_ptr<Vocabulary> vocab;
  int num_classes = 2;
  std::string split_tag;

  std::size_t size() const { return examples.size(); }
};

enum class CorpusFormat { Tsv, JsonLines };

/// Whitespace tokenization after lowercasing.
std::vector<std::string> tokenize(const std::string& text);

/// Loads `text<TAB>label` rows or {"text":...,"label":...} JSON lines.
/// When `vocab` is null the file is treated as the training split and a
/// vocabulary is built from it (frequency cutoff `min_freq`); otherwise
/// tokens are mapped through the given vocabulary with unknowns -> UNK.
Corpus load_corpus(const std::string& path, CorpusFormat format,
                   std::shared_ptr<Vocabulary> vocab = nullptr, int min_freq = 2,
                   int num_classes = -1);

void export_corpus(const Corpus& corpus, const std::string& path, CorpusFormat format);
/// Writes one line per example: space-separated -1/0/+1 tags.
void export_polarity_tags(const Corpus& corpus, const std::string& path);

/// Synthetic sentiment-style generator. Tokens come from a signed lexicon;
/// the label is the sign of the summed token impacts, forced to exceed
/// `margin` so labels are unambiguous. Every token carries its ground-truth
/// polarity tag.
struct SyntheticSpec {
  int positive_tokens = 20;
  int negative_tokens = 20;
  int neutral_tokens = 24;
  double magnitude_min = 0.5;
  double magnitude_max = 1.5;
  int min_length = 6;
  int max_length = 16;
  double margin = 0.5;
  double polar_token_prob = 0.55;  // chance a position draws from the signed lexicon
  double noise_rate = 0.0;         // fraction of labels flipped after generation
  int count = 1000;
  std::uint64_t seed = 1;
};

Corpus generate_synthetic(const SyntheticSpec& spec);

/// Signed impact of every vocabulary id in the corpus generate_synthetic
/// builds for the same spec (reserved ids are 0). Lets tests recompute the
/// label rule independently.
std::vector<double> synthetic_token_impacts(const SyntheticSpec& spec);

/// Seeded shuffle, then contiguous partition with sizes floor(f*N) for the
/// first two splits and the remainder in the third.
std::array<Corpus, 3> split_corpus(const Corpus& corpus, double train_fraction,
                                   double val_fraction, double test_fraction, std::uint64_t seed);

}  // namespace faithbench

#endif
