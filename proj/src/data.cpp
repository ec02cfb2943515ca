#include "faithbench/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "faithbench/rng.hpp"

namespace faithbench {

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
  add("<mask>");
}

int Vocabulary::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int id = static_cast<int>(id_to_token_.size());
  id_to_token_.push_back(token);
  token_to_id_.emplace(token, id);
  return id;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("vocabulary: bad id " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& docs, int min_freq) {
  std::unordered_map<std::string, int> counts;
  std::vector<std::string> order;
  for (const auto& doc : docs) {
    for (const auto& tok : doc) {
      if (counts[tok]++ == 0) order.push_back(tok);
    }
  }
  Vocabulary vocab;
  for (const auto& tok : order) {
    if (counts[tok] >= min_freq) vocab.add(tok);
  }
  return vocab;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (char raw : text) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      if (!current.empty()) {
        out.push_back(current);
        current.clear();
      }
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) out.push_back(current);
  return out;
}

namespace {

struct RawRow {
  std::vector<std::string> tokens;
  int label;
};

std::vector<RawRow> read_rows(const std::string& path, CorpusFormat format) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_corpus: cannot open " + path);
  std::vector<RawRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    RawRow row;
    if (format == CorpusFormat::Tsv) {
      const std::size_t tab = line.find('\t');
      if (tab == std::string::npos)
        throw std::invalid_argument("load_corpus: " + path + ":" + std::to_string(line_no) +
                                    ": missing tab separator");
      row.tokens = tokenize(line.substr(0, tab));
      const std::string label_str = line.substr(tab + 1);
      try {
        std::size_t used = 0;
        row.label = std::stoi(label_str, &used);
        if (used != label_str.size() && label_str.find_first_not_of(" \r", used) != std::string::npos)
          throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw std::invalid_argument("load_corpus: " + path + ":" + std::to_string(line_no) +
                                    ": bad label '" + label_str + "'");
      }
    } else {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const std::exception& e) {
        throw std::invalid_argument("load_corpus: " + path + ":" + std::to_string(line_no) +
                                    ": invalid json (" + e.what() + ")");
      }
      if (!j.contains("text") || !j.contains("label") || !j["label"].is_number_integer())
        throw std::invalid_argument("load_corpus: " + path + ":" + std::to_string(line_no) +
                                    ": expected {\"text\": ..., \"label\": int}");
      row.tokens = tokenize(j["text"].get<std::string>());
      row.label = j["label"].get<int>();
    }
    if (row.tokens.empty())
      throw std::invalid_argument("load_corpus: " + path + ":" + std::to_string(line_no) +
                                  ": empty text");
    if (row.label < 0)
      throw std::invalid_argument("load_corpus: " + path + ":" + std::to_string(line_no) +
                                  ": negative label");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

Corpus load_corpus(const std::string& path, CorpusFormat format,
                   std::shared_ptr<Vocabulary> vocab, int min_freq, int num_classes) {
  std::vector<RawRow> rows = read_rows(path, format);
  Corpus corpus;
  if (!vocab) {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(rows.size());
    for (const auto& r : rows) docs.push_back(r.tokens);
    corpus.vocab = std::make_shared<Vocabulary>(Vocabulary::build(docs, min_freq));
    corpus.split_tag = "train";
  } else {
    corpus.vocab = std::move(vocab);
    corpus.split_tag = "eval";
  }
  int max_label = 0;
  for (const auto& r : rows) max_label = std::max(max_label, r.label);
  corpus.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].label >= corpus.num_classes)
      throw std::invalid_argument("load_corpus: " + path + ": label " +
                                  std::to_string(rows[i].label) + " out of range for " +
                                  std::to_string(corpus.num_classes) + " classes");
    Example ex;
    bool any_known = false;
    for (const auto& tok : rows[i].tokens) {
      const int id = corpus.vocab->lookup(tok);
      if (id != Vocabulary::kUnk) any_known = true;
      ex.ids.push_back(id);
    }
    ex.label = rows[i].label;
    ex.all_unknown = !any_known;
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

void export_corpus(const Corpus& corpus, const std::string& path, CorpusFormat format) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("export_corpus: cannot open " + path);
  for (const Example& ex : corpus.examples) {
    std::string text;
    for (std::size_t i = 0; i < ex.ids.size(); ++i) {
      if (i) text += ' ';
      text += corpus.vocab->token(ex.ids[i]);
    }
    if (format == CorpusFormat::Tsv) {
      out << text << '\t' << ex.label << '\n';
    } else {
      nlohmann::json j{{"text", text}, {"label", ex.label}};
      out << j.dump() << '\n';
    }
  }
}

void export_polarity_tags(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("export_polarity_tags: cannot open " + path);
  for (const Example& ex : corpus.examples) {
    for (std::size_t i = 0; i < ex.polarity.size(); ++i) {
      if (i) out << ' ';
      out << ex.polarity[i];
    }
    out << '\n';
  }
}

namespace {

struct LexEntry {
  int id;
  double impact;  // signed; 0 for neutral
};

struct Lexicon {
  std::vector<LexEntry> positive, negative, neutral;
};

void validate_synthetic(const SyntheticSpec& spec) {
  if (spec.min_length < 1 || spec.max_length < spec.min_length)
    throw std::invalid_argument("generate_synthetic: bad length range");
  if (spec.margin <= 0.0) throw std::invalid_argument("generate_synthetic: margin must be > 0");
  if (spec.positive_tokens < 1 || spec.negative_tokens < 1 || spec.neutral_tokens < 1)
    throw std::invalid_argument("generate_synthetic: each lexicon class needs at least one token");
}

Lexicon build_lexicon(const SyntheticSpec& spec, Vocabulary& vocab) {
  Lexicon lex;
  std::mt19937_64 rng = make_rng(spec.seed, 0);
  std::uniform_real_distribution<double> mag(spec.magnitude_min, spec.magnitude_max);
  for (int i = 0; i < spec.positive_tokens; ++i)
    lex.positive.push_back({vocab.add("pos" + std::to_string(i)), mag(rng)});
  for (int i = 0; i < spec.negative_tokens; ++i)
    lex.negative.push_back({vocab.add("neg" + std::to_string(i)), -mag(rng)});
  for (int i = 0; i < spec.neutral_tokens; ++i)
    lex.neutral.push_back({vocab.add("neu" + std::to_string(i)), 0.0});
  return lex;
}

}  // namespace

std::vector<double> synthetic_token_impacts(const SyntheticSpec& spec) {
  validate_synthetic(spec);
  Vocabulary vocab;
  const Lexicon lex = build_lexicon(spec, vocab);
  std::vector<double> impacts(static_cast<std::size_t>(vocab.size()), 0.0);
  for (const auto& pool : {lex.positive, lex.negative, lex.neutral})
    for (const LexEntry& e : pool) impacts[static_cast<std::size_t>(e.id)] = e.impact;
  return impacts;
}

Corpus generate_synthetic(const SyntheticSpec& spec) {
  validate_synthetic(spec);
  auto vocab = std::make_shared<Vocabulary>();
  const Lexicon lexicon = build_lexicon(spec, *vocab);
  const std::vector<LexEntry>& positive = lexicon.positive;
  const std::vector<LexEntry>& negative = lexicon.negative;
  const std::vector<LexEntry>& neutral = lexicon.neutral;
  std::mt19937_64 rng = make_rng(spec.seed, 1);

  Corpus corpus;
  corpus.vocab = vocab;
  corpus.num_classes = 2;
  corpus.split_tag = "synthetic";

  std::uniform_int_distribution<int> length_dist(spec.min_length, spec.max_length);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick_from = [&](const std::vector<LexEntry>& pool) -> const LexEntry& {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    return pool[d(rng)];
  };

  for (int n = 0; n < spec.count; ++n) {
    const int target = (n % 2 == 0) ? 1 : 0;  // alternate for exact class balance
    const int len = length_dist(rng);
    std::vector<LexEntry> drawn;
    double total = 0.0;
    for (int i = 0; i < len; ++i) {
      const double u = unit(rng);
      const LexEntry* e;
      if (u < spec.polar_token_prob) {
        e = unit(rng) < 0.5 ? &pick_from(negative) : &pick_from(positive);
      } else {
        e = &pick_from(neutral);
      }
      drawn.push_back(*e);
      total += e->impact;
    }
    // Force the signed sum past the margin for the target label by
    // replacing random positions with same-sign tokens.
    const auto& fix_pool = target == 1 ? positive : negative;
    std::uniform_int_distribution<int> pos_dist(0, len - 1);
    int guard = 0;
    while ((target == 1 && total < spec.margin) || (target == 0 && total > -spec.margin)) {
      const int at = pos_dist(rng);
      const LexEntry& repl = pick_from(fix_pool);
      total -= drawn[static_cast<std::size_t>(at)].impact;
      drawn[static_cast<std::size_t>(at)] = repl;
      total += repl.impact;
      if (++guard > 10000)
        throw std::runtime_error("generate_synthetic: failed to reach the label margin");
    }

    Example ex;
    for (const LexEntry& e : drawn) {
      ex.ids.push_back(e.id);
      ex.polarity.push_back(e.impact > 0 ? 1 : (e.impact < 0 ? -1 : 0));
    }
    ex.label = target;
    if (spec.noise_rate > 0.0 && unit(rng) < spec.noise_rate) ex.label = 1 - ex.label;
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

std::array<Corpus, 3> split_corpus(const Corpus& corpus, double train_fraction,
                                   double val_fraction, double test_fraction, std::uint64_t seed) {
  const double total = train_fraction + val_fraction + test_fraction;
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("split_corpus: fractions must sum to 1");
  const std::size_t n = corpus.examples.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng = make_rng(seed, 7);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));

  std::array<Corpus, 3> out;
  const char* tags[3] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s) {
    out[static_cast<std::size_t>(s)].vocab = corpus.vocab;
    out[static_cast<std::size_t>(s)].num_classes = corpus.num_classes;
    out[static_cast<std::size_t>(s)].split_tag = tags[s];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Example& ex = corpus.examples[order[i]];
    if (i < n_train)
      out[0].examples.push_back(ex);
    else if (i < n_train + n_val)
      out[1].examples.push_back(ex);
    else
      out[2].examples.push_back(ex);
  }
  return out;
}

}  // namespace faithbench
