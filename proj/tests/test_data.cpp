#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "faithbench/data.hpp"

using namespace faithbench;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("single-row tsv file round-trips") {
  const std::string path = temp_path("fb_one_row.tsv");
  {
    std::ofstream out(path);
    out << "Fast friendly service\t1\n";
  }
  Corpus c = load_corpus(path, CorpusFormat::Tsv, nullptr, 1);
  REQUIRE(c.examples.size() == 1);
  CHECK(c.examples[0].label == 1);
  REQUIRE(c.examples[0].ids.size() == 3);
  CHECK(c.vocab->token(c.examples[0].ids[0]) == "fast");
  CHECK(c.vocab->token(c.examples[0].ids[2]) == "service");

  const std::string exported = temp_path("fb_one_row_export.tsv");
  export_corpus(c, exported, CorpusFormat::Tsv);
  Corpus again = load_corpus(exported, CorpusFormat::Tsv, c.vocab);
  CHECK(again.examples[0].ids == c.examples[0].ids);
  std::remove(path.c_str());
  std::remove(exported.c_str());
}

TEST_CASE("unseen evaluation tokens map to UNK") {
  const std::string train_path = temp_path("fb_train.tsv");
  const std::string eval_path = temp_path("fb_eval.tsv");
  {
    std::ofstream t(train_path);
    t << "good good movie\t1\nbad bad movie\t0\n";
    std::ofstream e(eval_path);
    e << "glorious movie\t1\n";
  }
  Corpus train = load_corpus(train_path, CorpusFormat::Tsv, nullptr, 1);
  Corpus eval = load_corpus(eval_path, CorpusFormat::Tsv, train.vocab, 1, train.num_classes);
  CHECK(eval.examples[0].ids[0] == Vocabulary::kUnk);
  CHECK(eval.examples[0].ids[1] == train.vocab->lookup("movie"));
  CHECK_FALSE(eval.examples[0].all_unknown);
  std::remove(train_path.c_str());
  std::remove(eval_path.c_str());
}

TEST_CASE("vocabulary size on a crafted file matches the hand count") {
  // 10 rows; tokens with frequency >= 2: the, movie, good, bad (hand count),
  // plus 3 reserved ids.
  const std::string path = temp_path("fb_vocab.tsv");
  {
    std::ofstream out(path);
    out << "the movie was good\t1\n";
    out << "good movie\t1\n";
    out << "the acting\t0\n";
    out << "bad movie\t0\n";
    out << "bad ending\t0\n";
    out << "stellar cast\t1\n";
    out << "the good parts\t1\n";
    out << "a movie\t0\n";
    out << "dull\t0\n";
    out << "bright\t1\n";
  }
  Corpus c = load_corpus(path, CorpusFormat::Tsv, nullptr, 2);
  CHECK(c.vocab->size() == 3 + 4);
  CHECK(c.vocab->lookup("movie") != Vocabulary::kUnk);
  CHECK(c.vocab->lookup("stellar") == Vocabulary::kUnk);
  std::remove(path.c_str());
}

TEST_CASE("jsonl loading and malformed-row errors carry line numbers") {
  const std::string path = temp_path("fb_rows.jsonl");
  {
    std::ofstream out(path);
    out << R"({"text": "fine work", "label": 1})" << "\n";
    out << R"({"text": "broken)" << "\n";
  }
  try {
    load_corpus(path, CorpusFormat::JsonLines);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  std::remove(path.c_str());

  const std::string tsv = temp_path("fb_badlabel.tsv");
  {
    std::ofstream out(tsv);
    out << "ok\t1\nwat\tnine\n";
  }
  try {
    load_corpus(tsv, CorpusFormat::Tsv);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  std::remove(tsv.c_str());

  const std::string range = temp_path("fb_range.tsv");
  {
    std::ofstream out(range);
    out << "ok\t5\n";
  }
  CHECK_THROWS_AS(load_corpus(range, CorpusFormat::Tsv, nullptr, 2, 2), std::invalid_argument);
  std::remove(range.c_str());
}

TEST_CASE("synthetic corpora are deterministic and label-consistent") {
  SyntheticSpec spec;
  spec.count = 400;
  spec.seed = 31;
  Corpus a = generate_synthetic(spec);
  Corpus b = generate_synthetic(spec);
  REQUIRE(a.examples.size() == 400);
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    CHECK(a.examples[i].ids == b.examples[i].ids);
    CHECK(a.examples[i].label == b.examples[i].label);
    CHECK(a.examples[i].polarity.size() == a.examples[i].ids.size());
  }

  // noise-free labels obey the signed lexicon-sum rule with margin
  const std::vector<double> impacts = synthetic_token_impacts(spec);
  for (const Example& ex : a.examples) {
    double total = 0.0;
    for (std::size_t i = 0; i < ex.ids.size(); ++i) {
      total += impacts[static_cast<std::size_t>(ex.ids[i])];
      const double imp = impacts[static_cast<std::size_t>(ex.ids[i])];
      const int tag = ex.polarity[i];
      CHECK(((imp > 0 && tag == 1) || (imp < 0 && tag == -1) || (imp == 0 && tag == 0)));
    }
    if (ex.label == 1)
      CHECK(total >= spec.margin);
    else
      CHECK(total <= -spec.margin);
  }
}

TEST_CASE("an all-positive sequence is labeled positive") {
  SyntheticSpec spec;
  spec.count = 2000;
  spec.seed = 5;
  Corpus c = generate_synthetic(spec);
  bool found = false;
  for (const Example& ex : c.examples) {
    bool all_positive = true;
    for (int tag : ex.polarity)
      if (tag < 0) all_positive = false;
    bool has_positive = false;
    for (int tag : ex.polarity)
      if (tag > 0) has_positive = true;
    if (all_positive && has_positive) {
      found = true;
      CHECK(ex.label == 1);
    }
  }
  CHECK(found);
}

TEST_CASE("synthetic class balance stays within five percent over 10k examples") {
  SyntheticSpec spec;
  spec.count = 10000;
  spec.seed = 77;
  Corpus c = generate_synthetic(spec);
  int positives = 0;
  for (const Example& ex : c.examples) positives += ex.label;
  const double ratio = static_cast<double>(positives) / 10000.0;
  CHECK(ratio > 0.45);
  CHECK(ratio < 0.55);
}

TEST_CASE("split fractions produce exact floor sizes") {
  SyntheticSpec spec;
  spec.count = 100;
  spec.seed = 3;
  Corpus c = generate_synthetic(spec);
  auto parts = split_corpus(c, 0.8, 0.1, 0.1, 9);
  CHECK(parts[0].examples.size() == 80);
  CHECK(parts[1].examples.size() == 10);
  CHECK(parts[2].examples.size() == 10);

  auto all_train = split_corpus(c, 1.0, 0.0, 0.0, 9);
  CHECK(all_train[0].examples.size() == 100);
  CHECK(all_train[1].examples.size() == 0);
  CHECK(all_train[2].examples.size() == 0);
}

TEST_CASE("splits are disjoint and exhaustive") {
  SyntheticSpec spec;
  spec.count = 137;
  spec.seed = 4;
  Corpus c = generate_synthetic(spec);
  auto parts = split_corpus(c, 0.6, 0.2, 0.2, 12);
  std::multiset<std::vector<int>> seen;
  for (const auto& part : {parts[0], parts[1], parts[2]})
    for (const Example& ex : part.examples) seen.insert(ex.ids);
  std::multiset<std::vector<int>> original;
  for (const Example& ex : c.examples) original.insert(ex.ids);
  CHECK(seen == original);
}

TEST_CASE("tokenize lowercases and collapses whitespace") {
  auto toks = tokenize("  Good\tMOVIE  night ");
  REQUIRE(toks.size() == 3);
  CHECK(toks[0] == "good");
  CHECK(toks[1] == "movie");
  CHECK(toks[2] == "night");
}

TEST_SUITE_END();
