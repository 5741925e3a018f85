#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace protoner {

inline constexpr const char* kOutsideLabel = "O";

// One pre-tokenized sentence with a label per token ("O" = non-entity).
struct Sentence {
  std::vector<std::string> tokens;
  std::vector<std::string> labels;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

// Contiguous run of tokens sharing one entity label; end is exclusive.
struct Span {
  int start = 0;
  int end = 0;
  std::string label;

  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

struct Corpus {
  std::vector<Sentence> sentences;
  std::set<std::string> label_set;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Parameters of the planted-confounder generator. With probability rho a
// sentence's context tokens come from the vocabulary correlated with its
// class; otherwise from a shared neutral vocabulary.
struct SyntheticSpec {
  int n_classes = 5;
  int entities_per_class = 4;
  int context_vocab_per_class = 6;
  double rho = 0.8;
  int sentences = 1000;
  std::uint64_t seed = 1;
};

struct SyntheticCorpora {
  Corpus train;
  Corpus test_confounded;
  Corpus test_anticonfounded;
};

struct CorpusStats {
  std::map<std::string, long> entity_counts;  // per-class mention counts
  long sentence_count = 0;
  long token_count = 0;
};

enum class CorpusFormat { fewnerd };

Corpus parse_corpus(const std::filesystem::path& path,
                    CorpusFormat format = CorpusFormat::fewnerd);
Corpus parse_corpus_text(std::string_view text);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
std::string corpus_to_text(const Corpus& corpus);

// Maximal runs of identical non-"O" labels, sorted by start.
std::vector<Span> extract_spans(const Sentence& sentence);

// Inverse of extract_spans for a given length; gaps become "O".
std::vector<std::string> spans_to_labels(const std::vector<Span>& spans, int len);

SyntheticCorpora synth_confounded_corpus(const SyntheticSpec& spec);

CorpusStats corpus_stats(const Corpus& corpus);

// Throws ParseError if a corpus invariant is violated.
void validate_corpus(const Corpus& corpus);

}  // namespace protoner
