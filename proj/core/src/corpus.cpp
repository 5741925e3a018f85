#include "protoner/corpus.hpp"

#include <fstream>
#include <sstream>

#include "protoner/errors.hpp"
#include "protoner/rng.hpp"

namespace protoner {

namespace {

bool has_forbidden_char(const std::string& s) {
  return s.empty() || s.find('\t') != std::string::npos ||
         s.find('\n') != std::string::npos || s.find('\r') != std::string::npos;
}

}  // namespace

Corpus parse_corpus_text(std::string_view text) {
  Corpus corpus;
  Sentence current;
  bool prev_blank = true;  // file start behaves like a fresh boundary
  long line_no = 0;

  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    bool last = eol == std::string_view::npos;
    std::string_view line = text.substr(pos, last ? text.size() - pos : eol - pos);
    if (last && line.empty()) break;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (line.empty()) {
      if (prev_blank) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": consecutive blank lines (sentences are separated by exactly one)");
      }
      corpus.sentences.push_back(std::move(current));
      current = Sentence{};
      prev_blank = true;
    } else {
      std::size_t tab = line.find('\t');
      if (tab == std::string_view::npos || tab == 0 || tab + 1 >= line.size() ||
          line.find('\t', tab + 1) != std::string_view::npos) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected <token>\\t<label>");
      }
      current.tokens.emplace_back(line.substr(0, tab));
      current.labels.emplace_back(line.substr(tab + 1));
      if (current.labels.back() != kOutsideLabel) {
        corpus.label_set.insert(current.labels.back());
      }
      prev_blank = false;
    }
    if (last) break;
    pos = eol + 1;
  }

  if (!current.tokens.empty()) corpus.sentences.push_back(std::move(current));
  if (corpus.sentences.empty()) throw ParseError("empty corpus file");
  return corpus;
}

Corpus parse_corpus(const std::filesystem::path& path, CorpusFormat) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus_text(buf.str());
}

std::string corpus_to_text(const Corpus& corpus) {
  validate_corpus(corpus);
  std::string out;
  for (const Sentence& s : corpus.sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (has_forbidden_char(s.tokens[i]) || has_forbidden_char(s.labels[i])) {
        throw ParseError("token or label not representable in the tab-separated format: '" +
                         s.tokens[i] + "' / '" + s.labels[i] + "'");
      }
      out += s.tokens[i];
      out += '\t';
      out += s.labels[i];
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::string text = corpus_to_text(corpus);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Span> extract_spans(const Sentence& sentence) {
  std::vector<Span> spans;
  const int n = static_cast<int>(sentence.labels.size());
  int i = 0;
  while (i < n) {
    if (sentence.labels[i] == kOutsideLabel) {
      ++i;
      continue;
    }
    int j = i + 1;
    while (j < n && sentence.labels[j] == sentence.labels[i]) ++j;
    spans.push_back(Span{i, j, sentence.labels[i]});
    i = j;
  }
  return spans;
}

std::vector<std::string> spans_to_labels(const std::vector<Span>& spans, int len) {
  std::vector<std::string> labels(static_cast<std::size_t>(len), kOutsideLabel);
  for (const Span& sp : spans) {
    for (int i = sp.start; i < sp.end; ++i) labels[static_cast<std::size_t>(i)] = sp.label;
  }
  return labels;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats st;
  for (const std::string& label : corpus.label_set) st.entity_counts[label] = 0;
  for (const Sentence& s : corpus.sentences) {
    ++st.sentence_count;
    st.token_count += static_cast<long>(s.tokens.size());
    for (const Span& sp : extract_spans(s)) ++st.entity_counts[sp.label];
  }
  return st;
}

void validate_corpus(const Corpus& corpus) {
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const Sentence& s = corpus.sentences[i];
    if (s.tokens.empty() || s.tokens.size() != s.labels.size()) {
      throw ParseError("sentence " + std::to_string(i) +
                       ": token/label lengths invalid");
    }
    for (const std::string& label : s.labels) {
      if (label != kOutsideLabel && !corpus.label_set.contains(label)) {
        throw ParseError("sentence " + std::to_string(i) + ": label '" + label +
                         "' not in the corpus label set");
      }
    }
  }
}

namespace {

struct SynthVocab {
  // context token group g is shared between train class g and test class g
  std::vector<std::vector<std::string>> context_groups;
  std::vector<std::string> neutral;
  // [class][form] -> token sequence of length 1 or 2
  std::vector<std::vector<std::vector<std::string>>> train_forms;
  std::vector<std::vector<std::vector<std::string>>> test_forms;
};

SynthVocab build_vocab(const SyntheticSpec& spec) {
  SynthVocab v;
  v.context_groups.resize(static_cast<std::size_t>(spec.n_classes));
  for (int g = 0; g < spec.n_classes; ++g) {
    for (int k = 0; k < spec.context_vocab_per_class; ++k) {
      v.context_groups[g].push_back("ctx" + std::to_string(g) + "_" + std::to_string(k));
    }
  }
  int neutral_size = std::max(8, 2 * spec.context_vocab_per_class);
  for (int k = 0; k < neutral_size; ++k) v.neutral.push_back("neu" + std::to_string(k));

  auto make_forms = [&](const char* side) {
    std::vector<std::vector<std::vector<std::string>>> forms(
        static_cast<std::size_t>(spec.n_classes));
    for (int c = 0; c < spec.n_classes; ++c) {
      for (int j = 0; j < spec.entities_per_class; ++j) {
        std::string stem = std::string("ent_") + side + std::to_string(c) + "_" +
                           std::to_string(j);
        if (j % 2 == 1) {
          forms[c].push_back({stem + "a", stem + "b"});
        } else {
          forms[c].push_back({stem});
        }
      }
    }
    return forms;
  };
  v.train_forms = make_forms("src");
  v.test_forms = make_forms("tgt");
  return v;
}

enum class ContextMode { correlated, flipped };

Corpus generate_split(const SyntheticSpec& spec, const SynthVocab& vocab,
                      bool train_side, ContextMode mode, Rng& rng) {
  const auto& forms = train_side ? vocab.train_forms : vocab.test_forms;
  const char* prefix = train_side ? "src-c" : "tgt-c";

  Corpus corpus;
  for (int c = 0; c < spec.n_classes; ++c) {
    corpus.label_set.insert(prefix + std::to_string(c));
  }

  for (int s = 0; s < spec.sentences; ++s) {
    int cls = s % spec.n_classes;  // balanced classes keep sampling feasible
    std::string label = prefix + std::to_string(cls);

    const auto& form =
        forms[cls][rng.uniform(static_cast<std::uint64_t>(spec.entities_per_class))];

    const std::vector<std::string>* ctx_pool = &vocab.neutral;
    if (rng.uniform_real() < spec.rho) {
      int group = cls;
      if (mode == ContextMode::flipped && spec.n_classes > 1) {
        group = static_cast<int>(rng.uniform(static_cast<std::uint64_t>(spec.n_classes - 1)));
        if (group >= cls) ++group;
      }
      ctx_pool = &vocab.context_groups[group];
    }
    auto draw_ctx = [&]() {
      return (*ctx_pool)[rng.uniform(ctx_pool->size())];
    };

    Sentence sent;
    sent.tokens = {draw_ctx(), draw_ctx()};
    sent.labels = {kOutsideLabel, kOutsideLabel};
    for (const std::string& tok : form) {
      sent.tokens.push_back(tok);
      sent.labels.push_back(label);
    }
    sent.tokens.push_back(draw_ctx());
    sent.tokens.push_back(draw_ctx());
    sent.labels.push_back(kOutsideLabel);
    sent.labels.push_back(kOutsideLabel);
    corpus.sentences.push_back(std::move(sent));
  }
  return corpus;
}

}  // namespace

SyntheticCorpora synth_confounded_corpus(const SyntheticSpec& spec) {
  if (spec.rho < 0.0 || spec.rho > 1.0) {
    throw ConfigError("rho must be in [0,1]");
  }
  if (spec.n_classes < 1 || spec.entities_per_class < 1 ||
      spec.context_vocab_per_class < 1 || spec.sentences < 1) {
    throw ConfigError("synthetic spec counts must be >= 1");
  }

  SynthVocab vocab = build_vocab(spec);
  SyntheticCorpora out;
  {
    Rng rng(mix_seed(spec.seed, 101));
    out.train = generate_split(spec, vocab, true, ContextMode::correlated, rng);
  }
  {
    Rng rng(mix_seed(spec.seed, 102));
    out.test_confounded = generate_split(spec, vocab, false, ContextMode::correlated, rng);
  }
  {
    Rng rng(mix_seed(spec.seed, 103));
    out.test_anticonfounded = generate_split(spec, vocab, false, ContextMode::flipped, rng);
  }
  return out;
}

}  // namespace protoner
