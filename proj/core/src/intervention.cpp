#include "protoner/intervention.hpp"

#include <algorithm>

namespace protoner {

ReplacementPool build_pool(const std::vector<Sentence>& scope,
                           const std::vector<std::string>& classes) {
  ReplacementPool pool;
  for (const Sentence& s : scope) {
    for (const Span& sp : extract_spans(s)) {
      if (std::find(classes.begin(), classes.end(), sp.label) == classes.end()) {
        continue;
      }
      std::vector<std::string> form(s.tokens.begin() + sp.start,
                                    s.tokens.begin() + sp.end);
      auto& forms = pool.forms[sp.label];
      if (std::find(forms.begin(), forms.end(), form) == forms.end()) {
        forms.push_back(std::move(form));
      }
    }
  }
  return pool;
}

std::vector<Sentence> enumerate_replacements(const Sentence& sentence,
                                             const ReplacementPool& pool,
                                             int max_len) {
  std::vector<Sentence> out;
  for (const Span& sp : extract_spans(sentence)) {
    auto it = pool.forms.find(sp.label);
    if (it == pool.forms.end()) continue;
    std::vector<std::string> original(sentence.tokens.begin() + sp.start,
                                      sentence.tokens.begin() + sp.end);
    for (const auto& form : it->second) {
      if (form == original) continue;
      Sentence repl;
      repl.tokens.assign(sentence.tokens.begin(), sentence.tokens.begin() + sp.start);
      repl.labels.assign(sentence.labels.begin(), sentence.labels.begin() + sp.start);
      for (const std::string& tok : form) {
        repl.tokens.push_back(tok);
        repl.labels.push_back(sp.label);
      }
      repl.tokens.insert(repl.tokens.end(), sentence.tokens.begin() + sp.end,
                         sentence.tokens.end());
      repl.labels.insert(repl.labels.end(), sentence.labels.begin() + sp.end,
                         sentence.labels.end());
      if (max_len > 0 && static_cast<int>(repl.tokens.size()) > max_len) {
        repl.tokens.resize(static_cast<std::size_t>(max_len));
        repl.labels.resize(static_cast<std::size_t>(max_len));
      }
      out.push_back(std::move(repl));
    }
  }
  return out;
}

Episode augment_support(const Episode& episode, const ReplacementPool& pool,
                        bool train_mode, int max_len) {
  if (!train_mode) return episode;
  Episode out = episode;
  if (out.support_original < 0) {
    out.support_original = static_cast<int>(out.support.size());
  }
  const int originals = out.support_original;
  for (int i = 0; i < originals; ++i) {
    for (Sentence& repl :
         enumerate_replacements(out.support[static_cast<std::size_t>(i)], pool, max_len)) {
      out.support.push_back(std::move(repl));
      out.support_idx.push_back(-1);
    }
  }
  return out;
}

std::pair<std::map<std::string, Vec>, PrototypeMemory> update_memory(
    const PrototypeMemory& memory, const std::map<std::string, Vec>& current) {
  std::map<std::string, Vec> combined;
  PrototypeMemory updated = memory;
  const double lam = memory.lambda;
  for (const auto& [label, cur] : current) {
    auto it = memory.protos.find(label);
    if (it == memory.protos.end()) {
      combined[label] = cur;
    } else {
      Vec mix(cur.size());
      for (std::size_t i = 0; i < cur.size(); ++i) {
        mix[i] = lam * it->second[i] + (1.0 - lam) * cur[i];
      }
      combined[label] = std::move(mix);
    }
    updated.protos[label] = combined[label];
  }
  return {std::move(combined), std::move(updated)};
}

}  // namespace protoner
