#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "protoner/intervention.hpp"

using namespace protoner;

namespace {

Sentence pigeons_sentence() {
  return Sentence{{"pigeons", "in", "the", "square"}, {"animal", "O", "O", "O"}};
}

}  // namespace

TEST_CASE("build_pool: collects deduplicated same-class forms") {
  std::vector<Sentence> scope = {
      pigeons_sentence(),
      {{"a", "dog", "barks"}, {"O", "animal", "O"}},
      {{"a", "dog", "sleeps"}, {"O", "animal", "O"}},  // duplicate form
  };
  ReplacementPool pool = build_pool(scope, {"animal"});
  REQUIRE(pool.forms.at("animal").size() == 2);
  CHECK(pool.forms.at("animal")[0] == std::vector<std::string>{"pigeons"});
  CHECK(pool.forms.at("animal")[1] == std::vector<std::string>{"dog"});
}

TEST_CASE("build_pool: single unique form and class filtering") {
  std::vector<Sentence> scope = {pigeons_sentence()};
  ReplacementPool pool = build_pool(scope, {"animal"});
  CHECK(pool.forms.at("animal").size() == 1);

  ReplacementPool filtered = build_pool(scope, {"location"});
  CHECK(filtered.forms.empty());
}

TEST_CASE("build_pool counts match a brute-force scan") {
  Rng rng(41);
  for (int it = 0; it < 50; ++it) {
    Corpus c = oracle::random_corpus(rng);
    std::vector<std::string> classes(c.label_set.begin(), c.label_set.end());
    ReplacementPool pool = build_pool(c.sentences, classes);
    // oracle: set of token sequences per label
    std::map<std::string, std::set<std::vector<std::string>>> want;
    for (const Sentence& s : c.sentences) {
      for (const auto& sp : oracle::run_length_spans(s.labels)) {
        want[sp.label].insert(std::vector<std::string>(
            s.tokens.begin() + sp.start, s.tokens.begin() + sp.end));
      }
    }
    for (const auto& [label, forms] : want) {
      CHECK(pool.forms.at(label).size() == forms.size());
    }
  }
}

TEST_CASE("enumerate_replacements: the figure example") {
  ReplacementPool pool;
  pool.forms["animal"] = {{"pigeons"}, {"dog"}};
  auto out = enumerate_replacements(pigeons_sentence(), pool, 32);
  REQUIRE(out.size() == 1);
  CHECK(out[0].tokens == std::vector<std::string>{"dog", "in", "the", "square"});
  CHECK(out[0].labels == std::vector<std::string>{"animal", "O", "O", "O"});
}

TEST_CASE("enumerate_replacements: pool holding only the original yields nothing") {
  ReplacementPool pool;
  pool.forms["animal"] = {{"pigeons"}};
  CHECK(enumerate_replacements(pigeons_sentence(), pool, 32).empty());

  ReplacementPool empty;
  CHECK(enumerate_replacements(pigeons_sentence(), empty, 32).empty());
}

TEST_CASE("enumerate_replacements: multi-token splice changes length and labels") {
  ReplacementPool pool;
  pool.forms["animal"] = {{"pigeons"}, {"sea", "gulls"}};
  auto out = enumerate_replacements(pigeons_sentence(), pool, 32);
  REQUIRE(out.size() == 1);
  CHECK(out[0].tokens ==
        std::vector<std::string>{"sea", "gulls", "in", "the", "square"});
  CHECK(out[0].labels ==
        std::vector<std::string>{"animal", "animal", "O", "O", "O"});

  // truncation applies after splicing
  auto truncated = enumerate_replacements(pigeons_sentence(), pool, 3);
  REQUIRE(truncated.size() == 1);
  CHECK(truncated[0].tokens == std::vector<std::string>{"sea", "gulls", "in"});
  CHECK(truncated[0].labels.size() == 3);
}

TEST_CASE("enumerate_replacements: output count formula on random sentences") {
  Rng rng(42);
  for (int it = 0; it < 200; ++it) {
    Corpus c = oracle::random_corpus(rng, 6, 8, 3);
    std::vector<std::string> classes(c.label_set.begin(), c.label_set.end());
    ReplacementPool pool = build_pool(c.sentences, classes);
    const Sentence& s = c.sentences[rng.uniform(c.sentences.size())];
    auto out = enumerate_replacements(s, pool, 64);
    std::size_t want = 0;
    for (const auto& sp : oracle::run_length_spans(s.labels)) {
      // the span's own form is always in a pool built from its corpus
      want += pool.forms.at(sp.label).size() - 1;
    }
    CHECK(out.size() == want);
  }
}

TEST_CASE("enumerate_replacements: tokens outside the span are untouched") {
  Rng rng(43);
  for (int it = 0; it < 100; ++it) {
    Corpus c = oracle::random_corpus(rng, 4, 8, 3);
    std::vector<std::string> classes(c.label_set.begin(), c.label_set.end());
    ReplacementPool pool = build_pool(c.sentences, classes);
    const Sentence& s = c.sentences[rng.uniform(c.sentences.size())];
    for (const Sentence& r : enumerate_replacements(s, pool, 64)) {
      // every replaced sentence still parses into spans of the same classes,
      // and its "O" tokens are a subsequence of the original's "O" tokens
      std::vector<std::string> orig_o, repl_o;
      for (std::size_t i = 0; i < s.tokens.size(); ++i) {
        if (s.labels[i] == "O") orig_o.push_back(s.tokens[i]);
      }
      for (std::size_t i = 0; i < r.tokens.size(); ++i) {
        if (r.labels[i] == "O") repl_o.push_back(r.tokens[i]);
      }
      CHECK(repl_o.size() == orig_o.size());
      CHECK(repl_o == orig_o);
    }
  }
}

TEST_CASE("augment_support: test mode is the identity") {
  Episode ep;
  ep.classes = {"animal"};
  ep.way = 1;
  ep.shot_lo = 1;
  ep.shot_hi = 2;
  ep.support = {pigeons_sentence()};
  ep.support_idx = {0};
  ep.support_original = 1;
  ReplacementPool pool;
  pool.forms["animal"] = {{"pigeons"}, {"dog"}};

  Episode same = augment_support(ep, pool, /*train_mode=*/false, 32);
  CHECK(same == ep);
}

TEST_CASE("augment_support: each sentence gains one replacement per alternative form") {
  Episode ep;
  ep.classes = {"animal", "city"};
  ep.way = 2;
  ep.shot_lo = 1;
  ep.shot_hi = 2;
  ep.support = {
      pigeons_sentence(),
      {{"dog", "runs"}, {"animal", "O"}},
      {{"in", "paris"}, {"O", "city"}},
      {{"near", "rome"}, {"O", "city"}},
  };
  ep.support_idx = {0, 1, 2, 3};
  ep.support_original = 4;

  ReplacementPool pool = build_pool(ep.support, ep.classes);
  Episode aug = augment_support(ep, pool, /*train_mode=*/true, 32);
  // two distinct forms per class, one span per sentence: +1 each
  CHECK(aug.support.size() == 8);
  CHECK(aug.support_original == 4);
  // validation ignores the augmented tail
  CHECK(validate_episode(aug).empty());
  for (std::size_t i = 4; i < aug.support.size(); ++i) {
    CHECK(aug.support_idx[i] == -1);
  }
}

TEST_CASE("update_memory: first episode, blend, and lambda extremes") {
  PrototypeMemory empty;
  empty.lambda = 0.5;
  std::map<std::string, Vec> current = {{"a", {2.0, 2.0}}};
  auto [combined, mem] = update_memory(empty, current);
  CHECK(combined.at("a") == Vec{2.0, 2.0});
  CHECK(mem.protos.at("a") == Vec{2.0, 2.0});

  PrototypeMemory half;
  half.lambda = 0.5;
  half.protos["a"] = {0.0, 0.0};
  auto [c2, m2] = update_memory(half, current);
  CHECK(c2.at("a") == Vec{1.0, 1.0});
  CHECK(m2.protos.at("a") == Vec{1.0, 1.0});

  PrototypeMemory zero;
  zero.lambda = 0.0;
  zero.protos["a"] = {9.0, 9.0};
  CHECK(update_memory(zero, current).first.at("a") == Vec{2.0, 2.0});

  PrototypeMemory one;
  one.lambda = 1.0;
  one.protos["a"] = {9.0, 9.0};
  auto [c3, m3] = update_memory(one, current);
  CHECK(c3.at("a") == Vec{9.0, 9.0});
  CHECK(m3.protos.at("a") == Vec{9.0, 9.0});  // first-seen prototype frozen
}

TEST_CASE("update_memory: key stability and untouched classes") {
  PrototypeMemory mem;
  mem.lambda = 0.5;
  mem.protos["a"] = {1.0};
  mem.protos["b"] = {5.0};
  std::map<std::string, Vec> current = {{"a", {3.0}}};
  auto [combined, updated] = update_memory(mem, current);
  CHECK(combined.size() == 1);
  CHECK(updated.protos.at("a") == Vec{2.0});
  CHECK(updated.protos.at("b") == Vec{5.0});  // absent classes stay put
}

TEST_CASE("update_memory equals iteratively folding the update") {
  Rng rng(44);
  for (int it = 0; it < 50; ++it) {
    double lambda = rng.uniform_real();
    int episodes = 2 + static_cast<int>(rng.uniform(6));
    std::vector<Vec> protos;
    for (int e = 0; e < episodes; ++e) protos.push_back(oracle::random_vec(rng, 3));

    // library path
    PrototypeMemory mem;
    mem.lambda = lambda;
    for (const Vec& p : protos) {
      mem = update_memory(mem, {{"c", p}}).second;
    }

    // oracle: explicit fold
    Vec state = protos[0];
    for (int e = 1; e < episodes; ++e) {
      for (std::size_t i = 0; i < state.size(); ++i) {
        state[i] = lambda * state[i] + (1.0 - lambda) * protos[static_cast<std::size_t>(e)][i];
      }
    }
    for (std::size_t i = 0; i < state.size(); ++i) {
      CHECK(mem.protos.at("c")[i] == doctest::Approx(state[i]).epsilon(1e-12));
    }
  }
}
