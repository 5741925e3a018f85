#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "protoner/episodes.hpp"
#include "protoner/errors.hpp"

using namespace protoner;

namespace {

Corpus fig1a_corpus() {
  Corpus c;
  c.label_set.insert("animal");
  c.sentences.push_back({{"pigeons", "in", "the", "square"}, {"animal", "O", "O", "O"}});
  return c;
}

// way classes, `per_class` single-entity sentences each
Corpus grid_corpus(int way, int per_class) {
  Corpus c;
  for (int k = 0; k < way; ++k) {
    std::string label = "cls" + std::to_string(k);
    c.label_set.insert(label);
    for (int s = 0; s < per_class; ++s) {
      Sentence sent;
      sent.tokens = {"ctx", "e" + std::to_string(k) + "_" + std::to_string(s), "ctx2"};
      sent.labels = {"O", label, "O"};
      c.sentences.push_back(std::move(sent));
    }
  }
  return c;
}

}  // namespace

TEST_CASE("build_class_index: basics and full-scan oracle") {
  ClassIndex idx = build_class_index(fig1a_corpus());
  REQUIRE(idx.size() == 1);
  CHECK(idx.at("animal") == std::vector<int>{0});

  Corpus none;
  none.sentences.push_back({{"a"}, {"O"}});
  CHECK(build_class_index(none).empty());

  Rng rng(17);
  for (int it = 0; it < 30; ++it) {
    Corpus c = oracle::random_corpus(rng);
    ClassIndex got = build_class_index(c);
    // oracle: direct scan
    std::map<std::string, std::vector<int>> want;
    for (std::size_t i = 0; i < c.sentences.size(); ++i) {
      std::set<std::string> seen;
      for (const auto& sp : oracle::run_length_spans(c.sentences[i].labels)) {
        seen.insert(sp.label);
      }
      for (const std::string& l : seen) want[l].push_back(static_cast<int>(i));
    }
    CHECK(got.size() == want.size());
    for (const auto& [label, sentences] : want) CHECK(got.at(label) == sentences);
  }
}

TEST_CASE("sample_episode: 5-way 1~2-shot support counts stay in window") {
  Corpus c = grid_corpus(7, 6);
  ClassIndex idx = build_class_index(c);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Episode ep = sample_episode(c, idx, 5, 1, 2, 1, seed);
    CHECK(ep.classes.size() == 5);
    std::map<std::string, int> counts;
    for (const Sentence& s : ep.support) {
      for (const Span& sp : extract_spans(s)) ++counts[sp.label];
    }
    for (const std::string& cls : ep.classes) {
      CHECK(counts[cls] >= 1);
      CHECK(counts[cls] <= 2);
    }
    CHECK(validate_episode(ep).empty());
  }
}

TEST_CASE("sample_episode: two sentences per class forces the split") {
  Corpus c = grid_corpus(3, 2);
  ClassIndex idx = build_class_index(c);
  Episode ep = sample_episode(c, idx, 3, 1, 2, 1, 9);
  CHECK(validate_episode(ep).empty());
  // with exactly two sentences per class and Q=1, each class contributes one
  // support and one query sentence
  CHECK(ep.support.size() == 3);
  CHECK(ep.query.size() == 3);
}

TEST_CASE("sample_episode: determinism per seed") {
  Corpus c = grid_corpus(6, 5);
  ClassIndex idx = build_class_index(c);
  Episode a = sample_episode(c, idx, 4, 1, 2, 1, 1234);
  Episode b = sample_episode(c, idx, 4, 1, 2, 1, 1234);
  CHECK(a == b);
  Episode d = sample_episode(c, idx, 4, 1, 2, 1, 1235);
  CHECK(a != d);
}

TEST_CASE("sample_episode: infeasible sampling names the blocking class") {
  Corpus c = grid_corpus(2, 1);  // one sentence per class: no query possible
  ClassIndex idx = build_class_index(c);
  try {
    sample_episode(c, idx, 2, 1, 2, 1, 3);
    FAIL("expected SamplingError");
  } catch (const SamplingError& e) {
    CHECK(std::string(e.what()).find("cls") != std::string::npos);
  }
  CHECK_THROWS_AS(sample_episode(c, idx, 5, 1, 2, 0, 3), SamplingError);
}

TEST_CASE("sample_episode: masks out-of-episode classes to O") {
  Corpus c = grid_corpus(6, 4);
  // add a sentence that mixes two classes
  c.sentences.push_back({{"e0_mix", "x", "e1_mix"}, {"cls0", "O", "cls1"}});
  ClassIndex idx = build_class_index(c);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Episode ep = sample_episode(c, idx, 2, 1, 2, 1, seed);
    CHECK(validate_episode(ep).empty());
    for (const Sentence& s : ep.support) {
      for (const std::string& l : s.labels) {
        bool ok = l == "O" || std::find(ep.classes.begin(), ep.classes.end(), l) !=
                                  ep.classes.end();
        CHECK(ok);
      }
    }
  }
}

TEST_CASE("sample_episode: 1000 episodes pass the validator") {
  Corpus c = grid_corpus(12, 30);
  ClassIndex idx = build_class_index(c);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Episode ep = sample_episode(c, idx, 5, 1, 2, 1, seed);
    CHECK(validate_episode(ep).empty());
  }
}

TEST_CASE("validate_episode: clean episode and injected faults") {
  Corpus c = grid_corpus(5, 4);
  ClassIndex idx = build_class_index(c);
  Episode ep = sample_episode(c, idx, 3, 1, 2, 1, 5);
  REQUIRE(validate_episode(ep).empty());

  SUBCASE("support/query overlap is detected") {
    Episode bad = ep;
    bad.query[0] = bad.support[0];
    bad.query_idx[0] = bad.support_idx[0];
    auto v = validate_episode(bad);
    REQUIRE(!v.empty());
    CHECK(v[0].find("overlap") != std::string::npos);
  }

  SUBCASE("way mismatch is detected") {
    Episode bad = ep;
    bad.way = 4;
    CHECK(!validate_episode(bad).empty());
  }

  SUBCASE("shot window violation is detected") {
    Episode bad = ep;
    // drop every support sentence mentioning the first class
    const std::string victim = bad.classes[0];
    std::vector<Sentence> kept;
    std::vector<int> kept_idx;
    for (std::size_t i = 0; i < bad.support.size(); ++i) {
      bool mentions = false;
      for (const Span& sp : extract_spans(bad.support[i])) {
        if (sp.label == victim) mentions = true;
      }
      if (!mentions) {
        kept.push_back(bad.support[i]);
        kept_idx.push_back(bad.support_idx[i]);
      }
    }
    bad.support = kept;
    bad.support_idx = kept_idx;
    bad.support_original = static_cast<int>(kept.size());
    auto v = validate_episode(bad);
    REQUIRE(!v.empty());
    CHECK(v[0].find(victim) != std::string::npos);
  }

  SUBCASE("unmasked foreign label is detected") {
    Episode bad = ep;
    bad.support[0].labels[0] = "alien";
    auto v = validate_episode(bad);
    bool found = false;
    for (const std::string& msg : v) {
      if (msg.find("alien") != std::string::npos) found = true;
    }
    CHECK(found);
  }

  SUBCASE("fuzzed fault injection is always detected") {
    Rng rng(77);
    for (int it = 0; it < 100; ++it) {
      Episode bad = sample_episode(c, idx, 3, 1, 2, 1, 100 + it);
      switch (rng.uniform(3)) {
        case 0:
          bad.query[0] = bad.support[0];
          bad.query_idx[0] = bad.support_idx[0];
          break;
        case 1:
          bad.support[rng.uniform(bad.support.size())].labels[0] = "alien";
          break;
        default:
          bad.way = bad.way + 1;
          break;
      }
      CHECK(!validate_episode(bad).empty());
    }
  }
}

TEST_CASE("episode records round trip through the line format") {
  Corpus c = grid_corpus(5, 4);
  ClassIndex idx = build_class_index(c);
  std::vector<Episode> eps;
  for (std::uint64_t s = 0; s < 5; ++s) {
    eps.push_back(sample_episode(c, idx, 3, 1, 2, 1, s));
  }
  auto path = std::filesystem::temp_directory_path() / "protoner_episodes.jsonl";
  write_episodes(eps, path);
  std::vector<Episode> back = read_episodes(path, c);
  REQUIRE(back.size() == eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) CHECK(back[i] == eps[i]);
  std::filesystem::remove(path);
}
