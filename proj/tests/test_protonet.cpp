#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "protoner/corpus.hpp"
#include "protoner/errors.hpp"
#include "protoner/protonet.hpp"

using namespace protoner;

TEST_CASE("class_prototypes: single vectors, means, and errors") {
  std::map<std::string, std::vector<Vec>> by_label;
  by_label["a"] = {{1.0, 2.0}};
  by_label["b"] = {{0.0, 0.0}, {2.0, 2.0}};
  auto protos = class_prototypes(by_label);
  CHECK(protos["a"] == Vec{1.0, 2.0});
  CHECK(protos["b"] == Vec{1.0, 1.0});

  by_label["empty"] = {};
  CHECK_THROWS_AS(class_prototypes(by_label), ConfigError);
}

TEST_CASE("class_prototypes matches the naive mean oracle") {
  Rng rng(31);
  for (int it = 0; it < 200; ++it) {
    std::map<std::string, std::vector<Vec>> by_label;
    int classes = 1 + static_cast<int>(rng.uniform(4));
    std::size_t dim = 2 + rng.uniform(6);
    for (int c = 0; c < classes; ++c) {
      by_label["c" + std::to_string(c)] =
          oracle::random_vecs(rng, 1 + rng.uniform(6), dim);
    }
    auto protos = class_prototypes(by_label);
    for (const auto& [label, vecs] : by_label) {
      Vec want = oracle::naive_mean(vecs);
      for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(protos[label][i] == doctest::Approx(want[i]).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("sq_euclid: zero, 3-4-5, dimension mismatch, oracle") {
  CHECK(sq_euclid(Vec{1.0, 2.0}, Vec{1.0, 2.0}) == 0.0);
  CHECK(sq_euclid(Vec{0.0, 0.0}, Vec{3.0, 4.0}) == 25.0);
  CHECK_THROWS_AS(sq_euclid(Vec{1.0}, Vec{1.0, 2.0}), ConfigError);

  Rng rng(32);
  for (int it = 0; it < 200; ++it) {
    std::size_t dim = 1 + rng.uniform(8);
    Vec a = oracle::random_vec(rng, dim);
    Vec b = oracle::random_vec(rng, dim);
    CHECK(sq_euclid(a, b) == doctest::Approx(oracle::naive_sq_dist(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("reweight_supports: symmetry, closed form, errors") {
  // all supports equidistant -> uniform
  Vec q{0.0, 0.0};
  std::vector<Vec> eq = {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}, {0.0, -1.0}};
  Vec w = reweight_supports(q, eq, 1.0);
  for (double v : w) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  // squared distances 0 and ln 2 at tau=1 -> (2/3, 1/3)
  double r = std::sqrt(std::log(2.0));
  std::vector<Vec> two = {{0.0, 0.0}, {r, 0.0}};
  Vec w2 = reweight_supports(q, two, 1.0);
  CHECK(w2[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(w2[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS_AS(reweight_supports(q, {}, 1.0), ConfigError);
  CHECK_THROWS_AS(reweight_supports(q, eq, 0.0), ConfigError);
}

TEST_CASE("reweight_supports matches the softmax oracle; weights are convex") {
  Rng rng(33);
  for (int it = 0; it < 200; ++it) {
    std::size_t dim = 1 + rng.uniform(6);
    double tau = 0.25 + rng.uniform_real() * 4.0;
    Vec q = oracle::random_vec(rng, dim);
    std::vector<Vec> sup = oracle::random_vecs(rng, 1 + rng.uniform(7), dim);
    Vec got = reweight_supports(q, sup, tau);
    std::vector<double> want = oracle::naive_reweight(q, sup, tau);
    double sum = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
      CHECK(got[i] > 0.0);
      sum += got[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("reweighted_prototypes: K=1 equals class_prototypes bitwise") {
  std::map<std::string, std::vector<Vec>> by_label;
  by_label["a"] = {{0.3, -0.7, 1.1}};
  by_label["b"] = {{-2.0, 0.25, 0.125}};
  Vec q{0.5, 0.5, 0.5};
  auto plain = class_prototypes(by_label);
  auto rw = reweighted_prototypes(q, by_label, 1.0);
  CHECK(rw == plain);  // exact bit equality
}

TEST_CASE("reweighted_prototypes: equidistant supports equal the plain mean") {
  std::map<std::string, std::vector<Vec>> by_label;
  by_label["a"] = {{1.0, 0.0}, {-1.0, 0.0}};  // both at distance 1 from origin
  Vec q{0.0, 0.0};
  auto rw = reweighted_prototypes(q, by_label, 1.0);
  auto plain = class_prototypes(by_label);
  CHECK(rw["a"][0] == doctest::Approx(plain["a"][0]).epsilon(1e-12));
  CHECK(rw["a"][1] == doctest::Approx(plain["a"][1]).epsilon(1e-12));
}

TEST_CASE("reweighted_prototypes: weighted-sum oracle and convex hull") {
  Rng rng(34);
  for (int it = 0; it < 200; ++it) {
    std::size_t dim = 2 + rng.uniform(5);
    Vec q = oracle::random_vec(rng, dim);
    std::map<std::string, std::vector<Vec>> by_label;
    by_label["x"] = oracle::random_vecs(rng, 2 + rng.uniform(5), dim);
    auto rw = reweighted_prototypes(q, by_label, 1.5);
    std::vector<double> alpha = oracle::naive_reweight(q, by_label["x"], 1.5);
    for (std::size_t i = 0; i < dim; ++i) {
      double want = 0.0;
      for (std::size_t k = 0; k < alpha.size(); ++k) want += alpha[k] * by_label["x"][k][i];
      CHECK(rw["x"][i] == doctest::Approx(want).epsilon(1e-6));
      // convex hull along each coordinate
      double lo = by_label["x"][0][i], hi = lo;
      for (const Vec& s : by_label["x"]) {
        lo = std::min(lo, s[i]);
        hi = std::max(hi, s[i]);
      }
      CHECK(rw["x"][i] >= lo - 1e-9);
      CHECK(rw["x"][i] <= hi + 1e-9);
    }
  }
}

TEST_CASE("span_prototypes: examples and errors") {
  auto [pe, pn] = span_prototypes({{1.0, 0.0}}, {{0.0, 1.0}});
  CHECK(pe == Vec{1.0, 0.0});
  CHECK(pn == Vec{0.0, 1.0});

  auto [pe2, pn2] = span_prototypes({{2.0, 2.0}, {2.0, 2.0}}, {{0.0, 0.0}});
  CHECK(pe2 == Vec{2.0, 2.0});

  CHECK_THROWS_AS(span_prototypes({}, {{0.0}}), ConfigError);
  CHECK_THROWS_AS(span_prototypes({{0.0}}, {}), ConfigError);
}

TEST_CASE("span_scores: equidistant token and closed form") {
  auto [lpe, lpn] = span_scores({0.0, 0.0}, {1.0, 0.0}, {-1.0, 0.0});
  CHECK(lpe == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(lpn == doctest::Approx(std::log(0.5)).epsilon(1e-12));

  // token at the entity prototype, non-entity prototype at squared distance 10
  Vec token{0.0, 0.0};
  Vec pe{0.0, 0.0};
  Vec pn{std::sqrt(10.0), 0.0};
  auto [le, ln_] = span_scores(token, pe, pn);
  double want = 1.0 / (1.0 + std::exp(-10.0));
  CHECK(std::exp(le) == doctest::Approx(want).epsilon(1e-12));
  CHECK(std::exp(ln_) == doctest::Approx(1.0 - want).epsilon(1e-9));
}

TEST_CASE("span_scores matches direct computation on random inputs") {
  Rng rng(35);
  for (int it = 0; it < 200; ++it) {
    std::size_t dim = 1 + rng.uniform(6);
    Vec t = oracle::random_vec(rng, dim);
    Vec pe = oracle::random_vec(rng, dim);
    Vec pn = oracle::random_vec(rng, dim);
    auto [le, ln_] = span_scores(t, pe, pn);
    auto want = oracle::naive_log_softmax(
        {-oracle::naive_sq_dist(t, pe), -oracle::naive_sq_dist(t, pn)});
    CHECK(le == doctest::Approx(want[0]).epsilon(1e-9));
    CHECK(ln_ == doctest::Approx(want[1]).epsilon(1e-9));
  }
}

TEST_CASE("fuse_logits: uniform span scores preserve the argmax") {
  std::map<std::string, double> lp = {{"O", -1.5}, {"a", -0.3}, {"b", -2.0}};
  double half = std::log(0.5);
  TokenPrediction fused = fuse_logits(lp, half, half);
  CHECK(fused.predicted == "a");
  for (const auto& [label, v] : fused.scores) {
    CHECK(v == doctest::Approx(lp[label] + half).epsilon(1e-12));
  }
}

TEST_CASE("fuse_logits: clamp forces non-O when the detector is certain") {
  // p_entity -> 1: non-entity log-prob clamps at -30
  std::map<std::string, double> lp = {{"O", -0.05}, {"a", -3.0}};
  TokenPrediction fused = fuse_logits(lp, -1e-9, -80.0);
  // fused(a) = -3 + ~0, fused(O) = -0.05 + (-30)
  CHECK(fused.predicted == "a");

  // and the reverse: certain non-entity pushes O up
  TokenPrediction fused2 = fuse_logits(lp, -80.0, -1e-9);
  CHECK(fused2.predicted == "O");
}

TEST_CASE("fuse_logits: ties break lexicographically") {
  std::map<std::string, double> lp = {{"b", -1.0}, {"a", -1.0}, {"O", -1.0}};
  TokenPrediction fused = fuse_logits(lp, std::log(0.5), std::log(0.5));
  CHECK(fused.predicted == "O");  // "O" < "a" < "b"
}

namespace {

struct MiniEpisode {
  std::map<std::string, std::vector<Vec>> by_label;
  PrototypeSet protos;
};

MiniEpisode porcellian_fixture() {
  MiniEpisode ep;
  ep.by_label["org"] = {{2.0, 1.0}, {2.0, 1.0}, {2.0, 1.0}};    // The Porcellian Club
  ep.by_label["team"] = {{2.0, -3.0}, {2.0, -3.0}};             // Nation Game
  ep.by_label["O"] = {{-2.0, 1.0}, {-2.0, 1.0}, {-2.0, 1.0}};   // year in of
  ep.protos.class_protos = class_prototypes(ep.by_label);
  std::vector<Vec> entity;
  for (const Vec& v : ep.by_label["org"]) entity.push_back(v);
  for (const Vec& v : ep.by_label["team"]) entity.push_back(v);
  auto [pe, pn] = span_prototypes(entity, ep.by_label["O"]);
  ep.protos.span_entity = pe;
  ep.protos.span_nonentity = pn;
  ep.protos.has_span = true;
  return ep;
}

}  // namespace

TEST_CASE("span detector suppresses 'the' in 'the year' but keeps 'The' in the club name") {
  MiniEpisode ep = porcellian_fixture();
  Matrix queries(2, 2);
  // lowercase 'the' embeds near O but class-closest to org
  queries.at(0, 0) = 0.1;
  queries.at(0, 1) = 1.0;
  // capital 'The' inside the club name embeds at the org prototype
  queries.at(1, 0) = 2.0;
  queries.at(1, 1) = 1.0;

  ClassifyFlags off;
  off.use_span = false;
  auto plain = classify_tokens(queries, ep.protos, off, ep.by_label, 1.0);
  CHECK(plain[0].predicted == "org");  // class scores alone over-trigger
  CHECK(plain[1].predicted == "org");

  ClassifyFlags on;
  on.use_span = true;
  auto fused = classify_tokens(queries, ep.protos, on, ep.by_label, 1.0);
  CHECK(fused[0].predicted == "O");    // detector suppresses the stray 'the'
  CHECK(fused[1].predicted == "org");  // entity 'The' survives
}

TEST_CASE("classify_tokens: query at a prototype wins; flags off equal plain protonet") {
  std::map<std::string, std::vector<Vec>> by_label;
  by_label["a"] = {{10.0, 0.0}};
  by_label["b"] = {{0.0, 10.0}};
  by_label["O"] = {{-10.0, -10.0}};
  PrototypeSet protos;
  protos.class_protos = class_prototypes(by_label);

  Matrix q(1, 2);
  q.at(0, 0) = 10.0;
  q.at(0, 1) = 0.0;
  auto preds = classify_tokens(q, protos, ClassifyFlags{}, by_label, 1.0);
  CHECK(preds[0].predicted == "a");

  // log-scores are exactly the log-softmax of negative squared distances
  auto want = oracle::naive_log_softmax(
      {-oracle::naive_sq_dist({10.0, 0.0}, protos.class_protos["O"]),
       -oracle::naive_sq_dist({10.0, 0.0}, protos.class_protos["a"]),
       -oracle::naive_sq_dist({10.0, 0.0}, protos.class_protos["b"])});
  CHECK(preds[0].scores["O"] == doctest::Approx(want[0]).epsilon(1e-12));
  CHECK(preds[0].scores["a"] == doctest::Approx(want[1]).epsilon(1e-12));
  CHECK(preds[0].scores["b"] == doctest::Approx(want[2]).epsilon(1e-12));
}

TEST_CASE("classify_tokens: K=1 reweighting is bitwise identical to plain") {
  std::map<std::string, std::vector<Vec>> by_label;
  by_label["a"] = {{0.3, -0.7}};
  by_label["b"] = {{1.5, 2.5}};
  by_label["O"] = {{-0.25, 0.75}};
  PrototypeSet protos;
  protos.class_protos = class_prototypes(by_label);

  Matrix q(3, 2);
  Rng rng(8);
  for (double& v : q.data) v = rng.uniform_real();

  ClassifyFlags plain;
  ClassifyFlags rw;
  rw.use_reweighting = true;
  auto a = classify_tokens(q, protos, plain, by_label, 1.0);
  auto b = classify_tokens(q, protos, rw, by_label, 1.0);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].predicted == b[i].predicted);
    for (const auto& [label, v] : a[i].scores) {
      CHECK(v == b[i].scores[label]);  // bitwise
    }
  }
}

TEST_CASE("classify_tokens matches a brute-force recomputation on random episodes") {
  Rng rng(36);
  for (int it = 0; it < 200; ++it) {
    std::size_t dim = 2 + rng.uniform(4);
    std::map<std::string, std::vector<Vec>> by_label;
    int classes = 2 + static_cast<int>(rng.uniform(3));
    for (int c = 0; c < classes; ++c) {
      by_label["c" + std::to_string(c)] =
          oracle::random_vecs(rng, 1 + rng.uniform(4), dim);
    }
    by_label["O"] = oracle::random_vecs(rng, 1 + rng.uniform(4), dim);

    PrototypeSet protos;
    protos.class_protos = class_prototypes(by_label);
    std::vector<Vec> ent, non;
    for (const auto& [label, vecs] : by_label) {
      for (const Vec& v : vecs) (label == "O" ? non : ent).push_back(v);
    }
    auto [pe, pn] = span_prototypes(ent, non);
    protos.span_entity = pe;
    protos.span_nonentity = pn;
    protos.has_span = true;

    bool use_rw = rng.uniform(2) == 0;
    bool use_span = rng.uniform(2) == 0;
    ClassifyFlags flags;
    flags.use_reweighting = use_rw;
    flags.use_span = use_span;
    double tau = 0.5 + rng.uniform_real();

    Matrix q(1, static_cast<int>(dim));
    Vec qv = oracle::random_vec(rng, dim);
    for (std::size_t i = 0; i < dim; ++i) q.at(0, static_cast<int>(i)) = qv[i];

    auto got = classify_tokens(q, protos, flags, by_label, tau);

    // independent recomputation
    std::vector<std::string> names;
    std::vector<double> z;
    for (const auto& [label, vecs] : by_label) {
      Vec proto;
      if (use_rw) {
        std::vector<double> alpha = oracle::naive_reweight(qv, vecs, tau);
        proto.assign(dim, 0.0);
        for (std::size_t k = 0; k < vecs.size(); ++k) {
          for (std::size_t i = 0; i < dim; ++i) proto[i] += alpha[k] * vecs[k][i];
        }
      } else {
        proto = oracle::naive_mean(vecs);
      }
      names.push_back(label);
      z.push_back(-oracle::naive_sq_dist(qv, proto));
    }
    std::vector<double> lp = oracle::naive_log_softmax(z);
    std::vector<double> final_scores = lp;
    if (use_span) {
      auto sp = oracle::naive_log_softmax({-oracle::naive_sq_dist(qv, pe),
                                           -oracle::naive_sq_dist(qv, pn)});
      for (std::size_t i = 0; i < names.size(); ++i) {
        double span_term = names[i] == "O" ? sp[1] : sp[0];
        final_scores[i] = std::max(lp[i], -30.0) + std::max(span_term, -30.0);
      }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < names.size(); ++i) {
      if (final_scores[i] > final_scores[best]) best = i;
    }
    CHECK(got[0].predicted == names[best]);
    for (std::size_t i = 0; i < names.size(); ++i) {
      CHECK(got[0].scores[names[i]] == doctest::Approx(final_scores[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("classify_tokens: consistent relabeling maps predictions") {
  std::map<std::string, std::vector<Vec>> by_label;
  by_label["alpha"] = {{3.0, 0.0}};
  by_label["beta"] = {{0.0, 3.0}};
  by_label["O"] = {{-3.0, -3.0}};
  PrototypeSet protos;
  protos.class_protos = class_prototypes(by_label);

  Matrix q(1, 2);
  q.at(0, 0) = 2.9;
  q.at(0, 1) = 0.1;
  auto before = classify_tokens(q, protos, ClassifyFlags{}, by_label, 1.0);

  std::map<std::string, std::vector<Vec>> renamed;
  renamed["zulu"] = by_label["alpha"];
  renamed["yankee"] = by_label["beta"];
  renamed["O"] = by_label["O"];
  PrototypeSet protos2;
  protos2.class_protos = class_prototypes(renamed);
  auto after = classify_tokens(q, protos2, ClassifyFlags{}, renamed, 1.0);

  CHECK(before[0].predicted == "alpha");
  CHECK(after[0].predicted == "zulu");
  CHECK(after[0].scores["zulu"] == doctest::Approx(before[0].scores["alpha"]).epsilon(1e-12));
}

TEST_CASE("classify_tokens: memory injects remembered classes as candidates") {
  std::map<std::string, std::vector<Vec>> by_label;
  by_label["person"] = {{-5.0, 5.0}};
  by_label["O"] = {{-1.0, 0.0}};
  PrototypeSet protos;
  protos.class_protos = class_prototypes(by_label);

  PrototypeMemory mem;
  mem.lambda = 0.5;
  mem.protos["language"] = {0.2, 0.2};

  Matrix q(1, 2);
  q.at(0, 0) = 0.2;
  q.at(0, 1) = 0.2;

  auto without = classify_tokens(q, protos, ClassifyFlags{}, by_label, 1.0, nullptr);
  CHECK(without[0].predicted == "O");
  auto with = classify_tokens(q, protos, ClassifyFlags{}, by_label, 1.0, &mem);
  CHECK(with[0].predicted == "language");
}
