#include <benchmark/benchmark.h>

#include "protoner/corpus.hpp"
#include "protoner/episodes.hpp"
#include "protoner/objective.hpp"
#include "protoner/pipeline.hpp"

using namespace protoner;

namespace {

SyntheticCorpora make_corpora() {
  SyntheticSpec spec;
  spec.n_classes = 8;
  spec.entities_per_class = 4;
  spec.context_vocab_per_class = 6;
  spec.rho = 0.8;
  spec.sentences = 2000;
  spec.seed = 1;
  return synth_confounded_corpus(spec);
}

void BM_EncodeSentence(benchmark::State& state) {
  EncoderConfig cfg;
  EncoderState enc = init_encoder(cfg);
  Sentence s;
  for (int i = 0; i < 7; ++i) {
    s.tokens.push_back("tok" + std::to_string(i));
    s.labels.push_back("O");
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_tokens(enc, s, false));
  }
}
BENCHMARK(BM_EncodeSentence);

void BM_SampleEpisode(benchmark::State& state) {
  SyntheticCorpora corpora = make_corpora();
  ClassIndex index = build_class_index(corpora.train);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        sample_episode(corpora.train, index, 5, 5, 10, 1, seed++));
  }
}
BENCHMARK(BM_SampleEpisode);

void BM_Mmd(benchmark::State& state) {
  Rng rng(3);
  std::vector<Vec> a, b;
  for (int i = 0; i < 64; ++i) {
    Vec v(32), w(32);
    for (double& x : v) x = rng.uniform_real();
    for (double& x : w) x = rng.uniform_real() + 0.25;
    a.push_back(v);
    b.push_back(w);
  }
  MMDConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mmd(a, b, cfg));
  }
}
BENCHMARK(BM_Mmd);

void BM_EpisodeLossAndGrads(benchmark::State& state) {
  SyntheticCorpora corpora = make_corpora();
  ClassIndex index = build_class_index(corpora.train);
  RunConfig config;
  config.way = 5;
  config.shot_lo = 5;
  config.shot_hi = 10;
  EncoderState enc = init_encoder(encoder_config_of(config));
  Episode ep = sample_episode(corpora.train, index, 5, 5, 10, 1, 7);
  LossFlags flags;
  flags.span = true;
  MMDConfig mmd_cfg = mmd_config_of(config);
  EncoderGrads grads = zero_grads(enc);
  for (auto _ : state) {
    grads.zero();
    benchmark::DoNotOptimize(
        episode_loss(enc, ep, flags, nullptr, mmd_cfg, 1.0, 1.0, true, 9, nullptr, &grads));
  }
}
BENCHMARK(BM_EpisodeLossAndGrads);

}  // namespace

BENCHMARK_MAIN();
