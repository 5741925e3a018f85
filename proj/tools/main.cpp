// protoner: few-shot NER training harness with intervention-based
// augmentation, prototype memory, sample reweighting, and a CE+MMD objective.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "protoner/checkpoint.hpp"
#include "protoner/config.hpp"
#include "protoner/corpus.hpp"
#include "protoner/episodes.hpp"
#include "protoner/errors.hpp"
#include "protoner/pipeline.hpp"
#include "protoner/plots.hpp"

namespace fs = std::filesystem;
using namespace protoner;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Missing input files are addressing mistakes, not runtime failures.
void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) {
    throw CLI::ValidationError(std::string(what) + " not found: " + path.string());
  }
}

int cmd_ingest(const fs::path& in, const fs::path& rewrite, bool stats) {
  Corpus corpus = parse_corpus(in);
  if (stats) {
    CorpusStats st = corpus_stats(corpus);
    std::cout << "sentences\t" << st.sentence_count << "\n";
    std::cout << "tokens\t" << st.token_count << "\n";
    for (const auto& [label, n] : st.entity_counts) {
      std::cout << "entities[" << label << "]\t" << n << "\n";
    }
  }
  if (!rewrite.empty()) {
    write_corpus(corpus, rewrite);
    std::cout << "rewrote " << corpus.sentences.size() << " sentences to " << rewrite
              << "\n";
  }
  return kExitOk;
}

int cmd_synth(const SyntheticSpec& spec, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  SyntheticCorpora out = synth_confounded_corpus(spec);
  write_corpus(out.train, out_dir / "train.txt");
  write_corpus(out.test_confounded, out_dir / "test_confounded.txt");
  write_corpus(out.test_anticonfounded, out_dir / "test_anticonfounded.txt");
  std::cout << "wrote " << (out_dir / "train.txt") << ", test_confounded.txt, "
            << "test_anticonfounded.txt (" << spec.sentences << " sentences each)\n";
  return kExitOk;
}

int cmd_sample(const fs::path& corpus_path, int way, int shot_lo, int shot_hi,
               int query, int episodes, std::uint64_t seed, const fs::path& out) {
  Corpus corpus = parse_corpus(corpus_path);
  ClassIndex index = build_class_index(corpus);
  std::vector<Episode> eps;
  for (int i = 0; i < episodes; ++i) {
    eps.push_back(sample_episode(corpus, index, way, shot_lo, shot_hi, query,
                                 mix_seed(seed, 40, static_cast<std::uint64_t>(i))));
  }
  write_episodes(eps, out);
  std::cout << "wrote " << eps.size() << " episodes to " << out << "\n";
  return kExitOk;
}

int cmd_train(const fs::path& config_path, const fs::path& corpus_path,
              const fs::path& target_path, const fs::path& out_dir) {
  RunConfig config = parse_config_file(config_path);
  Corpus corpus = parse_corpus(corpus_path);
  Corpus target;
  const Corpus* target_ptr = nullptr;
  if (!target_path.empty()) {
    target = parse_corpus(target_path);
    target_ptr = &target;
  }

  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "metrics.jsonl", std::ios::binary);
  if (!log) throw IoError("cannot open metrics log in " + out_dir.string());

  TrainResult result = train(config, corpus, target_ptr, &log);

  Checkpoint ckpt;
  ckpt.encoder = result.encoder;
  ckpt.memory = result.memory;
  ckpt.config = result.config;
  ckpt.train_classes = result.train_classes;
  save_checkpoint(ckpt, out_dir / "model.ckpt");
  std::cout << "trained " << config.episodes_train << " episodes over "
            << result.steps.size() << " steps; checkpoint at "
            << (out_dir / "model.ckpt") << "\n";
  return kExitOk;
}

int cmd_evaluate(const fs::path& ckpt_path, const fs::path& corpus_path, int episodes,
                 std::uint64_t seed, bool has_seed, const fs::path& log_path,
                 const fs::path& dump_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Corpus corpus = parse_corpus(corpus_path);
  RunConfig config = ckpt.config;
  if (episodes > 0) config.episodes_eval = episodes;
  if (has_seed) config.seed = seed;

  EvalResult result = evaluate(ckpt.encoder, ckpt.memory, config, corpus,
                               ckpt.train_classes);
  if (!log_path.empty()) {
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw IoError("cannot open log: " + log_path.string());
    log << result.metrics_jsonl;
  }
  if (!dump_path.empty()) {
    FeatureDump dump = dump_features(ckpt.encoder, config, corpus,
                                     std::min(config.episodes_eval, 50));
    write_feature_dump(dump, dump_path);
  }
  std::cout << "episodes\t" << result.episodes.size() << "\n";
  std::cout << "micro_p\t" << result.micro.precision << "\n";
  std::cout << "micro_r\t" << result.micro.recall << "\n";
  std::cout << "micro_f1\t" << result.micro.f1 << "\n";
  std::cout << "f1_mean\t" << result.f1_mean << "\n";
  std::cout << "f1_std\t" << result.f1_std << "\n";
  return kExitOk;
}

int cmd_ablate(const fs::path& config_path, const fs::path& train_path,
               const fs::path& eval_path, const std::string& shots,
               const std::vector<std::uint64_t>& seeds, const fs::path& out) {
  RunConfig config = parse_config_file(config_path);
  auto comma = shots.find(',');
  if (comma == std::string::npos) {
    throw CLI::ValidationError("--shots expects <lo>,<hi>");
  }
  config.shot_lo = std::stoi(shots.substr(0, comma));
  config.shot_hi = std::stoi(shots.substr(comma + 1));

  Corpus train_corpus = parse_corpus(train_path);
  Corpus eval_corpus = parse_corpus(eval_path);
  AblationTable table = ablate(config, train_corpus, eval_corpus, seeds, &std::cerr);
  std::string text = ablation_table_text(table);
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw IoError("cannot open table file: " + out.string());
    f << text;
  }
  std::cout << text;
  return kExitOk;
}

int cmd_plot_projection(const fs::path& input, const fs::path& output) {
  FeatureDump dump = read_feature_dump(input);
  Matrix coords = project_2d(dump.features);
  write_projection(coords, dump.labels, output);
  std::cout << "wrote " << coords.rows << " projected points to " << output << "\n";
  return kExitOk;
}

int cmd_plot_histogram(const fs::path& input, const fs::path& output, int bins) {
  FeatureDump dump = read_feature_dump(input);
  std::vector<Vec> source, target;
  for (std::size_t i = 0; i < dump.features.size(); ++i) {
    (dump.roles[i] == "target" ? target : source).push_back(dump.features[i]);
  }
  HistogramPair hist = histogram_pair(source, target, bins);
  write_histogram(hist, output);
  std::cout << "l1_distance\t" << hist.l1_normalized << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot NER harness: episodic prototypical training with "
               "entity-replacement augmentation, prototype memory, sample "
               "reweighting, and a CE+MMD objective"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "parse and inspect a corpus file");
  fs::path ingest_in, ingest_rewrite;
  bool ingest_stats = true;
  ingest->add_option("--in", ingest_in, "corpus file")->required();
  ingest->add_option("--rewrite", ingest_rewrite, "write the parsed corpus back out");
  ingest->add_flag("--stats,!--no-stats", ingest_stats, "print corpus statistics");

  // synth
  auto* synth = app.add_subcommand("synth", "generate the planted-confounder corpus");
  SyntheticSpec spec;
  fs::path synth_out;
  synth->add_option("--rho", spec.rho, "confounder strength in [0,1]");
  synth->add_option("--classes", spec.n_classes, "classes per split");
  synth->add_option("--entities", spec.entities_per_class, "entity forms per class");
  synth->add_option("--ctx-vocab", spec.context_vocab_per_class,
                    "context tokens per class vocabulary");
  synth->add_option("--sentences", spec.sentences, "sentences per split");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // sample
  auto* sample = app.add_subcommand("sample", "sample episodes to a records file");
  fs::path sample_corpus, sample_out;
  int sample_way = 5, sample_lo = 1, sample_hi = 2, sample_q = 1, sample_n = 100;
  std::uint64_t sample_seed = 1;
  sample->add_option("--corpus", sample_corpus, "corpus file")->required();
  sample->add_option("--way", sample_way, "classes per episode");
  sample->add_option("--shot-lo", sample_lo, "minimum support mentions per class");
  sample->add_option("--shot-hi", sample_hi, "maximum support mentions per class");
  sample->add_option("--query", sample_q, "query sentences per class");
  sample->add_option("--episodes", sample_n, "episode count");
  sample->add_option("--seed", sample_seed, "sampling seed");
  sample->add_option("--out", sample_out, "output records file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train on a corpus");
  fs::path train_config, train_corpus, train_target, train_out = "out";
  train_cmd->add_option("--config", train_config, "run config file")->required();
  train_cmd->add_option("--corpus", train_corpus, "training corpus")->required();
  train_cmd->add_option("--mmd-target-corpus", train_target,
                        "target corpus for mmd_target=test_support");
  train_cmd->add_option("--out-dir", train_out, "output directory");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  fs::path eval_ckpt, eval_corpus, eval_log, eval_dump;
  int eval_episodes = 0;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--corpus", eval_corpus, "evaluation corpus")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "override evaluation episode count");
  auto* seed_opt = eval_cmd->add_option("--seed", eval_seed, "override evaluation seed");
  eval_cmd->add_option("--log", eval_log, "write per-episode metric records here");
  eval_cmd->add_option("--dump-features", eval_dump, "write a per-token feature dump");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run the flag-matrix ablation");
  fs::path ab_config, ab_train, ab_eval, ab_out;
  std::string ab_shots = "1,2";
  std::vector<std::uint64_t> ab_seeds = {1, 2, 3, 4, 5};
  ablate_cmd->add_option("--config", ab_config, "run config file")->required();
  ablate_cmd->add_option("--train-corpus", ab_train, "training corpus")->required();
  ablate_cmd->add_option("--eval-corpus", ab_eval, "evaluation corpus")->required();
  ablate_cmd->add_option("--shots", ab_shots, "shot window, e.g. 1,2 or 5,10");
  ablate_cmd->add_option("--seeds", ab_seeds, "seed list");
  ablate_cmd->add_option("--out", ab_out, "table output file");

  // plot
  auto* plot = app.add_subcommand("plot", "emit analysis plot data");
  plot->require_subcommand(1);
  auto* proj = plot->add_subcommand("projection", "2D projection of a feature dump");
  fs::path proj_in, proj_out;
  proj->add_option("--input", proj_in, "feature dump")->required();
  proj->add_option("--output", proj_out, "scatter data file")->required();
  auto* hist = plot->add_subcommand("histogram", "source/target feature histograms");
  fs::path hist_in, hist_out;
  int hist_bins = 20;
  hist->add_option("--input", hist_in, "feature dump")->required();
  hist->add_option("--output", hist_out, "histogram data file")->required();
  hist->add_option("--bins", hist_bins, "bin count");

  try {
    app.parse(argc, argv);

    if (*ingest) {
      require_file(ingest_in, "corpus");
      return cmd_ingest(ingest_in, ingest_rewrite, ingest_stats);
    }
    if (*synth) return cmd_synth(spec, synth_out);
    if (*sample) {
      require_file(sample_corpus, "corpus");
      return cmd_sample(sample_corpus, sample_way, sample_lo, sample_hi, sample_q,
                        sample_n, sample_seed, sample_out);
    }
    if (*train_cmd) {
      require_file(train_config, "config");
      require_file(train_corpus, "corpus");
      if (!train_target.empty()) require_file(train_target, "target corpus");
      return cmd_train(train_config, train_corpus, train_target, train_out);
    }
    if (*eval_cmd) {
      require_file(eval_ckpt, "checkpoint");
      require_file(eval_corpus, "corpus");
      return cmd_evaluate(eval_ckpt, eval_corpus, eval_episodes, eval_seed,
                          seed_opt->count() > 0, eval_log, eval_dump);
    }
    if (*ablate_cmd) {
      require_file(ab_config, "config");
      require_file(ab_train, "corpus");
      require_file(ab_eval, "corpus");
      return cmd_ablate(ab_config, ab_train, ab_eval, ab_shots, ab_seeds, ab_out);
    }
    if (*plot) {
      if (*proj) {
        require_file(proj_in, "feature dump");
        return cmd_plot_projection(proj_in, proj_out);
      }
      require_file(hist_in, "feature dump");
      return cmd_plot_histogram(hist_in, hist_out, hist_bins);
    }
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
