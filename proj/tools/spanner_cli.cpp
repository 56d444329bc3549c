// spanner: command-line front end for training, decoding and evaluation.

#include "spanner/checkpoint.hpp"
#include "spanner/config.hpp"
#include "spanner/dataset.hpp"
#include "spanner/decoding.hpp"
#include "spanner/errors.hpp"
#include "spanner/evaluation.hpp"
#include "spanner/training.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace spanner;

namespace {

// A directory argument stands for <dir>/<split>.bio.
Dataset load_split(const fs::path& path, const std::string& split) {
  const fs::path file = fs::is_directory(path) ? path / (split + ".bio") : path;
  Dataset data = read_conll_bio(file, split);
  data.validate();
  return data;
}

std::vector<ClassDescription> load_descriptions(const std::string& flag, const fs::path& data) {
  if (!flag.empty()) return read_class_descriptions(flag);
  if (fs::is_directory(data) && fs::exists(data / "descriptions.json")) {
    return read_class_descriptions(data / "descriptions.json");
  }
  throw ConfigError("no class descriptions: pass --descriptions");
}

DecodeMode parse_mode(const std::string& mode) {
  if (mode == "few-shot") return DecodeMode::kFewShot;
  if (mode == "zero-shot") return DecodeMode::kZeroShot;
  throw ConfigError("--mode must be few-shot or zero-shot");
}

// "lo:hi:step", inclusive of hi up to rounding.
std::vector<double> parse_grid(const std::string& spec) {
  double lo = 0, hi = 0, step = 0;
  if (std::sscanf(spec.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || !(step > 0) ||
      hi < lo) {
    throw ConfigError("grid must be lo:hi:step with step > 0 and hi >= lo");
  }
  std::vector<double> grid;
  const long n = std::lround(std::floor((hi - lo) / step + 1e-9));
  for (long k = 0; k <= n; ++k) grid.push_back(lo + static_cast<double>(k) * step);
  return grid;
}

ClassSet classes_for(const Checkpoint& ckpt, const std::string& descriptions_flag) {
  auto descriptions = descriptions_flag.empty() ? ckpt.model.descriptions()
                                                : read_class_descriptions(descriptions_flag);
  if (descriptions.empty()) throw ConfigError("checkpoint has no descriptions: pass --descriptions");
  return ckpt.model.class_set(std::move(descriptions));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

struct TrainArgs {
  std::string data, descriptions, config, out, loss_log;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  RunConfig run = a.config.empty() ? RunConfig{} : read_run_config(a.config);
  if (a.seed) run.train.seed = *a.seed;
  const Dataset train_data = load_split(a.data, "train");
  auto descriptions = load_descriptions(a.descriptions, a.data);
  SpanNerModel model = create_model(train_data, descriptions, run.model, run.train.seed);
  const TrainResult result = train(model, train_data, descriptions, run.train,
                                   {.on_epoch = [](const LossRecord& r) {
                                     std::fprintf(stderr, "epoch %d  total %.6f\n", r.epoch, r.total);
                                   }});
  save_checkpoint(model, run.train, a.out);
  const fs::path log = a.loss_log.empty() ? fs::path(a.out).replace_extension(".loss.csv")
                                          : fs::path(a.loss_log);
  write_text(log, loss_log_csv(result.epochs));
  std::printf("trained %zu epochs (%zu steps) in %.1f s%s\n", result.epochs.size(),
              result.steps.size(), result.seconds,
              result.stopped_by_budget ? ", stopped by time budget" : "");
  return 0;
}

struct EvalArgs {
  std::string model, data, mode = "few-shot", descriptions;
  std::optional<double> gamma;
  bool gold_spans = false;
};

int run_evaluate(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.model);
  const Dataset data = load_split(a.data, "test");
  const ClassSet classes = classes_for(ckpt, a.descriptions);
  DecodingConfig dc;
  if (a.gamma) dc.gamma = *a.gamma;
  const DecodeMode mode = parse_mode(a.mode);
  const EvalReport report =
      a.gold_spans ? evaluate_class_inference_with_gold_spans(data, ckpt.model, classes, mode, dc)
                   : evaluate(ckpt.model, data, classes, mode, dc).report;
  std::cout << format_report(report);
  return 0;
}

struct PredictArgs {
  std::string model, data, mode = "few-shot", descriptions, format = "jsonl", out;
  std::optional<double> gamma;
};

int run_predict(const PredictArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.model);
  const Dataset data = load_split(a.data, "test");
  const ClassSet classes = classes_for(ckpt, a.descriptions);
  DecodingConfig dc;
  if (a.gamma) dc.gamma = *a.gamma;
  const auto names = classes.names();
  const auto scored = score_corpus(ckpt.model, data, classes, dc);
  std::vector<std::vector<TypedSpanPrediction>> predictions;
  for (const auto& s : scored) predictions.push_back(decode(s, names, parse_mode(a.mode), dc));

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary | std::ios::trunc);
    if (!file) throw ConfigError("cannot write " + a.out);
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  if (a.format == "jsonl") {
    write_predictions_jsonl(out, data, predictions);
  } else if (a.format == "bio") {
    write_bio(predictions_to_dataset(data, predictions), out);
  } else {
    throw ConfigError("--format must be jsonl or bio");
  }
  return 0;
}

struct SampleArgs {
  std::string data, out;
  int k = 5, repeats = 10;
  std::uint64_t seed = 1;
  std::vector<std::string> classes;
};

int run_fewshot_sample(const SampleArgs& a) {
  const Dataset data = load_split(a.data, "train");
  fs::create_directories(a.out);
  std::mt19937_64 rng(a.seed);
  EpisodeSpec spec{a.k, a.classes, a.repeats};
  for (int r = 0; r < a.repeats; ++r) {
    const Dataset subset = sample_k_shot(data, spec, rng);
    const fs::path path = fs::path(a.out) / ("episode_" + std::to_string(r) + ".bio");
    write_bio(subset, path);
    std::printf("%s: %zu sentences\n", path.string().c_str(), subset.size());
  }
  return 0;
}

struct ZeroShotArgs {
  std::string model, dev, test, train, descriptions, grid = "-3:0:0.1";
};

int run_zero_shot_eval(const ZeroShotArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.model);
  const ClassSet classes = classes_for(ckpt, a.descriptions);
  const auto names = classes.names();
  const Dataset dev = load_split(a.dev, "dev");
  const Dataset test = load_split(a.test, "test");
  DecodingConfig dc;
  const auto grid = parse_grid(a.grid);
  const auto rows = threshold_sweep(score_corpus(ckpt.model, dev, classes, dc), dev, names, grid, dc);
  dc.gamma = best_gamma(rows);
  std::printf("gamma tuned on dev: %g\n", dc.gamma);

  const EvalReport report = evaluate(ckpt.model, test, classes, DecodeMode::kZeroShot, dc).report;
  std::cout << format_report(report);
  if (!a.train.empty()) {
    const Dataset train_data = load_split(a.train, "train");
    const std::set<std::string> seen(train_data.classes.begin(), train_data.classes.end());
    for (const auto& [name, prf] : report.per_class) {
      std::printf("%-8s %-24s f1 %.4f\n", seen.contains(name) ? "seen" : "unseen", name.c_str(),
                  prf.f1);
    }
  }
  std::cout << "gold spans\n"
            << format_report(evaluate_class_inference_with_gold_spans(
                   test, ckpt.model, classes, DecodeMode::kZeroShot, dc));
  return 0;
}

struct SweepArgs {
  std::string model, data, descriptions, grid = "-3:0:0.1", out;
};

int run_sweep_gamma(const SweepArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.model);
  const ClassSet classes = classes_for(ckpt, a.descriptions);
  const Dataset data = load_split(a.data, "dev");
  DecodingConfig dc;
  auto grid = parse_grid(a.grid);
  grid.push_back(std::numeric_limits<double>::infinity());
  const auto rows =
      threshold_sweep(score_corpus(ckpt.model, data, classes, dc), data, classes.names(), grid, dc);
  const std::string csv = sweep_csv(rows);
  if (a.out.empty()) std::cout << csv;
  else write_text(a.out, csv);
  return 0;
}

struct GradArgs {
  std::string data, descriptions, config;
  std::uint64_t seed = 1;
  double epsilon = 1e-5;
  int samples = 8;
};

int run_gradcheck(const GradArgs& a) {
  RunConfig run = a.config.empty() ? RunConfig{} : read_run_config(a.config);
  const Dataset data = load_split(a.data, "train");
  auto descriptions = load_descriptions(a.descriptions, a.data);
  SpanNerModel model = create_model(data, descriptions, run.model, a.seed);
  Dataset batch = data;
  batch.sentences.resize(std::min<std::size_t>(2, batch.sentences.size()));
  batch.refresh_classes();
  const JointGradCheck check =
      check_joint_loss_gradients(model, batch, descriptions, a.epsilon, a.samples, a.seed);
  std::printf("max relative error %.3e over %d entries (worst: %s)\n",
              check.result.max_relative_error, check.result.checked,
              check.result.worst_parameter.c_str());
  std::printf("frozen gradients exactly zero: %s\n", check.frozen_gradients_zero ? "yes" : "no");
  return check.result.max_relative_error < 1e-4 && check.frozen_gradients_zero ? 0 : 1;
}

int run_gen_synthetic(const SyntheticSpec& spec, const std::string& out) {
  const SyntheticCorpus corpus = generate_synthetic(spec);
  write_synthetic(corpus, out);
  std::printf("wrote %zu/%zu/%zu sentences to %s\n", corpus.train.size(), corpus.dev.size(),
              corpus.test.size(), out.c_str());
  if (!corpus.held_out_classes.empty()) {
    for (const auto& c : corpus.held_out_classes) std::printf("held out: %s\n", c.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SpanNER: span detection with class inference from natural-language descriptions"};
  app.require_subcommand(1);
  int status = 0;

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  train_cmd->add_option("--data", train_args.data, "training BIO file or corpus directory")->required();
  train_cmd->add_option("--descriptions", train_args.descriptions, "class description JSON");
  train_cmd->add_option("--config", train_args.config, "key = value run configuration");
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
  train_cmd->add_option("--loss-log", train_args.loss_log, "loss CSV (default: <out>.loss.csv)");
  train_cmd->add_option("--seed", train_args.seed, "overrides the configured seed");
  train_cmd->callback([&] { status = run_train(train_args); });

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "span-level P/R/F1 on a labeled file");
  eval_cmd->add_option("--model", eval_args.model)->required();
  eval_cmd->add_option("--data", eval_args.data)->required();
  eval_cmd->add_option("--mode", eval_args.mode, "few-shot | zero-shot");
  eval_cmd->add_option("--gamma", eval_args.gamma, "zero-shot joint-score threshold");
  eval_cmd->add_option("--descriptions", eval_args.descriptions, "replaces the shipped descriptions");
  eval_cmd->add_flag("--gold-spans", eval_args.gold_spans, "classify gold spans only");
  eval_cmd->callback([&] { status = run_evaluate(eval_args); });

  PredictArgs pred_args;
  auto* pred_cmd = app.add_subcommand("predict", "write typed span predictions");
  pred_cmd->add_option("--model", pred_args.model)->required();
  pred_cmd->add_option("--data", pred_args.data)->required();
  pred_cmd->add_option("--mode", pred_args.mode, "few-shot | zero-shot");
  pred_cmd->add_option("--gamma", pred_args.gamma);
  pred_cmd->add_option("--descriptions", pred_args.descriptions);
  pred_cmd->add_option("--format", pred_args.format, "jsonl | bio");
  pred_cmd->add_option("--out", pred_args.out, "default: stdout");
  pred_cmd->callback([&] { status = run_predict(pred_args); });

  SampleArgs sample_args;
  auto* sample_cmd = app.add_subcommand("fewshot-sample", "draw K-shot training episodes");
  sample_cmd->add_option("--data", sample_args.data)->required();
  sample_cmd->add_option("--k", sample_args.k)->check(CLI::PositiveNumber);
  sample_cmd->add_option("--repeats", sample_args.repeats)->check(CLI::PositiveNumber);
  sample_cmd->add_option("--seed", sample_args.seed);
  sample_cmd->add_option("--classes", sample_args.classes, "restrict to these classes");
  sample_cmd->add_option("--out", sample_args.out, "output directory")->required();
  sample_cmd->callback([&] { status = run_fewshot_sample(sample_args); });

  ZeroShotArgs zs_args;
  auto* zs_cmd = app.add_subcommand("zero-shot-eval", "tune gamma on dev, report on test");
  zs_cmd->add_option("--model", zs_args.model)->required();
  zs_cmd->add_option("--dev", zs_args.dev)->required();
  zs_cmd->add_option("--test", zs_args.test)->required();
  zs_cmd->add_option("--train", zs_args.train, "training data, to mark seen classes");
  zs_cmd->add_option("--descriptions", zs_args.descriptions);
  zs_cmd->add_option("--grid", zs_args.grid, "gamma grid lo:hi:step");
  zs_cmd->callback([&] { status = run_zero_shot_eval(zs_args); });

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep-gamma", "zero-shot F1 over a gamma grid (CSV)");
  sweep_cmd->add_option("--model", sweep_args.model)->required();
  sweep_cmd->add_option("--data", sweep_args.data)->required();
  sweep_cmd->add_option("--descriptions", sweep_args.descriptions);
  sweep_cmd->add_option("--grid", sweep_args.grid, "lo:hi:step; +inf is always appended");
  sweep_cmd->add_option("--out", sweep_args.out, "default: stdout");
  sweep_cmd->callback([&] { status = run_sweep_gamma(sweep_args); });

  GradArgs grad_args;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the joint loss");
  grad_cmd->add_option("--data", grad_args.data)->required();
  grad_cmd->add_option("--descriptions", grad_args.descriptions);
  grad_cmd->add_option("--config", grad_args.config);
  grad_cmd->add_option("--seed", grad_args.seed);
  grad_cmd->add_option("--epsilon", grad_args.epsilon)->check(CLI::PositiveNumber);
  grad_cmd->add_option("--samples", grad_args.samples, "entries per parameter")
      ->check(CLI::PositiveNumber);
  grad_cmd->callback([&] { status = run_gradcheck(grad_args); });

  SyntheticSpec syn;
  std::string syn_out;
  auto* syn_cmd = app.add_subcommand("gen-synthetic", "write a synthetic corpus");
  syn_cmd->add_option("--out", syn_out, "output directory")->required();
  syn_cmd->add_option("--classes", syn.class_count);
  syn_cmd->add_option("--sub-lexicons", syn.sub_lexicons_per_class);
  syn_cmd->add_option("--lexicon-size", syn.lexicon_size);
  syn_cmd->add_option("--train", syn.train_sentences);
  syn_cmd->add_option("--dev", syn.dev_sentences);
  syn_cmd->add_option("--test", syn.test_sentences);
  syn_cmd->add_option("--entity-rate", syn.entity_rate);
  syn_cmd->add_option("--holdout", syn.holdout_classes, "classes absent from train");
  syn_cmd->add_option("--distractor-rate", syn.distractor_rate);
  syn_cmd->add_option("--cue-noise", syn.cue_noise);
  syn_cmd->add_option("--seed", syn.seed);
  syn_cmd->callback([&] { status = run_gen_synthetic(syn, syn_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return status;
}
