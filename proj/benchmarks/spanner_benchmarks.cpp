#include "spanner/decoding.hpp"
#include "spanner/training.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace spanner {
namespace {

struct Fixture {
  SyntheticCorpus corpus;
  SpanNerModel model;
  ClassSet classes;
  std::vector<TrainingExample> examples;

  Fixture()
      : corpus(make_corpus()),
        model(create_model(corpus.train, corpus.descriptions, ModelConfig{}, 1)),
        classes(model.class_set(corpus.descriptions)),
        examples(make_examples(model, corpus.train, classes)) {}

  static SyntheticCorpus make_corpus() {
    SyntheticSpec spec;
    spec.train_sentences = 64;
    spec.test_sentences = 0;
    return generate_synthetic(spec);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_Encode(benchmark::State& state) {
  Fixture& f = fixture();
  const TokenSequence& tokens = f.examples[0].tokens;
  for (auto _ : state) benchmark::DoNotOptimize(f.model.encode(tokens));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(tokens.size()));
}
BENCHMARK(BM_Encode);

void BM_JointLossStep(benchmark::State& state) {
  Fixture& f = fixture();
  const int batch = static_cast<int>(state.range(0));
  std::vector<const TrainingExample*> ptrs;
  for (int k = 0; k < batch; ++k) ptrs.push_back(&f.examples[static_cast<std::size_t>(k)]);
  std::mt19937_64 rng(3);
  for (auto _ : state) {
    std::vector<SpanCandidateSets> cands;
    for (const auto* ex : ptrs) {
      cands.push_back(
          sample_negative_spans(static_cast<int>(ex->tokens.size()), ex->gold, 10, rng));
    }
    ad::Tape tape;
    JointLossOptions opts;
    opts.dropout_rng = &rng;
    const JointLossVars loss = joint_loss(tape, f.model, ptrs, cands, f.classes, opts);
    tape.backward(loss.total);
    benchmark::DoNotOptimize(loss.total.scalar());
  }
  for (auto* p : f.model.parameters()) p->zero_grad();
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_JointLossStep)->Arg(1)->Arg(8);

void BM_ScoreSentence(benchmark::State& state) {
  Fixture& f = fixture();
  const auto& tokens = f.corpus.train.sentences[0].tokens;
  DecodingConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(score_sentence(f.model, tokens, f.classes, cfg));
}
BENCHMARK(BM_ScoreSentence);

void BM_ConsensusSpans(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.5);
  TokenScores s{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    s.start(i) = d(rng);
    s.end(i) = d(rng);
    s.span(i) = d(rng);
  }
  const DecodingConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(extract_consensus_spans(s, cfg));
}
BENCHMARK(BM_ConsensusSpans)->Arg(16)->Arg(128);

void BM_NegativeSampling(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const std::vector<SpanCandidate> gold{{1, 2}, {5, 5}};
  std::mt19937_64 rng(7);
  for (auto _ : state) benchmark::DoNotOptimize(sample_negative_spans(n, gold, 10, rng));
}
BENCHMARK(BM_NegativeSampling)->Arg(16)->Arg(128);

}  // namespace
}  // namespace spanner

BENCHMARK_MAIN();
