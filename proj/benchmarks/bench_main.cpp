#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "sgsd/distill.hpp"
#include "sgsd/embedder.hpp"
#include "sgsd/env.hpp"
#include "sgsd/gate.hpp"
#include "sgsd/policy.hpp"
#include "sgsd/skillbank.hpp"

using namespace sgsd;

namespace {

void BM_GateLossAndGrad(benchmark::State& state) {
  const gate::GateParams params{1.0};
  std::vector<double> deltas(1024);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (double& d : deltas) d = nd(rng);
  for (auto _ : state) {
    double acc = 0.0;
    for (double d : deltas) acc += gate::gate_loss(d, params) + gate::gate_grad(d, params);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(deltas.size()));
}
BENCHMARK(BM_GateLossAndGrad);

void BM_TokenCredits(benchmark::State& state) {
  const auto teachers = static_cast<std::size_t>(state.range(0));
  const std::size_t length = 64;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> gaps(teachers, std::vector<double>(length));
  for (auto& row : gaps) {
    for (double& d : row) d = nd(rng);
  }
  const std::vector<std::uint8_t> mask(length, 1);
  const std::vector<double> weights(teachers, 1.0 / static_cast<double>(teachers));
  const std::vector<int> rhos(teachers, 1);
  for (auto _ : state) {
    auto credits = distill::token_credits(gaps, mask, weights, rhos, gate::GateParams{1.0}, 1e-8);
    benchmark::DoNotOptimize(credits);
  }
}
BENCHMARK(BM_TokenCredits)->Arg(1)->Arg(8);

void BM_ScoreSequence(benchmark::State& state) {
  const policy::PolicyShape shape;
  const auto model = policy::ToyPolicy::random(shape, 3, 0.5);
  const auto task = env::generate_tasks(4, 1, 2).front();
  const auto context = skillbank::student_context(task, shape).features;
  std::vector<policy::Token> tokens;
  for (int t = 0; t < shape.max_len - 1; ++t) tokens.push_back(t % 10);
  tokens.push_back(shape.end_token());
  for (auto _ : state) benchmark::DoNotOptimize(policy::score_sequence(model, context, tokens));
}
BENCHMARK(BM_ScoreSequence);

void BM_Retrieval(benchmark::State& state) {
  const auto entries = static_cast<int>(state.range(0));
  skillbank::SkillBank bank;
  for (int i = 1; i <= entries; ++i) {
    skillbank::GeneralSkill s;
    s.skill_id = skillbank::format_id("gen", static_cast<std::size_t>(i));
    s.title = "Reduce step " + std::to_string(i);
    s.principle = "Apply the modulus after operation " + std::to_string(i * 7 % 13);
    s.when_to_apply = "chains with " + std::to_string(i % 5) + " operators";
    bank.general_skills.push_back(s);
    skillbank::CommonMistake m;
    m.mistake_id = skillbank::format_id("err", static_cast<std::size_t>(i));
    m.description = "Dropped carry in term " + std::to_string(i);
    m.why_it_happens = "rushing";
    m.how_to_avoid = "recompute the " + std::to_string(i % 3) + " term";
    bank.common_mistakes.push_back(m);
  }
  const HashingEmbedder embedder;
  const skillbank::RetrievalIndex index(bank, embedder);
  const auto query = env::generate_tasks(5, 1, 3).front().text();
  for (auto _ : state) benchmark::DoNotOptimize(index.retrieve(query, 8));
}
BENCHMARK(BM_Retrieval)->Arg(30)->Arg(300);

}  // namespace

BENCHMARK_MAIN();
