#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "scenarios.hpp"
#include "sgsd/error.hpp"
#include "sgsd/policy.hpp"

using namespace sgsd::policy;

namespace {

const PolicyShape kShape{};

ContextFeatures some_student() {
  const std::vector<std::string> f{"op:+", "a:3", "b:5"};
  return student_context(kShape, f);
}

// Policy that deterministically emits `first` and then the end token.
ToyPolicy greedy(Token first) {
  ToyPolicy p(kShape);
  for (int v = 0; v < kShape.vocab_size; ++v) p.prev_row(kShape.vocab_size)[v] = v == first ? 50.0 : -50.0;
  for (int v = 0; v < kShape.vocab_size; ++v) p.prev_row(first)[v] = v == kShape.end_token() ? 50.0 : -50.0;
  return p;
}

}  // namespace

TEST_CASE("shape validation and layout") {
  CHECK_THROWS_AS(ToyPolicy(PolicyShape{1, 4, 4, 4}), std::invalid_argument);
  CHECK_THROWS_AS(ToyPolicy(PolicyShape{12, 0, 4, 4}), std::invalid_argument);
  CHECK_THROWS_AS(ToyPolicy(PolicyShape{12, 4, 4, 0}), std::invalid_argument);
  const ToyPolicy p(kShape);
  CHECK(p.parameter_count() == static_cast<std::size_t>((12 + 1) * 12 + (64 + 64) * 12));
  CHECK(p.prev_row_offset(12) == 12u * 12u);
  CHECK(p.bucket_row_offset(0) == 13u * 12u);
  CHECK_THROWS_AS(p.prev_row_offset(13), std::out_of_range);
  CHECK_THROWS_AS(p.bucket_row_offset(128), std::out_of_range);
}

TEST_CASE("context buckets") {
  const std::vector<std::string> f{"b:5", "a:3", "a:3"};
  const auto s = student_context(kShape, f);
  CHECK(s.is_student());
  CHECK(std::is_sorted(s.problem.begin(), s.problem.end()));
  CHECK(s.problem.size() <= 2);
  for (int b : s.problem) CHECK((b >= 0 && b < kShape.problem_buckets));
  const std::vector<std::string> skill{"skill:carry"};
  const std::vector<std::string> mistake{"mistake:sign"};
  const auto t = teacher_context(kShape, f, skill, mistake);
  CHECK_FALSE(t.is_student());
  CHECK(t.problem == s.problem);
  for (int b : t.tags) CHECK((b >= kShape.problem_buckets && b < kShape.bucket_count()));
  CHECK(problem_bucket(kShape, "a:3") == problem_bucket(kShape, "a:3"));
}

TEST_CASE("distributions normalize") {
  const auto p = ToyPolicy::random(kShape, 3, 1.5);
  const auto ctx = some_student();
  for (int prev = 0; prev <= kShape.vocab_size; ++prev) {
    const auto d = p.distribution(ctx, prev);
    double total = 0.0;
    for (double v : d) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("sampling") {
  const auto ctx = some_student();
  const auto g = greedy(7);
  const auto r = sample_rollout(g, ctx, 99);
  CHECK(r.tokens == std::vector<Token>{7, kShape.end_token()});
  for (double lp : r.logprobs) CHECK(lp == doctest::Approx(0.0).epsilon(1e-12));

  const auto p = ToyPolicy::random(kShape, 4, 1.0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = sample_rollout(p, ctx, seed);
    const auto b = sample_rollout(p, ctx, seed);
    CHECK(a.tokens == b.tokens);
    CHECK(a.logprobs == b.logprobs);
    CHECK(a.tokens.size() <= static_cast<std::size_t>(kShape.max_len));
    const auto scored = score_sequence(p, ctx, a.tokens);
    for (std::size_t t = 0; t < scored.size(); ++t) CHECK(scored[t] == doctest::Approx(a.logprobs[t]));
  }
  const std::vector<std::string> f{"x"};
  const std::vector<std::string> tags{"t"};
  CHECK_THROWS_AS(sample_rollout(p, teacher_context(kShape, f, tags, tags), 0), std::invalid_argument);
}

TEST_CASE("scoring") {
  const auto ctx = some_student();
  const auto g = greedy(3);
  const std::vector<Token> seq{3, kShape.end_token()};
  for (double lp : score_sequence(g, ctx, seq)) CHECK(lp == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(score_sequence(g, ctx, std::vector<Token>{12}), std::out_of_range);

  // Distinct skill tags seeded with distinct rows give distinct teacher scores.
  auto p = ToyPolicy::random(kShape, 8, 0.5);
  std::vector<int> taken;
  const auto tags = sgsd::testing::distinct_tags(kShape, "probe", 2, taken);
  p.bucket_row(tag_bucket(kShape, tags[0]))[4] = 3.0;
  p.bucket_row(tag_bucket(kShape, tags[1]))[6] = 3.0;
  const std::vector<std::string> f{"op:+"};
  const std::vector<std::string> a{tags[0]};
  const std::vector<std::string> b{tags[1]};
  const std::vector<std::string> none;
  const std::vector<Token> random_seq{4, 6, 1, kShape.end_token()};
  const auto sa = score_sequence(p, teacher_context(kShape, f, a, none), random_seq);
  const auto sb = score_sequence(p, teacher_context(kShape, f, b, none), random_seq);
  CHECK(sa != sb);
}

TEST_CASE("log-probability gradient matches finite differences") {
  std::mt19937_64 rng(2);
  const auto ctx = some_student();
  for (int trial = 0; trial < 10; ++trial) {
    auto p = ToyPolicy::random(kShape, rng(), 1.0);
    const auto r = sample_rollout(p, ctx, rng());
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const auto g = logprob_grad(p, ctx, r.tokens, t);
      std::uniform_int_distribution<std::size_t> pick(0, p.parameter_count() - 1);
      for (int probe = 0; probe < 40; ++probe) {
        const std::size_t i = probe < 12 ? p.prev_row_offset(t == 0 ? 12 : r.tokens[t - 1]) + probe : pick(rng);
        const double saved = p.parameters()[i];
        p.parameters()[i] = saved + 1e-6;
        const double up = score_sequence(p, ctx, r.tokens)[t];
        p.parameters()[i] = saved - 1e-6;
        const double down = score_sequence(p, ctx, r.tokens)[t];
        p.parameters()[i] = saved;
        CHECK(g[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6).scale(1e-3));
      }
    }
  }
  const auto sat = greedy(5);
  const auto g = logprob_grad(sat, ctx, std::vector<Token>{5, kShape.end_token()}, 0);
  for (double v : g) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("updates") {
  const auto p = ToyPolicy::random(kShape, 1, 1.0);
  const std::vector<double> zero(p.parameter_count(), 0.0);
  CHECK(apply_update(p, zero, 0.7) == p);
  std::vector<double> ones(p.parameter_count(), 1.0);
  CHECK(apply_update(p, ones, 0.0) == p);
  const auto q = apply_update(p, ones, 0.25);
  CHECK(q.parameters()[17] == doctest::Approx(p.parameters()[17] - 0.25));
  CHECK_THROWS_AS(apply_update(p, std::vector<double>(3, 0.0), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(apply_update(p, ones, -1.0), std::invalid_argument);
}

TEST_CASE("teacher schedules") {
  const auto init = ToyPolicy::random(kShape, 1, 1.0);
  std::vector<double> ones(init.parameter_count(), 1.0);

  TeacherHandle frozen({TeacherStrategy::kFrozen}, init);
  auto cur = init;
  for (long s = 1; s <= 100; ++s) {
    cur = apply_update(cur, ones, 0.01);
    frozen.sync(cur, s);
  }
  CHECK(frozen.params() == init);

  TeacherHandle live({TeacherStrategy::kLive}, init);
  live.sync(cur, 1);
  CHECK(live.params() == cur);

  TeacherHandle periodic({TeacherStrategy::kPeriodic, 10}, init);
  periodic.sync(cur, 9);
  CHECK(periodic.params() == init);
  periodic.sync(cur, 10);
  CHECK(periodic.params() == cur);

  TeacherHandle ema0({TeacherStrategy::kEma, 25, 0.0}, init);
  ema0.sync(cur, 1);
  CHECK(ema0.params() == cur);

  TeacherHandle ema({TeacherStrategy::kEma, 25, 0.9}, init);
  ema.sync(cur, 1);
  CHECK(ema.params().parameters()[0] ==
        doctest::Approx(0.9 * init.parameters()[0] + 0.1 * cur.parameters()[0]));

  CHECK_THROWS_AS(TeacherHandle({TeacherStrategy::kEma, 25, 1.0}, init), std::invalid_argument);
  CHECK_THROWS_AS(TeacherHandle({TeacherStrategy::kPeriodic, 0}, init), std::invalid_argument);
  CHECK(teacher_strategy_from_string(to_string(TeacherStrategy::kEma)) == TeacherStrategy::kEma);
  CHECK_THROWS_AS(teacher_strategy_from_string("warm"), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = sgsd::testing::fresh_dir("policy_ckpt");
  const auto p = ToyPolicy::random(PolicyShape{9, 5, 3, 6}, 77, 1.3);
  save_checkpoint(p, dir / "p.json");
  CHECK(load_checkpoint(dir / "p.json") == p);

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), sgsd::ParseError);
  {
    std::ofstream(dir / "bad.json") << "{\"format_version\": 2}";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), sgsd::ParseError);
  {
    std::ofstream(dir / "junk.json") << "not json";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.json"), sgsd::ParseError);
  {
    std::ofstream(dir / "short.json")
        << R"({"format_version":1,"shape":{"vocab_size":2,"problem_buckets":1,"tag_buckets":1,"max_len":1},)"
        << R"("arrays":[{"name":"prev_token_logits","dims":[3,2],"data":[0,0,0,0,0,0]},)"
        << R"({"name":"context_bias","dims":[2,2],"data":[0,0,0]}]})";
  }
  try {
    load_checkpoint(dir / "short.json");
    FAIL("expected ParseError");
  } catch (const sgsd::ParseError& e) {
    CHECK(e.field() == "context_bias.data");
  }
}
