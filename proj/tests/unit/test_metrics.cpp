#include <catch_amalgamated.hpp>

#include <random>
#include <set>

#include "offtrack/metrics.hpp"
#include "support/published.hpp"

using namespace offtrack;
using Catch::Approx;

namespace {

const std::vector<std::string> kBenchmarks = {"AIME24", "AIME25", "MATH-500", "Minerva", "Olympiad"};

// Permutation p for |mean difference|, which orders permutations the same
// way as |Welch t| when the groups have equal size.
double permutation_p(const std::vector<double>& a, const std::vector<double>& b, int rounds, std::mt19937_64& rng) {
  std::vector<double> all(a);
  all.insert(all.end(), b.begin(), b.end());
  const double total = std::accumulate(all.begin(), all.end(), 0.0);
  const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  auto stat = [&](const std::vector<double>& v) {
    const double sa = std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(a.size()), 0.0);
    return std::fabs(sa / na - (total - sa) / nb);
  };
  const double observed = stat(all) - 1e-12;
  long long hits = 0;
  for (int r = 0; r < rounds; ++r) {
    std::shuffle(all.begin(), all.end(), rng);
    if (stat(all) >= observed) ++hits;
  }
  return static_cast<double>(hits + 1) / static_cast<double>(rounds + 1);
}

}  // namespace

TEST_CASE("round half even") {
  CHECK(round_half_even(5, 2) == 2);
  CHECK(round_half_even(7, 2) == 4);
  CHECK(round_half_even(-5, 2) == -2);
  CHECK(round_half_even(10, 3) == 3);
  CHECK(percent_1dp(0.12345) == Approx(12.3));
  CHECK(percent_1dp(0.12355) == Approx(12.4));
  CHECK(percent_1dp(0.12345000001) == Approx(12.3));
  CHECK(format_percent(1.0) == "100.0");
  CHECK(format_percent(0.0) == "0.0");
  CHECK(format_signed_1dp(-0.00001) == "+0.0");
  CHECK(format_signed_1dp(-2.0) == "-2.0");
  CHECK_THROWS_AS(round_half_even(1, 0), Error);
}

TEST_CASE("pass@1 and benchmark average") {
  CHECK(pass_at_1(std::vector<bool>{true, false, true, true}) == 0.75);
  CHECK_THROWS_AS(pass_at_1(std::vector<bool>{}), Error);
  std::map<std::string, double> per{{"AIME24", 0.5}, {"AIME25", 0.25}};
  CHECK(benchmark_average(per, {"AIME24", "AIME25"}) == 0.375);
  try {
    benchmark_average(per, {"AIME24", "Minerva"});
    FAIL("expected MISSING_BENCHMARK");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingBenchmark);
  }
}

TEST_CASE("recoverability positions reproduce the published averages") {
  for (const auto& row : published::tables().at("recoverability_shared")) {
    const auto pcts = row.at("cells").get<std::vector<double>>();
    const auto t = published::table_from_cells(row.at("model").get<std::string>(), "shared", pcts);
    INFO(row.at("model").get<std::string>());
    CHECK(std::fabs(percent_1dp(t.avg) - row.at("avg").get<double>()) <= 0.05 + 1e-9);
  }
}

TEST_CASE("benchmark averages: nine rows exact, six off by one tenth") {
  const std::set<std::string> off_by_tenth = {"R1-Llama-8B", "Qwen3-1.7B", "R1-Qwen-32B", "Qwen3-8B", "QwQ-32B", "Qwen3-30B-A3B"};
  for (const auto& row : published::tables().at("benchmark_scores").at("rows")) {
    const auto scores = row.at("scores").get<std::vector<double>>();
    std::map<std::string, double> per;
    for (std::size_t i = 0; i < scores.size(); ++i) per[kBenchmarks[i]] = scores[i] / 100.0;
    const double got = percent_1dp(benchmark_average(per, kBenchmarks));
    const double want = row.at("avg").get<double>();
    const std::string model = row.at("model").get<std::string>();
    INFO(model << " recomputed " << got << " published " << want);
    if (off_by_tenth.count(model))
      CHECK(std::fabs(std::fabs(got - want) - 0.1) < 1e-9);
    else
      CHECK(std::fabs(got - want) < 1e-9);
  }
}

TEST_CASE("rank deltas reproduce every published subscript") {
  const auto& rows = published::tables().at("main_results");
  for (const char* col : {"recov_shared", "recov_individual", "guid_shared", "guid_individual"}) {
    ModelScores bench, test;
    for (const auto& r : rows) {
      if (r.at(col).is_null()) continue;
      bench.emplace_back(r.at("model").get<std::string>(), r.at("benchmark_avg").get<double>());
      test.emplace_back(r.at("model").get<std::string>(), r.at(col).at("value").get<double>());
    }
    const auto deltas = rank_deltas(bench, test);
    REQUIRE(deltas.size() == bench.size());
    for (const auto& d : deltas) {
      for (const auto& r : rows)
        if (r.at("model") == d.model) {
          INFO(col << " " << d.model);
          CHECK(d.delta == r.at(col).at("rank_delta").get<int>());
        }
    }
  }
}

TEST_CASE("rank deltas reject mismatched columns and break ties by name") {
  CHECK_THROWS_AS(rank_deltas({{"a", 1.0}, {"b", 2.0}}, {{"a", 1.0}, {"c", 2.0}}), Error);
  const auto d = rank_deltas({{"a", 2.0}, {"b", 1.0}}, {{"a", 5.0}, {"b", 5.0}});
  CHECK(d[0].test_rank == 1);
  CHECK(d[1].test_rank == 2);
  CHECK(d[1].delta == 0);
}

TEST_CASE("Welch t-test agrees with a permutation oracle") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> shift(0.0, 1.2);
  int checked = 0;
  for (int pair = 0; pair < 40; ++pair) {
    const double d = shift(rng);
    std::vector<double> a(30), b(30);
    for (auto& v : a) v = noise(rng);
    for (auto& v : b) v = noise(rng) + d;
    const auto w = welch_t_test(a, b);
    const double oracle = permutation_p(a, b, 20000, rng);
    INFO("pair " << pair << " welch " << w.p_two_sided << " oracle " << oracle);
    CHECK(std::fabs(w.p_two_sided - oracle) <= 0.02);
    ++checked;
  }
  CHECK(checked == 40);
}

TEST_CASE("Welch edge cases") {
  const std::vector<double> same = {0.25, 0.5, 0.75, 1.0};
  const auto r = welch_t_test(same, same);
  CHECK(r.p_two_sided == 1.0);
  CHECK(r.t == 0.0);

  const std::vector<double> flat_a = {1.0, 1.0, 1.0}, flat_b = {2.0, 2.0, 2.0};
  const auto f = welch_t_test(flat_a, flat_b);
  CHECK(f.degenerate);
  CHECK(f.p_two_sided == 0.0);
  CHECK(welch_t_test(flat_a, flat_a).p_two_sided == 1.0);
  CHECK_THROWS_AS(welch_t_test(std::vector<double>{1.0}, same), Error);

  // Shifted copies: equal variances 55/6, so t = -2 / sqrt(2 * 5.5 / 10) and dof = 18.
  const std::vector<double> a = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<double> b = a;
  for (auto& v : b) v += 2.0;
  const auto t = welch_t_test(a, b);
  CHECK(t.t == Approx(-2.0 / std::sqrt(2.0 * (55.0 / 6.0) / 10.0)));
  CHECK(t.dof == Approx(18.0));
}

TEST_CASE("sample grouping enforces k scored samples per item") {
  SteeredItem it;
  it.item_id = "i1";
  it.spec = SteerSpec{0.2, 0.2, false};
  auto sample = [](int idx, VerdictLabel v) {
    CompletionSample s;
    s.item_id = "i1";
    s.sample_index = idx;
    s.verdict = v;
    return s;
  };
  auto code = [&](const std::vector<CompletionSample>& s) {
    try {
      recoverability_table({it}, s, 2, "m", "shared");
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  CHECK(code({sample(0, VerdictLabel::kCorrect)}) == ErrorCode::kUnscoredSample);
  CHECK(code({sample(0, VerdictLabel::kCorrect), sample(0, VerdictLabel::kWrong)}) == ErrorCode::kUnscoredSample);
  CHECK(code({sample(0, VerdictLabel::kCorrect), sample(1, VerdictLabel::kUnverified)}) == ErrorCode::kUnscoredSample);
  auto stray = sample(0, VerdictLabel::kCorrect);
  stray.item_id = "other";
  CHECK(code({stray}) == ErrorCode::kKeyMismatch);
  const auto t = recoverability_table({it}, {sample(0, VerdictLabel::kCorrect), sample(1, VerdictLabel::kWrong)}, 2, "m", "shared");
  REQUIRE(t.cells.size() == 1);
  CHECK(t.cells[0].numerator == 1);
  CHECK(t.cells[0].denominator == 2);
  CHECK(t.avg == 0.5);
  CHECK_THROWS_AS(recoverability_table({}, {}, 2, "m", "shared"), Error);
}

TEST_CASE("guidability table: Ans. fraction and delta") {
  std::vector<SteeredItem> items;
  std::vector<CompletionSample> samples;
  for (int q = 0; q < 4; ++q)
    for (double n : {0.2, 0.8}) {
      SteeredItem it;
      it.item_id = "q" + std::to_string(q) + "-" + std::to_string(n);
      it.kind = ItemKind::kGuidability;
      it.question_id = "q" + std::to_string(q);
      it.guide = "g";
      it.steer_source = TrajectoryRef{"g", it.question_id, 0};
      it.spec = SteerSpec{0.0, n, false};
      it.steer_contains_answer = n > 0.5 && q < 2;
      items.push_back(it);
      for (int i = 0; i < 2; ++i) {
        CompletionSample s;
        s.item_id = it.item_id;
        s.sample_index = i;
        s.verdict = (it.steer_contains_answer || (n < 0.5 && q == 0 && i == 0)) ? VerdictLabel::kCorrect : VerdictLabel::kWrong;
        samples.push_back(s);
      }
    }
  const auto g = guidability_table(items, samples, 2, "m", "shared");
  REQUIRE(g.teach.cells.size() == 2);
  CHECK(g.teach.cells[0].value == 0.125);
  CHECK(g.teach.cells[1].value == 0.5);
  CHECK(g.ans_fraction_per_n == std::vector<double>{0.0, 0.5});
  CHECK(g.ans_fraction == 0.25);
  CHECK(g.delta_pp == Approx(6.25));
  CHECK(g.support.at("g") == std::pair<long long, long long>{4, 4});
}
