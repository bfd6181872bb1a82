#pragma once

// Scores and statistics computed from verified sample stores.

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "offtrack/core.hpp"

namespace offtrack {

// ---------------------------------------------------------------------------
// Rounding and rendering helpers

// Round-half-even of num/den to an integer, exact.
inline long long round_half_even(long long num, long long den) {
  if (den <= 0) throw Error(ErrorCode::kInvalidArgument, "non-positive denominator");
  long long q = num / den, r = num % den;
  if (r < 0) {
    r += den;
    --q;
  }
  if (2 * r > den || (2 * r == den && (q & 1))) ++q;
  return q;
}

// One-decimal percentage of a fraction, ties to even. Products are first
// snapped to 1e-6 so that binary noise does not break exact ties.
inline double percent_1dp(double fraction) {
  const double tenths = std::round(fraction * 1000.0 * 1e6) / 1e6;
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(tenths);
  std::fesetround(saved);
  return r / 10.0;
}

inline std::string format_1dp(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", value);
  std::string s = buf;
  if (s == "-0.0") s = "0.0";
  return s;
}

inline std::string format_percent(double fraction) { return format_1dp(percent_1dp(fraction)); }

inline std::string format_signed_1dp(double value) {
  std::string s = format_1dp(value);
  return (s[0] == '-' ? "" : "+") + s;
}

// ---------------------------------------------------------------------------
// pass@1 and benchmark averages

inline double pass_at_1(std::span<const bool> verdicts) {
  if (verdicts.empty()) throw Error(ErrorCode::kEmptySamples, "no verdicts");
  const auto correct = std::count(verdicts.begin(), verdicts.end(), true);
  return static_cast<double>(correct) / static_cast<double>(verdicts.size());
}

inline double pass_at_1(const std::vector<bool>& verdicts) {
  std::vector<char> tmp(verdicts.begin(), verdicts.end());
  if (tmp.empty()) throw Error(ErrorCode::kEmptySamples, "no verdicts");
  return static_cast<double>(std::count(tmp.begin(), tmp.end(), char{1})) / static_cast<double>(tmp.size());
}

// Unweighted mean over exactly the configured benchmarks.
inline double benchmark_average(const std::map<std::string, double>& per_benchmark, const std::vector<std::string>& required) {
  if (required.empty()) throw Error(ErrorCode::kInvalidArgument, "empty benchmark list");
  double sum = 0.0;
  for (const auto& name : required) {
    auto it = per_benchmark.find(name);
    if (it == per_benchmark.end()) throw Error(ErrorCode::kMissingBenchmark, name);
    sum += it->second;
  }
  return sum / static_cast<double>(required.size());
}

inline double unweighted_mean(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptySamples, "no values");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

// ---------------------------------------------------------------------------
// Score cells

struct ScoreCell {
  double value = 0.0;
  long long numerator = 0;
  long long denominator = 0;
  std::string model;
  ItemKind kind = ItemKind::kRecoverability;
  std::string subset;
  // m fraction for recoverability, n fraction for guidability.
  double position = 0.0;
  std::string guide;

  bool operator==(const ScoreCell&) const = default;
};

inline void to_json(json& j, const ScoreCell& c) {
  j = json{{"value", c.value},
           {"numerator", c.numerator},
           {"denominator", c.denominator},
           {"model", c.model},
           {"kind", to_string(c.kind)},
           {"subset", c.subset},
           {"position", c.position},
           {"guide", c.guide}};
}
inline void from_json(const json& j, ScoreCell& c) {
  c.value = j.at("value").get<double>();
  c.numerator = j.at("numerator").get<long long>();
  c.denominator = j.at("denominator").get<long long>();
  c.model = j.at("model").get<std::string>();
  c.kind = parse_item_kind(j.at("kind").get<std::string>());
  c.subset = j.at("subset").get<std::string>();
  c.position = j.at("position").get<double>();
  c.guide = j.value("guide", std::string{});
  if (c.denominator <= 0) throw Error(ErrorCode::kMalformedRecord, "cell with zero denominator");
}

inline ScoreCell make_cell(long long numerator, long long denominator) {
  if (denominator <= 0) throw Error(ErrorCode::kEmptySamples, "cell with no samples");
  ScoreCell c;
  c.numerator = numerator;
  c.denominator = denominator;
  c.value = static_cast<double>(numerator) / static_cast<double>(denominator);
  return c;
}

namespace detail {

// item_id -> per-sample correctness, checked to hold exactly k samples.
inline std::unordered_map<std::string, std::vector<bool>> group_samples(const std::vector<SteeredItem>& items,
                                                                       const std::vector<CompletionSample>& samples, int k) {
  std::unordered_map<std::string, std::vector<bool>> by_item;
  std::unordered_map<std::string, std::set<int>> seen;
  for (const auto& it : items) by_item[it.item_id];
  for (const auto& s : samples) {
    auto found = by_item.find(s.item_id);
    if (found == by_item.end()) throw Error(ErrorCode::kKeyMismatch, "sample for unknown item " + s.item_id);
    if (s.sample_index < 0 || s.sample_index >= k || !seen[s.item_id].insert(s.sample_index).second)
      throw Error(ErrorCode::kUnscoredSample, s.item_id + " sample " + std::to_string(s.sample_index));
    if (s.verdict == VerdictLabel::kUnverified) throw Error(ErrorCode::kUnscoredSample, s.item_id);
    found->second.push_back(s.verdict == VerdictLabel::kCorrect);
  }
  for (const auto& [id, v] : by_item)
    if (static_cast<int>(v.size()) != k) throw Error(ErrorCode::kUnscoredSample, id);
  return by_item;
}

}  // namespace detail

struct PositionTable {
  std::string model;
  ItemKind kind = ItemKind::kRecoverability;
  std::string subset;
  std::vector<ScoreCell> cells;  // ascending position
  double avg = 0.0;              // unweighted mean of cell values
};

inline void to_json(json& j, const PositionTable& t) {
  j = json{{"model", t.model}, {"kind", to_string(t.kind)}, {"subset", t.subset}, {"cells", t.cells}, {"avg", t.avg}};
}
inline void from_json(const json& j, PositionTable& t) {
  t.model = j.at("model").get<std::string>();
  t.kind = parse_item_kind(j.at("kind").get<std::string>());
  t.subset = j.at("subset").get<std::string>();
  t.cells = j.at("cells").get<std::vector<ScoreCell>>();
  t.avg = j.at("avg").get<double>();
}

// Cells keyed by `key(item)`, each the pooled pass@1 over its items.
template <typename KeyFn>
std::map<double, ScoreCell> cells_by(const std::vector<SteeredItem>& items,
                                     const std::unordered_map<std::string, std::vector<bool>>& grouped, KeyFn key) {
  std::map<double, std::pair<long long, long long>> counts;
  for (const auto& it : items) {
    const auto& v = grouped.at(it.item_id);
    auto& c = counts[key(it)];
    c.first += std::count(v.begin(), v.end(), true);
    c.second += static_cast<long long>(v.size());
  }
  std::map<double, ScoreCell> out;
  for (const auto& [pos, c] : counts) {
    ScoreCell cell = make_cell(c.first, c.second);
    cell.position = pos;
    out.emplace(pos, cell);
  }
  return out;
}

inline PositionTable recoverability_table(const std::vector<SteeredItem>& items, const std::vector<CompletionSample>& samples, int k,
                                          const std::string& model, const std::string& subset) {
  if (items.empty()) throw Error(ErrorCode::kEmptySamples, "no recoverability items");
  const auto grouped = detail::group_samples(items, samples, k);
  PositionTable t{model, ItemKind::kRecoverability, subset, {}, 0.0};
  std::vector<double> values;
  for (auto& [pos, cell] : cells_by(items, grouped, [](const SteeredItem& it) { return it.spec.m_fraction; })) {
    cell.model = model;
    cell.kind = ItemKind::kRecoverability;
    cell.subset = subset;
    values.push_back(cell.value);
    t.cells.push_back(cell);
  }
  t.avg = unweighted_mean(values);
  return t;
}

struct GuidabilityTable {
  PositionTable teach;                     // per-n cells and Avg
  std::vector<double> ans_fraction_per_n;  // aligned with teach.cells
  double ans_fraction = 0.0;               // unweighted mean over n
  double delta_pp = 0.0;                   // (Avg - Ans) in percentage points
  std::map<std::string, double> per_guide; // guide -> pass@1 averaged over n
  std::map<std::string, std::pair<long long, long long>> support;  // guide -> (problems, trajectories)
};

inline void to_json(json& j, const GuidabilityTable& g) {
  json support = json::object();
  for (const auto& [guide, s] : g.support) support[guide] = json{{"problems", s.first}, {"trajectories", s.second}};
  j = json{{"teach", g.teach},
           {"ans_fraction_per_n", g.ans_fraction_per_n},
           {"ans_fraction", g.ans_fraction},
           {"delta_pp", g.delta_pp},
           {"per_guide", g.per_guide},
           {"support", support}};
}
inline void from_json(const json& j, GuidabilityTable& g) {
  g.teach = j.at("teach").get<PositionTable>();
  g.ans_fraction_per_n = j.at("ans_fraction_per_n").get<std::vector<double>>();
  g.ans_fraction = j.at("ans_fraction").get<double>();
  g.delta_pp = j.at("delta_pp").get<double>();
  g.per_guide = j.value("per_guide", std::map<std::string, double>{});
  g.support.clear();
  if (j.contains("support"))
    for (const auto& [guide, s] : j.at("support").items())
      g.support[guide] = {s.at("problems").get<long long>(), s.at("trajectories").get<long long>()};
}

inline GuidabilityTable guidability_table(const std::vector<SteeredItem>& items, const std::vector<CompletionSample>& samples, int k,
                                          const std::string& model, const std::string& subset) {
  if (items.empty()) throw Error(ErrorCode::kEmptySamples, "no guidability items");
  const auto grouped = detail::group_samples(items, samples, k);
  GuidabilityTable g;
  g.teach = PositionTable{model, ItemKind::kGuidability, subset, {}, 0.0};
  std::vector<double> values;
  for (auto& [pos, cell] : cells_by(items, grouped, [](const SteeredItem& it) { return it.spec.n_fraction; })) {
    cell.model = model;
    cell.kind = ItemKind::kGuidability;
    cell.subset = subset;
    values.push_back(cell.value);
    g.teach.cells.push_back(cell);

    long long with_answer = 0, total = 0;
    for (const auto& it : items) {
      if (it.spec.n_fraction != pos) continue;
      ++total;
      with_answer += it.steer_contains_answer ? 1 : 0;
    }
    g.ans_fraction_per_n.push_back(static_cast<double>(with_answer) / static_cast<double>(total));
  }
  g.teach.avg = unweighted_mean(values);
  g.ans_fraction = unweighted_mean(g.ans_fraction_per_n);
  g.delta_pp = (g.teach.avg - g.ans_fraction) * 100.0;

  std::map<std::string, std::vector<const SteeredItem*>> by_guide;
  for (const auto& it : items) by_guide[it.guide].push_back(&it);
  for (const auto& [guide, list] : by_guide) {
    std::map<double, std::pair<long long, long long>> per_n;
    std::set<std::string> problems;
    std::set<std::string> trajectories;
    for (const auto* it : list) {
      const auto& v = grouped.at(it->item_id);
      auto& c = per_n[it->spec.n_fraction];
      c.first += std::count(v.begin(), v.end(), true);
      c.second += static_cast<long long>(v.size());
      problems.insert(it->question_id);
      trajectories.insert(it->steer_source.model + "/" + it->steer_source.question_id + "/" + std::to_string(it->steer_source.sample_index));
    }
    std::vector<double> vals;
    for (const auto& [n, c] : per_n) vals.push_back(static_cast<double>(c.first) / static_cast<double>(c.second));
    g.per_guide[guide] = unweighted_mean(vals);
    g.support[guide] = {static_cast<long long>(problems.size()), static_cast<long long>(trajectories.size())};
  }
  return g;
}

// ---------------------------------------------------------------------------
// Rank deltas

struct RankDelta {
  std::string model;
  int benchmark_rank = 0;
  int test_rank = 0;
  int delta = 0;  // benchmark_rank - test_rank; positive = rises

  bool operator==(const RankDelta&) const = default;
};

using ModelScores = std::vector<std::pair<std::string, double>>;

// 1-based ranks by descending score, ties broken by model name.
inline std::map<std::string, int> descending_ranks(const ModelScores& scores) {
  std::vector<std::pair<std::string, double>> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::map<std::string, int> ranks;
  for (std::size_t i = 0; i < sorted.size(); ++i) ranks[sorted[i].first] = static_cast<int>(i) + 1;
  return ranks;
}

inline std::vector<RankDelta> rank_deltas(const ModelScores& benchmark_scores, const ModelScores& test_scores) {
  const auto bench = descending_ranks(benchmark_scores);
  const auto test = descending_ranks(test_scores);
  if (bench.size() != benchmark_scores.size() || test.size() != test_scores.size())
    throw Error(ErrorCode::kModelMismatch, "duplicate model in score column");
  std::set<std::string> a, b;
  for (const auto& [m, r] : bench) a.insert(m);
  for (const auto& [m, r] : test) b.insert(m);
  if (a != b) throw Error(ErrorCode::kModelMismatch, "score columns cover different models");
  std::vector<RankDelta> out;
  for (const auto& [model, score] : benchmark_scores) {
    RankDelta d{model, bench.at(model), test.at(model), 0};
    d.delta = d.benchmark_rank - d.test_rank;
    out.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Welch two-sample t-test

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p_two_sided = 1.0;
  // Both groups have zero variance.
  bool degenerate = false;
};

inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::kInvalidArgument, "each group needs at least two values");
  auto moments = [](std::span<const double> x) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  if (!std::isfinite(va) || !std::isfinite(vb)) throw Error(ErrorCode::kInvalidArgument, "non-finite variance");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  const double se2 = sa + sb;

  WelchResult r;
  if (se2 == 0.0) {
    r.degenerate = true;
    r.dof = na + nb - 2.0;
    if (ma == mb) {
      r.t = 0.0;
      r.p_two_sided = 1.0;
    } else {
      r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_two_sided = 0.0;
    }
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  if (r.t == 0.0) {
    r.p_two_sided = 1.0;
    return r;
  }
  const boost::math::students_t dist(r.dof);
  r.p_two_sided = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t))));
  return r;
}

// ---------------------------------------------------------------------------
// Solo profiles

// One profile per question in `questions` order. Every question must have
// exactly k verified trajectories of `model`.
inline std::vector<SoloProfile> solve_profiles(const QuestionSet& questions, const std::vector<Trajectory>& trajectories,
                                               const std::string& model, int k) {
  std::unordered_map<std::string, std::vector<const Trajectory*>> by_q;
  for (const auto& t : trajectories)
    if (t.model == model) by_q[t.question_id].push_back(&t);
  std::vector<SoloProfile> out;
  for (const auto& q : questions) {
    auto& list = by_q[q.id];
    std::sort(list.begin(), list.end(), [](const Trajectory* a, const Trajectory* b) { return a->sample_index < b->sample_index; });
    if (static_cast<int>(list.size()) != k) throw Error(ErrorCode::kIncomplete, q.id);
    SoloProfile p{q.id, model, 0, k, {}};
    for (int i = 0; i < k; ++i) {
      const Trajectory* t = list[static_cast<std::size_t>(i)];
      if (t->sample_index != i || t->verdict == VerdictLabel::kUnverified) throw Error(ErrorCode::kIncomplete, q.id);
      if (t->verdict == VerdictLabel::kCorrect) ++p.solve_count;
      p.trajectories.push_back(t->ref());
    }
    out.push_back(std::move(p));
  }
  return out;
}

// pass@1 of a model's solo trajectories per benchmark name.
inline std::map<std::string, double> benchmark_scores(const QuestionSet& questions, const std::vector<SoloProfile>& profiles) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& p : profiles) {
    const auto& q = questions.at(p.question_id);
    auto& a = acc[std::string(to_string(q.benchmark))];
    a.first += static_cast<double>(p.solve_count) / static_cast<double>(p.k);
    a.second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [b, a] : acc) out[b] = a.first / a.second;
  return out;
}

}  // namespace offtrack
