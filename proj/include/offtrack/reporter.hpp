#pragma once

// Renders metrics into Markdown and CSV tables. Every renderer is a pure
// function of a MetricsDoc.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "offtrack/core.hpp"
#include "offtrack/metrics.hpp"

namespace offtrack {

inline constexpr std::string_view kSharedSubset = "shared";
inline constexpr std::string_view kIndividualSubset = "individual";

struct ModelMetrics {
  std::string model;
  std::map<std::string, double> per_benchmark;  // fractions
  std::optional<double> benchmark_avg;          // fraction; unset when a benchmark is missing
  std::map<std::string, PositionTable> recoverability;  // subset -> table
  std::map<std::string, GuidabilityTable> guidability;  // subset -> table
};

inline void to_json(json& j, const ModelMetrics& m) {
  j = json{{"model", m.model},
           {"per_benchmark", m.per_benchmark},
           {"benchmark_avg", m.benchmark_avg ? json(*m.benchmark_avg) : json(nullptr)},
           {"recoverability", m.recoverability},
           {"guidability", m.guidability}};
}
inline void from_json(const json& j, ModelMetrics& m) {
  m.model = j.at("model").get<std::string>();
  m.per_benchmark = j.value("per_benchmark", std::map<std::string, double>{});
  m.benchmark_avg.reset();
  if (j.contains("benchmark_avg") && !j.at("benchmark_avg").is_null()) m.benchmark_avg = j.at("benchmark_avg").get<double>();
  m.recoverability = j.value("recoverability", std::map<std::string, PositionTable>{});
  m.guidability = j.value("guidability", std::map<std::string, GuidabilityTable>{});
}

struct MetricsDoc {
  std::string manifest_hash;
  std::vector<ModelMetrics> models;  // configuration order
};

inline void to_json(json& j, const MetricsDoc& d) { j = json{{"manifest_hash", d.manifest_hash}, {"models", d.models}}; }
inline void from_json(const json& j, MetricsDoc& d) {
  d.manifest_hash = j.at("manifest_hash").get<std::string>();
  d.models = j.at("models").get<std::vector<ModelMetrics>>();
}

// ---------------------------------------------------------------------------
// Helpers

inline std::string format_rank_delta(int delta) { return (delta >= 0 ? "+" : "") + std::to_string(delta); }

inline std::string rank_subscript_md(int delta) {
  return std::string("<sub>") + (delta >= 0 ? "↑" : "↓") + format_rank_delta(delta) + "</sub>";
}

inline std::string position_label(double fraction) {
  std::string s = format_1dp(percent_1dp(fraction));
  if (s.size() > 2 && s.compare(s.size() - 2, 2, ".0") == 0) s.resize(s.size() - 2);
  return s + "%";
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string manifest_line_md(const MetricsDoc& d) { return "Manifest: `" + d.manifest_hash + "`\n"; }
inline std::string manifest_line_csv(const MetricsDoc& d) { return "# manifest_hash=" + d.manifest_hash + "\n"; }

// One column of the main table: value per model, rank deltas among the
// models that have both a value and a benchmark average.
struct MainColumn {
  std::map<std::string, double> values;
  std::map<std::string, int> deltas;
};

inline MainColumn main_column(const MetricsDoc& d, const std::function<std::optional<double>(const ModelMetrics&)>& get) {
  MainColumn col;
  ModelScores bench, test;
  for (const auto& m : d.models) {
    const auto v = get(m);
    if (!v) continue;
    col.values[m.model] = *v;
    if (m.benchmark_avg) {
      bench.emplace_back(m.model, *m.benchmark_avg);
      test.emplace_back(m.model, *v);
    }
  }
  if (!bench.empty())
    for (const auto& r : rank_deltas(bench, test)) col.deltas[r.model] = r.delta;
  return col;
}

struct MainTableData {
  std::vector<std::string> headers;
  std::vector<MainColumn> columns;
};

inline MainTableData main_table_data(const MetricsDoc& d) {
  MainTableData t;
  auto recov = [](std::string_view subset) {
    return [subset](const ModelMetrics& m) -> std::optional<double> {
      auto it = m.recoverability.find(std::string(subset));
      if (it == m.recoverability.end()) return std::nullopt;
      return it->second.avg;
    };
  };
  auto guid = [](std::string_view subset) {
    return [subset](const ModelMetrics& m) -> std::optional<double> {
      auto it = m.guidability.find(std::string(subset));
      if (it == m.guidability.end()) return std::nullopt;
      return it->second.teach.avg;
    };
  };
  t.headers = {"Recov. Sh.", "Recov. Ind.", "Guid. Sh.", "Guid. Ind."};
  t.columns = {main_column(d, recov(kSharedSubset)), main_column(d, recov(kIndividualSubset)), main_column(d, guid(kSharedSubset)),
               main_column(d, guid(kIndividualSubset))};
  return t;
}

// ---------------------------------------------------------------------------
// Main table

inline std::string render_main_table_md(const MetricsDoc& d) {
  const auto t = main_table_data(d);
  std::ostringstream out;
  out << "| Model | Benchmark Avg. |";
  for (const auto& h : t.headers) out << ' ' << h << " |";
  out << "\n|---|---|";
  for (std::size_t i = 0; i < t.headers.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& m : d.models) {
    out << "| " << m.model << " | " << (m.benchmark_avg ? format_percent(*m.benchmark_avg) : "N/A") << " |";
    for (const auto& col : t.columns) {
      auto v = col.values.find(m.model);
      if (v == col.values.end()) {
        out << " N/A |";
        continue;
      }
      out << ' ' << format_percent(v->second);
      if (auto dl = col.deltas.find(m.model); dl != col.deltas.end()) out << rank_subscript_md(dl->second);
      out << " |";
    }
    out << '\n';
  }
  out << '\n' << manifest_line_md(d);
  return out.str();
}

inline std::string render_main_table_csv(const MetricsDoc& d) {
  const auto t = main_table_data(d);
  std::ostringstream out;
  out << manifest_line_csv(d);
  out << "model,benchmark_avg,recov_shared,recov_shared_rank_delta,recov_individual,recov_individual_rank_delta,"
         "guid_shared,guid_shared_rank_delta,guid_individual,guid_individual_rank_delta\n";
  for (const auto& m : d.models) {
    out << csv_field(m.model) << ',' << (m.benchmark_avg ? format_percent(*m.benchmark_avg) : "N/A");
    for (const auto& col : t.columns) {
      auto v = col.values.find(m.model);
      out << ',' << (v == col.values.end() ? "N/A" : format_percent(v->second));
      auto dl = col.deltas.find(m.model);
      out << ',' << (dl == col.deltas.end() ? "" : format_rank_delta(dl->second));
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Position series and guidability breakdown

// Columns: model,kind,subset,position,value. Rows ordered by model
// (configuration order), kind, subset, position.
inline std::string render_position_series(const MetricsDoc& d) {
  std::ostringstream out;
  out << manifest_line_csv(d);
  out << "model,kind,subset,position,value\n";
  auto emit = [&](const PositionTable& t) {
    for (const auto& c : t.cells)
      out << csv_field(t.model) << ',' << to_string(t.kind) << ',' << t.subset << ',' << format_1dp(percent_1dp(c.position)) << ','
          << format_percent(c.value) << '\n';
  };
  for (const auto& m : d.models) {
    for (const auto& [subset, t] : m.recoverability) emit(t);
    for (const auto& [subset, g] : m.guidability) emit(g.teach);
  }
  return out.str();
}

// Columns: model,subset,position,teach,ans,delta_pp. position "avg" holds
// the unweighted means and the Teach - Ans. difference.
inline std::string render_guidability_csv(const MetricsDoc& d) {
  std::ostringstream out;
  out << manifest_line_csv(d);
  out << "model,subset,position,teach,ans,delta_pp\n";
  for (const auto& m : d.models) {
    for (const auto& [subset, g] : m.guidability) {
      for (std::size_t i = 0; i < g.teach.cells.size(); ++i) {
        const double teach = percent_1dp(g.teach.cells[i].value), ans = percent_1dp(g.ans_fraction_per_n[i]);
        out << csv_field(m.model) << ',' << subset << ',' << format_1dp(percent_1dp(g.teach.cells[i].position)) << ',' << format_1dp(teach)
            << ',' << format_1dp(ans) << ',' << format_signed_1dp(teach - ans) << '\n';
      }
      const double teach = percent_1dp(g.teach.avg), ans = percent_1dp(g.ans_fraction);
      out << csv_field(m.model) << ',' << subset << ",avg," << format_1dp(teach) << ',' << format_1dp(ans) << ','
          << format_signed_1dp(teach - ans) << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Ablation diff

// Ablation value per (model, subset, position) with the subscript
// (ablation - base), both taken at display precision.
inline std::string render_ablation_diff(const MetricsDoc& base, const MetricsDoc& ablation) {
  auto index = [](const MetricsDoc& d) {
    std::map<std::tuple<std::string, std::string, double>, double> out;
    std::map<std::pair<std::string, std::string>, double> avg;
    for (const auto& m : d.models)
      for (const auto& [subset, t] : m.recoverability) {
        for (const auto& c : t.cells) out[{m.model, subset, c.position}] = c.value;
        avg[{m.model, subset}] = t.avg;
      }
    return std::pair{out, avg};
  };
  const auto [base_cells, base_avg] = index(base);
  const auto [abl_cells, abl_avg] = index(ablation);
  for (const auto& [key, v] : abl_cells)
    if (!base_cells.count(key))
      throw Error(ErrorCode::kKeyMismatch, std::get<0>(key) + "/" + std::get<1>(key) + "/" + format_1dp(percent_1dp(std::get<2>(key))));
  for (const auto& [key, v] : base_cells)
    if (!abl_cells.count(key))
      throw Error(ErrorCode::kKeyMismatch, std::get<0>(key) + "/" + std::get<1>(key) + "/" + format_1dp(percent_1dp(std::get<2>(key))));

  auto cell = [](double abl, double bas) {
    const double a = percent_1dp(abl), b = percent_1dp(bas);
    return format_1dp(a) + "<sub>" + format_signed_1dp(a - b) + "</sub>";
  };

  std::ostringstream out;
  std::map<std::string, std::vector<double>> positions_by_subset;
  for (const auto& [key, v] : abl_cells) {
    auto& p = positions_by_subset[std::get<1>(key)];
    if (std::find(p.begin(), p.end(), std::get<2>(key)) == p.end()) p.push_back(std::get<2>(key));
  }
  for (auto& [subset, positions] : positions_by_subset) {
    std::sort(positions.begin(), positions.end());
    out << "### Recoverability (" << subset << ")\n\n| Model |";
    for (double p : positions) out << ' ' << position_label(p) << " |";
    out << " Avg. |\n|---|";
    for (std::size_t i = 0; i <= positions.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& m : ablation.models) {
      if (!abl_avg.count({m.model, subset})) continue;
      out << "| " << m.model << " |";
      for (double p : positions) {
        auto a = abl_cells.find({m.model, subset, p});
        out << ' ' << (a == abl_cells.end() ? std::string("N/A") : cell(a->second, base_cells.at({m.model, subset, p}))) << " |";
      }
      out << ' ' << cell(abl_avg.at({m.model, subset}), base_avg.at({m.model, subset})) << " |\n";
    }
    out << '\n';
  }
  out << "Base manifest: `" << base.manifest_hash << "`\n";
  out << manifest_line_md(ablation);
  return out.str();
}

}  // namespace offtrack
