#include <catch_amalgamated.hpp>

#include <sstream>

#include "offtrack/reporter.hpp"
#include "support/published.hpp"

using namespace offtrack;

namespace {

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

// Markdown table cells of the row starting with "| <model> |".
std::vector<std::string> md_row(const std::string& md, const std::string& model) {
  std::istringstream in(md);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("| " + model + " |", 0) != 0) continue;
    std::vector<std::string> cells;
    std::size_t p = 1;
    while (true) {
      const std::size_t q = line.find('|', p);
      if (q == std::string::npos) break;
      std::string c = line.substr(p, q - p);
      c.erase(0, c.find_first_not_of(' '));
      c.erase(c.find_last_not_of(' ') + 1);
      cells.push_back(c);
      p = q + 1;
    }
    return cells;
  }
  return {};
}

GuidabilityTable guid_table(const std::string& model, const std::string& subset, std::vector<double> teach, std::vector<double> ans) {
  GuidabilityTable g;
  g.teach = published::table_from_cells(model, subset, teach);
  g.teach.kind = ItemKind::kGuidability;
  for (std::size_t i = 0; i < g.teach.cells.size(); ++i) {
    g.teach.cells[i].kind = ItemKind::kGuidability;
    g.teach.cells[i].position = 0.2 * static_cast<double>(i + 1);
  }
  for (double a : ans) g.ans_fraction_per_n.push_back(a / 100.0);
  std::vector<double> v = g.ans_fraction_per_n;
  g.ans_fraction = unweighted_mean(v);
  g.delta_pp = (g.teach.avg - g.ans_fraction) * 100.0;
  return g;
}

}  // namespace

TEST_CASE("main table reproduces the published recoverability subscripts") {
  const MetricsDoc doc = published::recoverability_doc("recoverability_shared", "h1");
  const std::string md = render_main_table_md(doc);
  CHECK(md_row(md, "R1-Distill-Qwen-1.5B").at(2) == "60.6<sub>↑+2</sub>");
  CHECK(md_row(md, "AM-Thinking-32B").at(2) == "33.4<sub>↓-13</sub>");
  CHECK(md_row(md, "LIMO-32B").at(2) == "29.3<sub>↓-7</sub>");
  CHECK(md_row(md, "Qwen3-8B").at(2) == "85.9<sub>↑+0</sub>");
  CHECK(md_row(md, "Qwen3-8B").at(4) == "N/A");
  CHECK(md.find("Manifest: `h1`") != std::string::npos);
}

TEST_CASE("CSV and Markdown carry the same numbers") {
  MetricsDoc doc = published::recoverability_doc("recoverability_shared", "h2");
  doc.models[0].guidability["shared"] = guid_table(doc.models[0].model, "shared", {1.0, 2.0, 4.0, 5.0}, {0.0, 0.0, 3.0, 5.0});
  doc.models[1].guidability["shared"] = guid_table(doc.models[1].model, "shared", {6.0, 8.0, 10.0, 11.0}, {0.0, 1.0, 2.0, 3.0});
  const std::string md = render_main_table_md(doc), csv = render_main_table_csv(doc);
  CHECK(csv.rfind("# manifest_hash=h2\n", 0) == 0);
  const auto rows = csv_rows(csv);
  REQUIRE(rows.size() == doc.models.size() + 1);
  CHECK(rows[0].size() == 10);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto cells = md_row(md, rows[i][0]);
    REQUIRE(cells.size() == 6);
    CHECK(cells[1] == rows[i][1]);
    for (std::size_t c = 0; c < 4; ++c) {
      const std::string& value = rows[i][2 + 2 * c];
      const std::string& delta = rows[i][3 + 2 * c];
      if (value == "N/A") {
        CHECK(cells[2 + c] == "N/A");
        CHECK(delta.empty());
      } else {
        CHECK(cells[2 + c] == value + rank_subscript_md(std::stoi(delta)));
      }
    }
  }
  CHECK(md_row(md, doc.models[0].model).at(4) == "3.0<sub>↑+0</sub>");
  CHECK(md_row(md, doc.models[1].model).at(4) == "8.8<sub>↑+0</sub>");
}

TEST_CASE("ablation diff reproduces the published subscripts") {
  const MetricsDoc base = published::recoverability_doc("recoverability_shared", "base");
  const MetricsDoc abl = published::recoverability_doc("recoverability_shared_first_paragraph", "abl");
  const std::string md = render_ablation_diff(base, abl);
  const auto& rows = published::tables().at("recoverability_shared_first_paragraph");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto cells = md_row(md, base.models[i].model);
    REQUIRE(cells.size() == 7);
    for (std::size_t c = 0; c < 6; ++c) {
      const double v = rows[i]["cells"][c][0].get<double>(), d = rows[i]["cells"][c][1].get<double>();
      INFO(base.models[i].model << " column " << c);
      CHECK(cells[c + 1] == format_1dp(v) + "<sub>" + format_signed_1dp(d) + "</sub>");
    }
  }
  CHECK(md_row(md, "R1-Distill-Qwen-1.5B").at(1) == "89.0<sub>+45.0</sub>");
  CHECK(md.find("Base manifest: `base`") != std::string::npos);
  CHECK(md.find("Manifest: `abl`") != std::string::npos);
}

TEST_CASE("ablation diff rejects mismatched keys") {
  const MetricsDoc base = published::recoverability_doc("recoverability_shared", "base");
  MetricsDoc abl = base;
  abl.models[0].recoverability["shared"].cells.pop_back();
  try {
    render_ablation_diff(base, abl);
    FAIL("expected KEY_MISMATCH");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kKeyMismatch);
  }
}

TEST_CASE("position series and guidability breakdown") {
  MetricsDoc doc;
  doc.manifest_hash = "h3";
  CHECK(render_position_series(doc) == "# manifest_hash=h3\nmodel,kind,subset,position,value\n");
  CHECK(render_guidability_csv(doc) == "# manifest_hash=h3\nmodel,subset,position,teach,ans,delta_pp\n");

  ModelMetrics m;
  m.model = "m,1";
  m.recoverability["shared"] = published::table_from_cells("m,1", "shared", {100.0, 50.0, 25.0, 12.5, 0.0});
  m.guidability["individual"] = guid_table("m,1", "individual", {10.0, 20.0, 30.0, 40.0}, {0.0, 10.0, 30.0, 30.0});
  doc.models.push_back(m);

  const auto series = csv_rows(render_position_series(doc));
  REQUIRE(series.size() == 1 + 5 + 4);
  CHECK(series[1] == std::vector<std::string>{"\"m", "1\"", "RECOVERABILITY", "shared", "0.0", "100.0"});
  CHECK(render_position_series(doc).find("\"m,1\",RECOVERABILITY,shared,60.0,12.5\n") != std::string::npos);

  const std::string guid = render_guidability_csv(doc);
  CHECK(guid.find("\"m,1\",individual,40.0,20.0,10.0,+10.0\n") != std::string::npos);
  CHECK(guid.find("\"m,1\",individual,avg,25.0,17.5,+7.5\n") != std::string::npos);
}

TEST_CASE("labels and metrics round-trip") {
  CHECK(position_label(0.2) == "20%");
  CHECK(position_label(0.125) == "12.5%");
  CHECK(format_rank_delta(0) == "+0");
  CHECK(rank_subscript_md(-3) == "<sub>↓-3</sub>");
  MetricsDoc doc = published::recoverability_doc("recoverability_shared", "h4");
  doc.models[2].benchmark_avg.reset();
  const MetricsDoc back = json(doc).get<MetricsDoc>();
  CHECK(json(back) == json(doc));
  CHECK(md_row(render_main_table_md(doc), doc.models[2].model).at(1) == "N/A");
}
