#include <chrono>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "offtrack/offtrack.hpp"

namespace ot = offtrack;

namespace {

struct Common {
  std::string config_path;
  std::string run_id;
  std::string model;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_inflight;
  bool resume = false;
};

ot::Pipeline make_pipeline(const Common& c) {
  ot::Config cfg = ot::load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.max_inflight) cfg.max_inflight = *c.max_inflight;
  ot::PipelineOptions opts;
  opts.resume = c.resume;
  if (!c.model.empty()) opts.model_filter = c.model;
  return ot::Pipeline(std::move(cfg), c.run_id, opts);
}

std::vector<ot::ItemKind> kinds_for(const std::string& kind) {
  if (kind == "recov") return {ot::ItemKind::kRecoverability};
  if (kind == "guid") return {ot::ItemKind::kGuidability};
  return {ot::ItemKind::kRecoverability, ot::ItemKind::kGuidability};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offtrack: off-trajectory reasoning evaluation"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--run-id", common.run_id, "Run directory name under runs_dir")->required();
    sub->add_option("--model", common.model, "Restrict the stage to one model");
    sub->add_option("--seed", common.seed, "Override the configured seed");
    sub->add_option("--max-inflight", common.max_inflight, "Override the request concurrency cap")->check(CLI::PositiveNumber);
    sub->add_flag("--resume", common.resume, "Skip stage outputs that are already complete");
  };

  auto* solo = app.add_subcommand("solo", "Sample solo trajectories and solve profiles");
  add_common(solo);
  auto* gen_recov = app.add_subcommand("gen-recov", "Build recoverability items");
  add_common(gen_recov);
  auto* gen_guid = app.add_subcommand("gen-guid", "Build guidability items");
  add_common(gen_guid);

  std::string kind = "all";
  auto* run = app.add_subcommand("run", "Complete items off-trajectory and verify");
  add_common(run);
  run->add_option("--kind", kind, "recov, guid or all")->check(CLI::IsMember({"recov", "guid", "all"}));

  auto* score = app.add_subcommand("score", "Compute metrics.json");
  add_common(score);

  std::string baseline;
  auto* report = app.add_subcommand("report", "Render reports from metrics.json");
  add_common(report);
  report->add_option("--baseline", baseline, "metrics.json of the base run for ablation.md")->check(CLI::ExistingFile);

  std::string questions_path, behavior = "ORACLE", host = "127.0.0.1";
  std::vector<std::string> model_behaviors;
  int port = 8000, latency_ms = 0;
  auto* mock = app.add_subcommand("mock-serve", "Serve scripted completions for local tests");
  mock->add_option("--questions", questions_path, "Question set supplying gold answers")->required()->check(CLI::ExistingFile);
  mock->add_option("--behavior", behavior, "Default behavior");
  mock->add_option("--model-behavior", model_behaviors, "Per-model behavior as MODEL=BEHAVIOR");
  mock->add_option("--host", host);
  mock->add_option("--port", port, "0 picks a free port");
  mock->add_option("--latency-ms", latency_ms, "Fixed delay per completion");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mock) {
      ot::sim::SimReasoner server(ot::sim::answer_book_from(ot::load_question_set(questions_path)), ot::sim::parse_behavior(behavior));
      for (const auto& mb : model_behaviors) {
        const auto eq = mb.find('=');
        if (eq == std::string::npos) throw ot::Error(ot::ErrorCode::kInvalidArgument, "expected MODEL=BEHAVIOR, got " + mb);
        server.set_behavior(ot::sim::parse_behavior(mb.substr(eq + 1)), mb.substr(0, eq));
      }
      server.set_latency_ms(latency_ms);
      server.start(host, port);
      std::cout << "listening on " << server.url() << std::endl;
      for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
    }

    ot::Pipeline p = make_pipeline(common);
    if (*solo) p.solo();
    if (*gen_recov) p.gen(ot::ItemKind::kRecoverability);
    if (*gen_guid) p.gen(ot::ItemKind::kGuidability);
    if (*run)
      for (auto k : kinds_for(kind)) p.run(k);
    if (*score) p.score();
    if (*report) p.report(baseline.empty() ? std::nullopt : std::optional<ot::fs::path>(baseline));
    const auto s = p.gateway().stats();
    std::cerr << "requests: attempts=" << s.http_attempts << " peak_inflight=" << s.peak_inflight << " judge_calls=" << p.judge_calls() << '\n';
  } catch (const ot::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
