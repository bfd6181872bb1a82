#pragma once

// Pipeline stages behind the CLI: solo sampling, item generation,
// off-trajectory runs, scoring and report rendering. Each stage reads and
// writes the run directory; all endpoint traffic goes through one Gateway.

#include <atomic>
#include <exception>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "offtrack/core.hpp"
#include "offtrack/gateway.hpp"
#include "offtrack/metrics.hpp"
#include "offtrack/reporter.hpp"
#include "offtrack/segmenter.hpp"
#include "offtrack/testgen.hpp"
#include "offtrack/verifier.hpp"

namespace offtrack {

enum class JudgePolicy { kHalt, kDegrade };

inline JudgePolicy parse_judge_policy(std::string_view s) {
  if (s == "halt") return JudgePolicy::kHalt;
  if (s == "degrade") return JudgePolicy::kDegrade;
  throw Error(ErrorCode::kInvalidArgument, "judge policy must be halt|degrade, got " + std::string(s));
}
inline std::string_view to_string(JudgePolicy p) { return p == JudgePolicy::kHalt ? "halt" : "degrade"; }

struct Config {
  fs::path questions_path;
  std::string question_set;
  std::vector<ModelRef> models;  // under test
  std::vector<ModelRef> guides;  // guidability steer models
  std::vector<PromptTemplate> templates;
  SamplingParams sampling;
  GridConfig grid;
  std::vector<std::string> subsets{std::string(kSharedSubset), std::string(kIndividualSubset)};
  JudgeConfig judge;
  JudgePolicy judge_policy = JudgePolicy::kHalt;
  bool judge_solo = true;
  // Benchmarks that must all be present for a benchmark average; empty means
  // every benchmark found in the question set.
  std::vector<std::string> benchmarks;
  int max_inflight = 16;
  int max_attempts = 4;
  int backoff_ms = 500;
  int read_timeout_s = 1800;
  bool send_seed = true;
  std::uint64_t seed = 0;
  fs::path runs_dir = "runs";

  void validate() const {
    if (models.empty()) throw Error(ErrorCode::kInvalidArgument, "config lists no models");
    std::set<std::string> names;
    for (const auto& m : models)
      if (!names.insert(m.name).second) throw Error(ErrorCode::kInvalidArgument, "duplicate model " + m.name);
    for (const auto& s : subsets)
      if (s != kSharedSubset && s != kIndividualSubset) throw Error(ErrorCode::kInvalidArgument, "unknown subset " + s);
    sampling.validate();
    grid.validate();
    if (judge.enabled && judge.judge_model.endpoint_url.empty()) throw Error(ErrorCode::kInvalidArgument, "judge enabled without a judge model");
  }

  // Everything that changes results; concurrency and paths are excluded.
  json settings() const {
    return json{{"templates", templates},
                {"grid", grid},
                {"subsets", subsets},
                {"judge",
                 {{"enabled", judge.enabled},
                  {"model", judge.judge_model},
                  {"temperature", judge.temperature},
                  {"max_tokens", judge.max_tokens},
                  {"policy", to_string(judge_policy)},
                  {"solo", judge_solo}}},
                {"benchmarks", benchmarks},
                {"send_seed", send_seed}};
  }
};

// Relative paths in the file resolve against the config file's directory.
inline Config parse_config(const json& j, const fs::path& base_dir = {}) {
  Config c;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    c.questions_path = resolve(j.at("questions").get<std::string>());
    c.question_set = j.value("question_set", c.questions_path.stem().string());
    c.models = j.at("models").get<std::vector<ModelRef>>();
    c.guides = j.value("guides", std::vector<ModelRef>{});
    c.templates = j.value("templates", std::vector<PromptTemplate>{});
    if (j.contains("sampling")) c.sampling = j.at("sampling").get<SamplingParams>();
    if (j.contains("grid")) c.grid = j.at("grid").get<GridConfig>();
    c.subsets = j.value("subsets", c.subsets);
    if (j.contains("judge")) {
      const json& jj = j.at("judge");
      c.judge.enabled = jj.value("enabled", false);
      if (jj.contains("model")) c.judge.judge_model = jj.at("model").get<ModelRef>();
      c.judge.temperature = jj.value("temperature", c.judge.temperature);
      c.judge.max_tokens = jj.value("max_tokens", c.judge.max_tokens);
      c.judge_policy = parse_judge_policy(jj.value("policy", std::string("halt")));
      c.judge_solo = jj.value("solo", true);
    }
    c.benchmarks = j.value("benchmarks", std::vector<std::string>{});
    if (j.contains("concurrency")) {
      const json& cc = j.at("concurrency");
      c.max_inflight = cc.value("max_inflight", c.max_inflight);
      c.max_attempts = cc.value("max_attempts", c.max_attempts);
      c.backoff_ms = cc.value("backoff_ms", c.backoff_ms);
      c.read_timeout_s = cc.value("read_timeout_s", c.read_timeout_s);
    }
    c.send_seed = j.value("send_seed", true);
    c.seed = j.value("seed", std::uint64_t{0});
    c.runs_dir = resolve(j.value("runs_dir", std::string("runs")));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline Config load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
// failure after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (n == 0) return;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  auto work = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  const std::size_t count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < count; ++t) threads.emplace_back(work);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

struct PipelineOptions {
  bool resume = false;
  std::optional<std::string> model_filter;
  std::function<void(const std::string&)> log = [](const std::string& line) { std::cerr << line << '\n'; };
};

class Pipeline {
 public:
  Pipeline(Config cfg, std::string run_id, PipelineOptions opts = {})
      : cfg_(std::move(cfg)),
        opts_(std::move(opts)),
        layout_(cfg_.runs_dir, run_id),
        questions_(load_question_set(cfg_.questions_path, cfg_.question_set)),
        gateway_(gateway_options()) {
    cfg_.validate();
    if (run_id.empty()) throw Error(ErrorCode::kInvalidArgument, "empty run id");
    for (const auto& t : cfg_.templates) templates_.add(t);
    if (opts_.model_filter && !find_model(*opts_.model_filter)) throw Error(ErrorCode::kInvalidArgument, "unknown model " + *opts_.model_filter);
    layout_.create();
    RunManifest fresh = build_manifest(run_id);
    if (fs::exists(layout_.manifest())) {
      manifest_ = load_manifest(layout_.manifest());
      if (manifest_hash(manifest_) != manifest_hash(fresh))
        throw Error(ErrorCode::kManifestMismatch, layout_.manifest().string() + " was created from a different configuration");
    } else {
      manifest_ = fresh;
      save_manifest(layout_.manifest(), manifest_);
    }
  }

  const Config& config() const { return cfg_; }
  const RunLayout& layout() const { return layout_; }
  const RunManifest& manifest() const { return manifest_; }
  const QuestionSet& questions() const { return questions_; }
  Gateway& gateway() { return gateway_; }
  long long judge_calls() const { return judge_calls_.load(); }

  // ---- solo -------------------------------------------------------------

  void solo() {
    for (const auto& model : solo_models()) {
      const fs::path store = layout_.solo_store(model.name);
      const std::size_t expected = questions_.size() * static_cast<std::size_t>(cfg_.sampling.samples_per_item);
      if (opts_.resume && fs::exists(store) && fs::exists(layout_.profile_store(model.name)) &&
          read_records<Trajectory>(store).size() == expected) {
        log("[solo] " + model.name + ": complete, skipped");
        continue;
      }
      std::vector<Request> reqs;
      std::vector<std::pair<const Question*, int>> owners;
      for (const auto& q : questions_) {
        auto part = solo_requests(templates_, model, q, cfg_.sampling, cfg_.sampling.samples_per_item, cfg_.seed, cfg_.send_seed);
        for (std::size_t i = 0; i < part.size(); ++i) owners.emplace_back(&q, static_cast<int>(i));
        reqs.insert(reqs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
      const auto recs = gateway_.execute_batch(reqs);
      const PromptTemplate& tmpl = templates_.get(model);
      std::vector<Trajectory> trajectories;
      trajectories.reserve(recs.size());
      for (std::size_t i = 0; i < recs.size(); ++i)
        trajectories.push_back(trajectory_from(tmpl, model, *owners[i].first, owners[i].second, recs[i]));

      const JudgeConfig judge = solo_judge();
      parallel_for(trajectories.size(), cfg_.max_inflight, [&](std::size_t i) {
        Trajectory& t = trajectories[i];
        const Question& q = questions_.at(t.question_id);
        CompletionSample as_sample;
        as_sample.completion_text = t.reasoning;
        as_sample.extracted_answer = t.answer;
        const Verdict v = verify(as_sample, q, judge, "solo/" + model.name + "/" + q.id + "/" + std::to_string(t.sample_index));
        t.verdict = v.label;
      });
      replace_records(store, trajectories);
      replace_records(layout_.profile_store(model.name), solve_profiles(questions_, trajectories, model.name, cfg_.sampling.samples_per_item));
      log("[solo] " + model.name + ": " + std::to_string(trajectories.size()) + " trajectories");
    }
    finish_stage("solo");
  }

  // ---- gen --------------------------------------------------------------

  void gen(ItemKind kind) {
    if (kind == ItemKind::kRecoverability) gen_recoverability();
    else gen_guidability();
    finish_stage(kind == ItemKind::kRecoverability ? "gen-recov" : "gen-guid");
  }

  // ---- run --------------------------------------------------------------

  void run(ItemKind kind) {
    const std::string stage = kind == ItemKind::kRecoverability ? "run-recov" : "run-guid";
    for (const auto& model : evaluated_models()) {
      for (const auto& subset : cfg_.subsets) {
        if (fs::exists(layout_.not_evaluated_marker(kind, subset, model.name))) continue;
        const fs::path item_path = layout_.item_store(kind, subset, model.name);
        if (!fs::exists(item_path))
          throw Error(ErrorCode::kIncomplete, item_path.string() + " missing; run " + (kind == ItemKind::kRecoverability ? "gen-recov" : "gen-guid") + " first");
        const auto items = read_records<SteeredItem>(item_path);
        const fs::path out = layout_.sample_store(kind, subset, model.name);
        const int k = cfg_.sampling.samples_per_item;
        if (opts_.resume && fs::exists(out) && read_records<CompletionSample>(out).size() == items.size() * static_cast<std::size_t>(k)) {
          log("[" + stage + "] " + model.name + "/" + subset + ": complete, skipped");
          continue;
        }
        std::vector<Request> reqs;
        for (const auto& it : items) {
          auto part = off_trajectory_requests(templates_, model, it, questions_.at(it.question_id), cfg_.sampling, k, cfg_.seed, cfg_.send_seed);
          reqs.insert(reqs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        }
        const auto recs = gateway_.execute_batch(reqs);
        const PromptTemplate& tmpl = templates_.get(model);
        std::vector<CompletionSample> samples;
        samples.reserve(recs.size());
        for (std::size_t i = 0; i < recs.size(); ++i)
          samples.push_back(sample_from(tmpl, items[i / static_cast<std::size_t>(k)], static_cast<int>(i % static_cast<std::size_t>(k)), recs[i]));
        parallel_for(samples.size(), cfg_.max_inflight, [&](std::size_t i) {
          CompletionSample& s = samples[i];
          const Question& q = questions_.at(items[i / static_cast<std::size_t>(k)].question_id);
          const Verdict v = verify(s, q, cfg_.judge, "run/" + s.item_id + "/" + std::to_string(s.sample_index));
          s.verdict = v.label;
          s.verdict_source = v.source;
          s.judge_analysis = v.judge_analysis;
          s.judge_parse_failure = v.parse_failure;
        });
        replace_records(out, samples);
        log("[" + stage + "] " + model.name + "/" + subset + ": " + std::to_string(samples.size()) + " samples");
      }
    }
    finish_stage(stage);
  }

  // ---- score / report -----------------------------------------------------

  MetricsDoc score() {
    MetricsDoc doc;
    doc.manifest_hash = manifest_hash(manifest_);
    std::vector<std::string> required = cfg_.benchmarks;
    if (required.empty()) {
      std::set<std::string> seen;
      for (const auto& q : questions_) seen.insert(std::string(to_string(q.benchmark)));
      required.assign(seen.begin(), seen.end());
    }
    bool any_table = false;
    const int k = cfg_.sampling.samples_per_item;
    for (const auto& model : cfg_.models) {
      ModelMetrics mm;
      mm.model = model.name;
      const fs::path profiles_path = layout_.profile_store(model.name);
      if (fs::exists(profiles_path)) {
        mm.per_benchmark = benchmark_scores(questions_, read_records<SoloProfile>(profiles_path));
        mm.benchmark_avg = benchmark_average(mm.per_benchmark, required);
      }
      for (const auto& subset : cfg_.subsets) {
        for (ItemKind kind : {ItemKind::kRecoverability, ItemKind::kGuidability}) {
          const fs::path item_path = layout_.item_store(kind, subset, model.name);
          if (!fs::exists(item_path)) continue;
          const auto items = read_records<SteeredItem>(item_path);
          const fs::path sample_path = layout_.sample_store(kind, subset, model.name);
          if (!fs::exists(sample_path)) throw Error(ErrorCode::kUnscoredSample, sample_path.string() + " missing");
          const auto samples = read_records<CompletionSample>(sample_path);
          if (kind == ItemKind::kRecoverability) mm.recoverability[subset] = recoverability_table(items, samples, k, model.name, subset);
          else mm.guidability[subset] = guidability_table(items, samples, k, model.name, subset);
          any_table = true;
        }
      }
      doc.models.push_back(std::move(mm));
    }
    if (!any_table) throw Error(ErrorCode::kEmptySamples, "no scored items in run " + manifest_.run_id);
    write_file_atomic(metrics_path(), json(doc).dump(2) + "\n");
    log("[score] wrote " + metrics_path().string());
    return doc;
  }

  fs::path metrics_path() const { return layout_.reports_dir() / "metrics.json"; }

  // Renders every report from metrics.json. With a baseline metrics file the
  // ablation diff (this run minus baseline) is rendered as well.
  void report(const std::optional<fs::path>& baseline_metrics = std::nullopt) const {
    if (!fs::exists(metrics_path())) throw Error(ErrorCode::kIncomplete, metrics_path().string() + " missing; run score first");
    const MetricsDoc doc = json::parse(read_file(metrics_path())).get<MetricsDoc>();
    const fs::path dir = layout_.reports_dir();
    write_file_atomic(dir / "main.md", render_main_table_md(doc));
    write_file_atomic(dir / "main.csv", render_main_table_csv(doc));
    write_file_atomic(dir / "positions.csv", render_position_series(doc));
    write_file_atomic(dir / "guidability.csv", render_guidability_csv(doc));
    if (baseline_metrics) {
      const MetricsDoc base = json::parse(read_file(*baseline_metrics)).get<MetricsDoc>();
      write_file_atomic(dir / "ablation.md", render_ablation_diff(base, doc));
    }
    log("[report] wrote " + dir.string());
  }

 private:
  GatewayOptions gateway_options() const {
    GatewayOptions o;
    o.cache_dir = layout_.cache_dir();
    o.max_inflight = cfg_.max_inflight;
    o.max_attempts = cfg_.max_attempts;
    o.backoff_ms = cfg_.backoff_ms;
    o.read_timeout_s = cfg_.read_timeout_s;
    o.send_seed = cfg_.send_seed;
    return o;
  }

  RunManifest build_manifest(const std::string& run_id) const {
    RunManifest m;
    m.run_id = run_id;
    m.main_model = cfg_.models.front();
    m.steer_models = cfg_.guides;
    m.evaluated_models = cfg_.models;
    m.params = cfg_.sampling;
    for (double f : cfg_.grid.m_grid) m.spec_grid.push_back(SteerSpec{f, cfg_.grid.n_default, cfg_.grid.preserve_first_paragraph});
    for (double f : cfg_.grid.n_grid) m.spec_grid.push_back(SteerSpec{0.0, f, false});
    m.question_set = cfg_.question_set;
    m.questions_path = cfg_.questions_path.string();
    m.created_at = rfc3339_utc_now();
    m.seed = cfg_.seed;
    m.settings = cfg_.settings();
    return m;
  }

  void log(const std::string& line) const {
    if (opts_.log) opts_.log(line);
  }

  const ModelRef* find_model(const std::string& name) const {
    for (const auto& m : cfg_.models)
      if (m.name == name) return &m;
    for (const auto& m : cfg_.guides)
      if (m.name == name) return &m;
    return nullptr;
  }

  std::vector<ModelRef> evaluated_models() const {
    std::vector<ModelRef> out;
    for (const auto& m : cfg_.models)
      if (!opts_.model_filter || *opts_.model_filter == m.name) out.push_back(m);
    return out;
  }

  std::vector<ModelRef> solo_models() const {
    std::vector<ModelRef> out;
    std::set<std::string> seen;
    for (const auto* list : {&cfg_.models, &cfg_.guides})
      for (const auto& m : *list)
        if ((!opts_.model_filter || *opts_.model_filter == m.name) && seen.insert(m.name).second) out.push_back(m);
    return out;
  }

  JudgeConfig solo_judge() const {
    JudgeConfig j = cfg_.judge;
    j.enabled = j.enabled && cfg_.judge_solo;
    return j;
  }

  void note(const std::string& line) {
    std::lock_guard lock(notes_mu_);
    manifest_.note(line);
  }

  // Normalizer first, then the judge for normalizer-WRONG samples. Judge
  // requests are cached per (tag, attempt).
  Verdict verify(const CompletionSample& sample, const Question& q, const JudgeConfig& judge, const std::string& tag) {
    const bool use_judge = judge.enabled && !judge_down_.load();
    JudgeFn fn;
    if (use_judge) {
      fn = [this, &judge, tag](const JudgeRequest& r) {
        ++judge_calls_;
        return gateway_.execute(judge_request(judge, r.prompt, tag + "/" + std::to_string(r.attempt))).response_text;
      };
    }
    JudgeConfig effective = judge;
    effective.enabled = use_judge;
    try {
      return verdict_pipeline(sample, q.text, q.gold_answer, effective, fn);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kJudgeUnavailable || cfg_.judge_policy == JudgePolicy::kHalt) throw;
      judge_down_ = true;
      note("judge unavailable; degraded to normalizer-only verdicts: " + e.detail());
      JudgeConfig off = judge;
      off.enabled = false;
      return verdict_pipeline(sample, q.text, q.gold_answer, off, {});
    }
  }

  Truncator truncator() {
    return [this](const std::string& model, std::string_view text, double fraction) {
      const ModelRef* ref = find_model(model);
      if (!ref || ref->tokenizer_mode == TokenizerMode::kWhitespace) return truncate_fraction(text, fraction);
      const EndpointTokenizer tok = gateway_.tokenizer_for(*ref);
      const TokenSeq seq = segment(text, TokenizerMode::kEndpoint, SegmentOptions{&tok, true});
      if (seq.fell_back) note("tokenizer fallback to whitespace for " + model);
      return prefix_of(text, seq, fraction);
    };
  }

  ProfilesByModel load_profiles(const std::vector<ModelRef>& models) const {
    ProfilesByModel out;
    for (const auto& m : models) {
      const fs::path p = layout_.profile_store(m.name);
      if (!fs::exists(p)) throw Error(ErrorCode::kIncomplete, p.string() + " missing; run solo for " + m.name);
      out[m.name] = read_records<SoloProfile>(p);
    }
    return out;
  }

  // Mean solve rate of each question across the evaluated models.
  std::map<std::string, double> solve_rate_strata(const ProfilesByModel& profiles) const {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& [model, list] : profiles)
      for (const auto& p : list) {
        auto& a = acc[p.question_id];
        a.first += p.k > 0 ? static_cast<double>(p.solve_count) / p.k : 0.0;
        ++a.second;
      }
    std::map<std::string, double> out;
    for (const auto& [qid, a] : acc) out[qid] = a.first / a.second;
    return out;
  }

  void write_items(ItemKind kind, const std::string& subset, const std::string& model, const BuildResult& built) {
    const fs::path na = layout_.not_evaluated_marker(kind, subset, model);
    const fs::path store = layout_.item_store(kind, subset, model);
    for (const auto& s : built.skipped) note(std::string(to_string(kind)) + "/" + subset + "/" + model + ": skipped " + s);
    if (built.items.empty()) {
      if (fs::exists(store)) fs::remove(store);
      write_file_atomic(na, "N/A: no eligible questions\n");
      log("[gen] " + model + "/" + subset + ": N/A (no eligible questions)");
      return;
    }
    if (fs::exists(na)) fs::remove(na);
    replace_records(store, built.items);
    std::map<double, int> per_cell;
    for (const auto& it : built.items) ++per_cell[kind == ItemKind::kRecoverability ? it.spec.m_fraction : it.spec.n_fraction];
    std::string counts;
    for (const auto& [pos, n] : per_cell) counts += " " + position_label(pos) + "=" + std::to_string(n);
    log("[gen] " + model + "/" + subset + ": " + std::to_string(built.items.size()) + " items;" + counts);
  }

  void gen_recoverability() {
    const auto all_profiles = load_profiles(cfg_.models);
    const auto strata = solve_rate_strata(all_profiles);
    const Truncator cut = truncator();
    for (const auto& model : evaluated_models()) {
      const auto store = read_records<Trajectory>(layout_.solo_store(model.name));
      for (const auto& subset : cfg_.subsets) {
        RecoverabilitySelection sel;
        sel.mode = parse_selection_mode(subset);
        sel.target_model = model.name;
        sel.target_count = cfg_.grid.og_count;
        if (sel.mode == SelectionMode::kIndividual) sel.strata = strata;
        sel.seed = derive_seed(cfg_.seed, "select/" + subset + (sel.mode == SelectionMode::kIndividual ? "/" + model.name : ""));
        QuestionSet selected("", {});
        try {
          selected = select_recoverability_questions(questions_, all_profiles, sel);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kInsufficientPool) throw;
          throw Error(ErrorCode::kInsufficientPool,
                      e.detail() + " (" + subset + ", " + model.name + "); lower grid.og_count or add fully solved questions");
        }
        std::set<std::string> avoid;
        for (const auto& q : selected) avoid.insert(q.id);
        const auto pool = build_distractor_pool(store, cfg_.grid.steer_count, derive_seed(cfg_.seed, "pool/" + model.name), avoid);
        const auto built = build_recoverability_items(selected, questions_, store, pool, cfg_.grid,
                                                      derive_seed(cfg_.seed, "pair/" + subset + "/" + model.name), cut);
        write_items(ItemKind::kRecoverability, subset, model.name, built);
      }
    }
  }

  void gen_guidability() {
    const auto all_profiles = load_profiles(cfg_.models);
    GuideStores guides;
    for (const auto& g : cfg_.guides) {
      const fs::path p = layout_.solo_store(g.name);
      if (!fs::exists(p)) throw Error(ErrorCode::kIncomplete, p.string() + " missing; run solo for guide " + g.name);
      guides.emplace_back(g.name, read_records<Trajectory>(p));
    }
    // The shared set intersects only models that have eligible questions.
    ProfilesByModel participating;
    for (const auto& [model, list] : all_profiles)
      if (!select_guidability_questions(questions_, list).empty()) participating[model] = list;
    const Truncator cut = truncator();
    for (const auto& model : evaluated_models()) {
      for (const auto& subset : cfg_.subsets) {
        QuestionSet selected("", {});
        if (subset == kSharedSubset) {
          if (participating.count(model.name)) selected = select_guidability_shared(questions_, participating);
        } else {
          selected = select_guidability_questions(questions_, all_profiles.at(model.name));
        }
        write_items(ItemKind::kGuidability, subset, model.name, build_guidability_items(selected, guides, cfg_.grid, cut));
      }
    }
  }

  void finish_stage(const std::string& stage) {
    save_manifest(layout_.manifest(), manifest_);
    const auto [hits, misses] = gateway_.flush_cache_stats(layout_.root / "stats" / (stage + ".json"));
    log("[" + stage + "] cache hits=" + std::to_string(hits) + " misses=" + std::to_string(misses));
  }

  Config cfg_;
  PipelineOptions opts_;
  RunLayout layout_;
  QuestionSet questions_;
  TemplateRegistry templates_;
  Gateway gateway_;
  RunManifest manifest_;
  std::mutex notes_mu_;
  std::atomic<bool> judge_down_{false};
  std::atomic<long long> judge_calls_{0};
};

}  // namespace offtrack
