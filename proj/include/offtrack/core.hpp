#pragma once

// Domain types shared by every stage of the harness, their JSONL record
// schemas, and the run-directory layout.

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "offtrack/error.hpp"
#include "offtrack/hash.hpp"

namespace offtrack {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum class Benchmark { kAime24, kAime25, kMath500, kMinerva, kOlympiad, kCustom };
enum class TokenizerMode { kEndpoint, kWhitespace };
enum class VerdictLabel { kCorrect, kWrong, kUnverified };
enum class VerdictSource { kNormalizer, kJudge };
enum class ItemKind { kRecoverability, kGuidability };

namespace detail {

template <typename E, std::size_t N>
struct EnumNames {
  std::array<std::pair<E, std::string_view>, N> entries;

  std::string_view name(E e) const {
    for (const auto& [v, s] : entries)
      if (v == e) return s;
    return "?";
  }
  E parse(std::string_view s, std::string_view what) const {
    for (const auto& [v, n] : entries)
      if (n == s) return v;
    throw Error(ErrorCode::kMalformedRecord, "unknown " + std::string(what) + " '" + std::string(s) + "'");
  }
};

inline constexpr EnumNames<Benchmark, 6> kBenchmarkNames{{{
    {Benchmark::kAime24, "AIME24"},
    {Benchmark::kAime25, "AIME25"},
    {Benchmark::kMath500, "MATH500"},
    {Benchmark::kMinerva, "MINERVA"},
    {Benchmark::kOlympiad, "OLYMPIAD"},
    {Benchmark::kCustom, "CUSTOM"},
}}};
inline constexpr EnumNames<TokenizerMode, 2> kTokenizerNames{{{
    {TokenizerMode::kEndpoint, "ENDPOINT"},
    {TokenizerMode::kWhitespace, "WHITESPACE"},
}}};
inline constexpr EnumNames<VerdictLabel, 3> kVerdictNames{{{
    {VerdictLabel::kCorrect, "CORRECT"},
    {VerdictLabel::kWrong, "WRONG"},
    {VerdictLabel::kUnverified, "UNVERIFIED"},
}}};
inline constexpr EnumNames<VerdictSource, 2> kSourceNames{{{
    {VerdictSource::kNormalizer, "NORMALIZER"},
    {VerdictSource::kJudge, "JUDGE"},
}}};
inline constexpr EnumNames<ItemKind, 2> kKindNames{{{
    {ItemKind::kRecoverability, "RECOVERABILITY"},
    {ItemKind::kGuidability, "GUIDABILITY"},
}}};

}  // namespace detail

inline std::string_view to_string(Benchmark b) { return detail::kBenchmarkNames.name(b); }
inline std::string_view to_string(TokenizerMode m) { return detail::kTokenizerNames.name(m); }
inline std::string_view to_string(VerdictLabel v) { return detail::kVerdictNames.name(v); }
inline std::string_view to_string(VerdictSource s) { return detail::kSourceNames.name(s); }
inline std::string_view to_string(ItemKind k) { return detail::kKindNames.name(k); }

inline Benchmark parse_benchmark(std::string_view s) { return detail::kBenchmarkNames.parse(s, "benchmark"); }
inline TokenizerMode parse_tokenizer_mode(std::string_view s) { return detail::kTokenizerNames.parse(s, "tokenizer_mode"); }
inline VerdictLabel parse_verdict(std::string_view s) { return detail::kVerdictNames.parse(s, "verdict"); }
inline VerdictSource parse_verdict_source(std::string_view s) { return detail::kSourceNames.parse(s, "verdict_source"); }
inline ItemKind parse_item_kind(std::string_view s) { return detail::kKindNames.parse(s, "kind"); }

// ---------------------------------------------------------------------------
// Domain types

struct Question {
  std::string id;
  Benchmark benchmark = Benchmark::kCustom;
  std::string text;
  std::string gold_answer;

  bool operator==(const Question&) const = default;
};

class QuestionSet {
 public:
  QuestionSet() = default;
  QuestionSet(std::string name, std::vector<Question> questions) : name_(std::move(name)) {
    for (auto& q : questions) add(std::move(q));
  }

  void add(Question q) {
    if (q.id.empty()) throw Error(ErrorCode::kMalformedRecord, "empty question id");
    if (q.text.empty()) throw Error(ErrorCode::kMalformedRecord, "empty text for " + q.id);
    if (q.gold_answer.empty()) throw Error(ErrorCode::kMalformedRecord, "empty gold_answer for " + q.id);
    if (index_.count(q.id)) throw Error(ErrorCode::kDuplicateId, q.id);
    index_.emplace(q.id, questions_.size());
    questions_.push_back(std::move(q));
  }

  const std::string& name() const { return name_; }
  const std::vector<Question>& questions() const { return questions_; }
  std::size_t size() const { return questions_.size(); }
  bool empty() const { return questions_.empty(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  const Question& at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown question " + id);
    return questions_[it->second];
  }

  auto begin() const { return questions_.begin(); }
  auto end() const { return questions_.end(); }

 private:
  std::string name_;
  std::vector<Question> questions_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ModelRef {
  std::string name;
  std::string endpoint_url;
  std::string prompt_template_id;
  TokenizerMode tokenizer_mode = TokenizerMode::kWhitespace;
  // Name sent in the request body; defaults to `name`.
  std::string served_name;

  const std::string& wire_name() const { return served_name.empty() ? name : served_name; }
  bool operator==(const ModelRef&) const = default;
};

inline bool is_absolute_url(std::string_view url) {
  for (std::string_view scheme : {"http://", "https://"}) {
    if (url.substr(0, scheme.size()) == scheme && url.size() > scheme.size() &&
        url[scheme.size()] != '/')
      return true;
  }
  return false;
}

struct SamplingParams {
  double temperature = 0.6;
  double top_p = 0.95;
  int max_tokens = 32768;
  int samples_per_item = 8;

  void validate() const {
    if (!(temperature >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "top_p must be in (0,1]");
    if (max_tokens <= 0) throw Error(ErrorCode::kInvalidArgument, "max_tokens must be > 0");
    if (samples_per_item < 1) throw Error(ErrorCode::kInvalidArgument, "samples_per_item must be >= 1");
  }
  bool operator==(const SamplingParams&) const = default;
};

struct TrajectoryRef {
  std::string model;
  std::string question_id;
  int sample_index = 0;

  bool operator==(const TrajectoryRef&) const = default;
};

struct Trajectory {
  std::string question_id;
  std::string model;
  int sample_index = 0;
  std::string reasoning;
  std::optional<std::string> answer;
  VerdictLabel verdict = VerdictLabel::kUnverified;
  std::string finish_reason = "stop";

  TrajectoryRef ref() const { return {model, question_id, sample_index}; }
  bool operator==(const Trajectory&) const = default;
};

struct SteerSpec {
  double m_fraction = 0.0;
  double n_fraction = 0.2;
  bool preserve_first_paragraph = false;

  bool operator==(const SteerSpec&) const = default;
};

struct SteeredItem {
  std::string item_id;
  ItemKind kind = ItemKind::kRecoverability;
  std::string question_id;
  std::optional<TrajectoryRef> og_source;
  TrajectoryRef steer_source;
  std::string steer_origin_question_id;
  SteerSpec spec;
  std::string prefix_text;
  bool steer_contains_answer = false;
  // Guide model name for guidability items, empty otherwise.
  std::string guide;

  bool operator==(const SteeredItem&) const = default;
};

struct CompletionSample {
  std::string item_id;
  int sample_index = 0;
  std::string completion_text;
  std::optional<std::string> extracted_answer;
  VerdictLabel verdict = VerdictLabel::kWrong;
  VerdictSource verdict_source = VerdictSource::kNormalizer;
  std::string finish_reason = "stop";
  std::optional<std::string> judge_analysis;
  bool judge_parse_failure = false;

  bool operator==(const CompletionSample&) const = default;
};

// Solo solve statistics for one (model, question).
struct SoloProfile {
  std::string question_id;
  std::string model;
  int solve_count = 0;
  int k = 0;
  std::vector<TrajectoryRef> trajectories;

  bool operator==(const SoloProfile&) const = default;
};

struct RunManifest {
  std::string run_id;
  ModelRef main_model;
  std::vector<ModelRef> steer_models;
  SamplingParams params;
  std::vector<SteerSpec> spec_grid;
  std::string question_set;
  std::string questions_path;
  std::string created_at;
  std::uint64_t seed = 0;
  // Every model under test; main_model is the first of them.
  std::vector<ModelRef> evaluated_models;
  // Result-affecting configuration (templates, grids, judge, selection).
  json settings = json::object();
  // Deterministic run observations: tokenizer fallbacks, pairing policy,
  // judge settings, degradations.
  std::vector<std::string> notes;

  void note(const std::string& line) {
    if (std::find(notes.begin(), notes.end(), line) == notes.end()) notes.push_back(line);
  }
  bool operator==(const RunManifest&) const = default;
};

// ---------------------------------------------------------------------------
// JSON schemas

inline void to_json(json& j, const Question& q) {
  j = json{{"id", q.id}, {"benchmark", to_string(q.benchmark)}, {"text", q.text}, {"gold_answer", q.gold_answer}};
}
inline void from_json(const json& j, Question& q) {
  q.id = j.at("id").get<std::string>();
  q.benchmark = j.contains("benchmark") ? parse_benchmark(j.at("benchmark").get<std::string>()) : Benchmark::kCustom;
  q.text = j.at("text").get<std::string>();
  q.gold_answer = j.at("gold_answer").get<std::string>();
}

inline void to_json(json& j, const ModelRef& m) {
  j = json{{"name", m.name},
           {"endpoint_url", m.endpoint_url},
           {"prompt_template_id", m.prompt_template_id},
           {"tokenizer_mode", to_string(m.tokenizer_mode)}};
  if (!m.served_name.empty()) j["served_name"] = m.served_name;
}
inline void from_json(const json& j, ModelRef& m) {
  m.name = j.at("name").get<std::string>();
  m.endpoint_url = j.at("endpoint_url").get<std::string>();
  m.prompt_template_id = j.value("prompt_template_id", std::string{});
  m.tokenizer_mode = parse_tokenizer_mode(j.value("tokenizer_mode", std::string("WHITESPACE")));
  m.served_name = j.value("served_name", std::string{});
  while (!m.endpoint_url.empty() && m.endpoint_url.back() == '/') m.endpoint_url.pop_back();
  if (!is_absolute_url(m.endpoint_url))
    throw Error(ErrorCode::kMalformedRecord, "endpoint_url is not an absolute URL: " + m.endpoint_url);
}

inline void to_json(json& j, const SamplingParams& p) {
  j = json{{"temperature", p.temperature},
           {"top_p", p.top_p},
           {"max_tokens", p.max_tokens},
           {"samples_per_item", p.samples_per_item}};
}
inline void from_json(const json& j, SamplingParams& p) {
  SamplingParams d;
  p.temperature = j.value("temperature", d.temperature);
  p.top_p = j.value("top_p", d.top_p);
  p.max_tokens = j.value("max_tokens", d.max_tokens);
  p.samples_per_item = j.value("samples_per_item", d.samples_per_item);
  p.validate();
}

inline void to_json(json& j, const TrajectoryRef& r) {
  j = json{{"model", r.model}, {"question_id", r.question_id}, {"sample_index", r.sample_index}};
}
inline void from_json(const json& j, TrajectoryRef& r) {
  r.model = j.at("model").get<std::string>();
  r.question_id = j.at("question_id").get<std::string>();
  r.sample_index = j.at("sample_index").get<int>();
}

namespace detail {
inline json optional_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }
inline std::optional<std::string> read_optional_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}
}  // namespace detail

inline void to_json(json& j, const Trajectory& t) {
  j = json{{"question_id", t.question_id},
           {"model", t.model},
           {"sample_index", t.sample_index},
           {"reasoning", t.reasoning},
           {"answer", detail::optional_string(t.answer)},
           {"verdict", to_string(t.verdict)},
           {"finish_reason", t.finish_reason}};
}
inline void from_json(const json& j, Trajectory& t) {
  t.question_id = j.at("question_id").get<std::string>();
  t.model = j.at("model").get<std::string>();
  t.sample_index = j.at("sample_index").get<int>();
  t.reasoning = j.at("reasoning").get<std::string>();
  t.answer = detail::read_optional_string(j, "answer");
  t.verdict = parse_verdict(j.at("verdict").get<std::string>());
  t.finish_reason = j.value("finish_reason", std::string("stop"));
  if (t.sample_index < 0) throw Error(ErrorCode::kMalformedRecord, "negative sample_index");
  if (t.verdict == VerdictLabel::kCorrect && !t.answer)
    throw Error(ErrorCode::kMalformedRecord, "CORRECT trajectory without answer");
}

inline void to_json(json& j, const SteerSpec& s) {
  j = json{{"m_fraction", s.m_fraction},
           {"n_fraction", s.n_fraction},
           {"preserve_first_paragraph", s.preserve_first_paragraph}};
}
inline void from_json(const json& j, SteerSpec& s) {
  s.m_fraction = j.at("m_fraction").get<double>();
  s.n_fraction = j.at("n_fraction").get<double>();
  s.preserve_first_paragraph = j.value("preserve_first_paragraph", false);
  if (s.m_fraction < 0.0 || s.m_fraction > 1.0 || s.n_fraction <= 0.0 || s.n_fraction > 1.0)
    throw Error(ErrorCode::kMalformedRecord, "steer fractions out of range");
}

inline void to_json(json& j, const SteeredItem& it) {
  j = json{{"item_id", it.item_id},
           {"kind", to_string(it.kind)},
           {"question_id", it.question_id},
           {"og_source", it.og_source ? json(*it.og_source) : json(nullptr)},
           {"steer_source", it.steer_source},
           {"steer_origin_question_id", it.steer_origin_question_id},
           {"spec", it.spec},
           {"prefix_text", it.prefix_text},
           {"steer_contains_answer", it.steer_contains_answer},
           {"guide", it.guide}};
}
inline void from_json(const json& j, SteeredItem& it) {
  it.item_id = j.at("item_id").get<std::string>();
  it.kind = parse_item_kind(j.at("kind").get<std::string>());
  it.question_id = j.at("question_id").get<std::string>();
  it.og_source.reset();
  if (j.contains("og_source") && !j.at("og_source").is_null()) it.og_source = j.at("og_source").get<TrajectoryRef>();
  it.steer_source = j.at("steer_source").get<TrajectoryRef>();
  it.steer_origin_question_id = j.at("steer_origin_question_id").get<std::string>();
  it.spec = j.at("spec").get<SteerSpec>();
  it.prefix_text = j.at("prefix_text").get<std::string>();
  it.steer_contains_answer = j.at("steer_contains_answer").get<bool>();
  it.guide = j.value("guide", std::string{});
  if (it.kind == ItemKind::kGuidability && (it.spec.m_fraction != 0.0 || it.og_source))
    throw Error(ErrorCode::kMalformedRecord, "guidability item " + it.item_id + " carries original trajectory");
  if (it.kind == ItemKind::kRecoverability && it.steer_origin_question_id == it.question_id)
    throw Error(ErrorCode::kMalformedRecord, "recoverability item " + it.item_id + " steers from its own question");
}

inline void to_json(json& j, const CompletionSample& s) {
  j = json{{"item_id", s.item_id},
           {"sample_index", s.sample_index},
           {"completion_text", s.completion_text},
           {"extracted_answer", detail::optional_string(s.extracted_answer)},
           {"verdict", to_string(s.verdict)},
           {"verdict_source", to_string(s.verdict_source)},
           {"finish_reason", s.finish_reason}};
  if (s.judge_analysis) j["judge_analysis"] = *s.judge_analysis;
  if (s.judge_parse_failure) j["judge_parse_failure"] = true;
}
inline void from_json(const json& j, CompletionSample& s) {
  s.item_id = j.at("item_id").get<std::string>();
  s.sample_index = j.at("sample_index").get<int>();
  s.completion_text = j.at("completion_text").get<std::string>();
  s.extracted_answer = detail::read_optional_string(j, "extracted_answer");
  s.verdict = parse_verdict(j.at("verdict").get<std::string>());
  if (s.verdict == VerdictLabel::kUnverified)
    throw Error(ErrorCode::kMalformedRecord, "completion sample without verdict");
  s.verdict_source = parse_verdict_source(j.at("verdict_source").get<std::string>());
  s.finish_reason = j.value("finish_reason", std::string("stop"));
  s.judge_analysis = detail::read_optional_string(j, "judge_analysis");
  s.judge_parse_failure = j.value("judge_parse_failure", false);
}

inline void to_json(json& j, const SoloProfile& p) {
  j = json{{"question_id", p.question_id},
           {"model", p.model},
           {"solve_count", p.solve_count},
           {"k", p.k},
           {"trajectories", p.trajectories}};
}
inline void from_json(const json& j, SoloProfile& p) {
  p.question_id = j.at("question_id").get<std::string>();
  p.model = j.at("model").get<std::string>();
  p.solve_count = j.at("solve_count").get<int>();
  p.k = j.at("k").get<int>();
  p.trajectories = j.value("trajectories", std::vector<TrajectoryRef>{});
  if (p.solve_count < 0 || p.solve_count > p.k) throw Error(ErrorCode::kMalformedRecord, "solve_count outside [0,k]");
}

inline void to_json(json& j, const RunManifest& m) {
  j = json{{"run_id", m.run_id},
           {"main_model", m.main_model},
           {"steer_models", m.steer_models},
           {"params", m.params},
           {"spec_grid", m.spec_grid},
           {"question_set", m.question_set},
           {"questions_path", m.questions_path},
           {"created_at", m.created_at},
           {"seed", m.seed},
           {"evaluated_models", m.evaluated_models},
           {"settings", m.settings},
           {"notes", m.notes}};
}
inline void from_json(const json& j, RunManifest& m) {
  m.run_id = j.at("run_id").get<std::string>();
  m.main_model = j.at("main_model").get<ModelRef>();
  m.steer_models = j.value("steer_models", std::vector<ModelRef>{});
  m.params = j.at("params").get<SamplingParams>();
  m.spec_grid = j.value("spec_grid", std::vector<SteerSpec>{});
  m.question_set = j.at("question_set").get<std::string>();
  m.questions_path = j.value("questions_path", std::string{});
  m.created_at = j.value("created_at", std::string{});
  m.seed = j.value("seed", std::uint64_t{0});
  m.evaluated_models = j.value("evaluated_models", std::vector<ModelRef>{m.main_model});
  m.settings = j.value("settings", json::object());
  m.notes = j.value("notes", std::vector<std::string>{});
}

// Hash over the configuration content of a manifest. run_id, created_at and
// notes are excluded so that two scratch runs of the same configuration
// embed the same hash in their reports.
inline std::string manifest_hash(const RunManifest& m) {
  json j = m;
  j.erase("run_id");
  j.erase("created_at");
  j.erase("notes");
  return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Time

inline std::string rfc3339_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// JSONL persistence

template <typename T>
std::vector<T> read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<T>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedRecord, path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kMalformedRecord)
        throw Error(ErrorCode::kMalformedRecord, path.filename().string() + ":" + std::to_string(line_no) + ": " + e.detail());
      throw;
    }
  }
  return out;
}

// Appends one JSON object per line; returns the number written.
template <typename Range>
std::size_t write_records(const fs::path& path, const Range& records) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::size_t n = 0;
  for (const auto& r : records) {
    out << json(r).dump() << '\n';
    ++n;
  }
  out.flush();
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
  return n;
}

inline void write_file_atomic(const fs::path& path, std::string_view content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "rename to " + path.string() + ": " + ec.message());
}

// Stage outputs are rewritten whole so that a killed stage never leaves a
// half-written store behind.
template <typename Range>
std::size_t replace_records(const fs::path& path, const Range& records) {
  std::string body;
  std::size_t n = 0;
  for (const auto& r : records) {
    body += json(r).dump();
    body += '\n';
    ++n;
  }
  write_file_atomic(path, body);
  return n;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline QuestionSet load_question_set(const fs::path& path, std::string name = {}) {
  if (name.empty()) name = path.stem().string();
  QuestionSet set(std::move(name), {});
  for (auto& q : read_records<Question>(path)) set.add(std::move(q));
  return set;
}

// runs/<run_id>/{manifest.json, solo/, items/, samples/, reports/, cache/}
struct RunLayout {
  fs::path root;

  RunLayout(const fs::path& runs_dir, const std::string& run_id) : root(runs_dir / run_id) {}

  fs::path manifest() const { return root / "manifest.json"; }
  fs::path solo_dir() const { return root / "solo"; }
  fs::path items_dir() const { return root / "items"; }
  fs::path samples_dir() const { return root / "samples"; }
  fs::path reports_dir() const { return root / "reports"; }
  fs::path cache_dir() const { return root / "cache"; }

  fs::path solo_store(const std::string& model) const { return solo_dir() / (model + ".jsonl"); }
  fs::path profile_store(const std::string& model) const { return solo_dir() / (model + ".profiles.jsonl"); }
  static std::string stem(ItemKind kind, const std::string& subset, const std::string& model) {
    return lower(to_string(kind)) + "." + subset + "." + model;
  }
  fs::path item_store(ItemKind kind, const std::string& subset, const std::string& model) const {
    return items_dir() / (stem(kind, subset, model) + ".jsonl");
  }
  // Written instead of an item store when no question is eligible.
  fs::path not_evaluated_marker(ItemKind kind, const std::string& subset, const std::string& model) const {
    return items_dir() / (stem(kind, subset, model) + ".na");
  }
  fs::path sample_store(ItemKind kind, const std::string& subset, const std::string& model) const {
    return samples_dir() / (stem(kind, subset, model) + ".jsonl");
  }

  void create() const {
    for (const auto& d : {solo_dir(), items_dir(), samples_dir(), reports_dir(), cache_dir()}) fs::create_directories(d);
  }

  static std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
  }
};

inline RunManifest load_manifest(const fs::path& path) {
  RunManifest m;
  try {
    m = json::parse(read_file(path)).get<RunManifest>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, path.string() + ": " + e.what());
  }
  if (!m.questions_path.empty() && !fs::exists(m.questions_path))
    throw Error(ErrorCode::kIoFailure, "manifest references missing file " + m.questions_path);
  return m;
}

inline void save_manifest(const fs::path& path, const RunManifest& m) { write_file_atomic(path, json(m).dump(2) + "\n"); }

}  // namespace offtrack
