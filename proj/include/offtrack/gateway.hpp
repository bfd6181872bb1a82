#pragma once

// Client side of the OpenAI-compatible serving protocol: prompt templates,
// a content-addressed request cache, retries, and a bounded worker pool.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <httplib.h>

#include "offtrack/core.hpp"
#include "offtrack/segmenter.hpp"
#include "offtrack/verifier.hpp"

namespace offtrack {

// ---------------------------------------------------------------------------
// Prompt templates

struct PromptTemplate {
  std::string template_id;
  std::string solo_format;      // contains {question}
  std::string continue_format;  // contains {question} and {prefix}
  std::string think_open = "<think>";
  std::string think_close = "</think>";
  // Test-server templates prefix the question with a [[qid:<id>]] marker so
  // scripted behaviors can look up gold answers.
  bool embed_question_marker = false;

  void validate() const {
    auto count = [](const std::string& s, std::string_view needle) {
      std::size_t n = 0;
      for (std::size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
      return n;
    };
    if (count(solo_format, "{question}") != 1) throw Error(ErrorCode::kInvalidArgument, template_id + ": solo_format needs one {question}");
    if (count(continue_format, "{question}") != 1 || count(continue_format, "{prefix}") != 1)
      throw Error(ErrorCode::kInvalidArgument, template_id + ": continue_format needs one {question} and one {prefix}");
  }
};

inline void to_json(json& j, const PromptTemplate& t) {
  j = json{{"template_id", t.template_id},
           {"solo_format", t.solo_format},
           {"continue_format", t.continue_format},
           {"think_open", t.think_open},
           {"think_close", t.think_close},
           {"embed_question_marker", t.embed_question_marker}};
}
inline void from_json(const json& j, PromptTemplate& t) {
  t.template_id = j.at("template_id").get<std::string>();
  t.solo_format = j.at("solo_format").get<std::string>();
  t.continue_format = j.at("continue_format").get<std::string>();
  t.think_open = j.value("think_open", std::string("<think>"));
  t.think_close = j.value("think_close", std::string("</think>"));
  t.embed_question_marker = j.value("embed_question_marker", false);
  t.validate();
}

inline std::string question_marker(const std::string& question_id) { return "[[qid:" + question_id + "]]"; }

// Single-pass placeholder substitution: substituted text is never rescanned.
inline std::string render_format(std::string_view format, const std::map<std::string, std::string_view>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < format.size()) {
    bool replaced = false;
    if (format[i] == '{') {
      for (const auto& [key, value] : values) {
        const std::string ph = "{" + key + "}";
        if (format.substr(i, ph.size()) == ph) {
          out += value;
          i += ph.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out.push_back(format[i++]);
  }
  return out;
}

class TemplateRegistry {
 public:
  TemplateRegistry() {
    add({"deepseek-r1", "<｜begin▁of▁sentence｜><｜User｜>{question}<｜Assistant｜><think>\n",
         "<｜begin▁of▁sentence｜><｜User｜>{question}<｜Assistant｜><think>\n{prefix}", "<think>", "</think>", false});
    add({"chatml-think", "<|im_start|>user\n{question}<|im_end|>\n<|im_start|>assistant\n<think>\n",
         "<|im_start|>user\n{question}<|im_end|>\n<|im_start|>assistant\n<think>\n{prefix}", "<think>", "</think>", false});
    add({"mock", "<|user|>{question}\n<|assistant|><think>\n", "<|user|>{question}\n<|assistant|><think>\n{prefix}", "<think>", "</think>",
         true});
  }

  void add(PromptTemplate t) {
    t.validate();
    templates_[t.template_id] = std::move(t);
  }

  const PromptTemplate& get(const ModelRef& model) const {
    auto it = templates_.find(model.prompt_template_id);
    if (it == templates_.end()) throw Error(ErrorCode::kTemplateMissing, model.name);
    return it->second;
  }

  bool contains(const std::string& id) const { return templates_.count(id) != 0; }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

inline std::string render_question(const PromptTemplate& t, const Question& q) {
  return t.embed_question_marker ? question_marker(q.id) + " " + q.text : q.text;
}

inline std::string render_solo_prompt(const PromptTemplate& t, const Question& q) {
  const std::string question = render_question(t, q);
  return render_format(t.solo_format, {{"question", question}});
}

// The thinking span is left open so the model continues mid-thought.
inline std::string render_continue_prompt(const PromptTemplate& t, const Question& q, std::string_view prefix) {
  const std::string question = render_question(t, q);
  return render_format(t.continue_format, {{"question", question}, {"prefix", prefix}});
}

// Splits generated text at the closing thinking delimiter.
struct SplitGeneration {
  std::string thinking;
  std::string after;
  bool closed = false;
};

inline SplitGeneration split_generation(const PromptTemplate& t, std::string_view text) {
  const std::size_t p = t.think_close.empty() ? std::string_view::npos : text.find(t.think_close);
  if (p == std::string_view::npos) return {std::string(text), {}, false};
  return {std::string(text.substr(0, p)), std::string(text.substr(p + t.think_close.size())), true};
}

inline std::optional<std::string> extract_final_answer(const PromptTemplate& t, std::string_view generated) {
  const auto parts = split_generation(t, generated);
  if (parts.closed) {
    if (auto a = extract_answer(parts.after)) return a;
  }
  return extract_answer(generated);
}

// ---------------------------------------------------------------------------
// Requests and cache records

struct Usage {
  long long prompt_tokens = 0;
  long long completion_tokens = 0;
};

struct RequestRecord {
  std::string cache_key;
  std::string response_text;
  std::string finish_reason;
  Usage usage;
  int attempts = 1;
};

inline void to_json(json& j, const RequestRecord& r) {
  j = json{{"cache_key", r.cache_key},
           {"response_text", r.response_text},
           {"finish_reason", r.finish_reason},
           {"usage", {{"prompt_tokens", r.usage.prompt_tokens}, {"completion_tokens", r.usage.completion_tokens}}},
           {"attempts", r.attempts}};
}
inline void from_json(const json& j, RequestRecord& r) {
  r.cache_key = j.at("cache_key").get<std::string>();
  r.response_text = j.at("response_text").get<std::string>();
  r.finish_reason = j.value("finish_reason", std::string{});
  if (j.contains("usage")) {
    r.usage.prompt_tokens = j.at("usage").value("prompt_tokens", 0LL);
    r.usage.completion_tokens = j.at("usage").value("completion_tokens", 0LL);
  }
  r.attempts = j.value("attempts", 1);
}

enum class Route { kCompletions, kChat };

struct ChatMessage {
  std::string role;
  std::string content;
};

// One canonical request. Everything that can change the response is part
// of the cache key.
struct Request {
  Route route = Route::kCompletions;
  std::string endpoint_url;
  std::string model;
  std::string prompt;                 // completions
  std::vector<ChatMessage> messages;  // chat
  double temperature = 0.0;
  double top_p = 1.0;
  int max_tokens = 1;
  int sample_index = 0;
  std::optional<std::uint64_t> seed;
  // Distinguishes otherwise identical requests (e.g. one judge call per
  // scored sample).
  std::string tag;

  json body() const {
    json j{{"model", model}, {"temperature", temperature}, {"top_p", top_p}, {"max_tokens", max_tokens}, {"n", 1}};
    if (route == Route::kCompletions) {
      j["prompt"] = prompt;
    } else {
      json msgs = json::array();
      for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
      j["messages"] = msgs;
    }
    if (seed) j["seed"] = *seed;
    return j;
  }

  std::string path() const { return route == Route::kCompletions ? "/v1/completions" : "/v1/chat/completions"; }

  std::string cache_key() const {
    json j{{"endpoint", endpoint_url}, {"route", path()}, {"body", body()}, {"sample_index", sample_index}, {"tag", tag}};
    return content_id(j.dump());
  }
};

class RequestCache {
 public:
  explicit RequestCache(fs::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  bool enabled() const { return !dir_.empty(); }
  fs::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

  std::optional<RequestRecord> get(const std::string& key) const {
    if (!enabled()) return std::nullopt;
    std::ifstream in(path_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    try {
      std::string body{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
      auto rec = json::parse(body).get<RequestRecord>();
      if (rec.cache_key != key) return std::nullopt;
      return rec;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  // Entries are immutable: written once via a unique temp file and rename.
  void put(const RequestRecord& rec) const {
    if (!enabled()) return;
    const fs::path final_path = path_for(rec.cache_key);
    std::ostringstream tmp_name;
    tmp_name << rec.cache_key << ".tmp." << std::this_thread::get_id();
    const fs::path tmp = dir_ / tmp_name.str();
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::kIoFailure, "cannot write cache entry " + tmp.string());
      out << json(rec).dump();
    }
    std::error_code ec;
    fs::rename(tmp, final_path, ec);
    if (ec) throw Error(ErrorCode::kIoFailure, "cache rename failed: " + ec.message());
  }

 private:
  fs::path dir_;
};

// ---------------------------------------------------------------------------
// Gateway

struct GatewayOptions {
  fs::path cache_dir;
  int max_inflight = 16;
  int max_attempts = 4;
  int backoff_ms = 500;
  int connect_timeout_s = 10;
  int read_timeout_s = 1800;
  bool send_seed = true;
  std::string api_key = [] {
    const char* k = std::getenv("OFFTRACK_API_KEY");
    return k ? std::string(k) : std::string();
  }();
};

struct GatewayStats {
  long long cache_hits = 0;
  long long cache_misses = 0;
  long long http_attempts = 0;
  int peak_inflight = 0;
};

struct EndpointParts {
  std::string scheme_host_port;
  std::string base_path;
};

inline EndpointParts split_endpoint(const std::string& url) {
  if (!is_absolute_url(url)) throw Error(ErrorCode::kInvalidArgument, "not an absolute URL: " + url);
  const std::size_t scheme_end = url.find("://") + 3;
  const std::size_t slash = url.find('/', scheme_end);
  if (slash == std::string::npos) return {url, ""};
  std::string base = url.substr(slash);
  while (!base.empty() && base.back() == '/') base.pop_back();
  return {url.substr(0, slash), base};
}

class Gateway {
 public:
  explicit Gateway(GatewayOptions opts = {}) : opts_(std::move(opts)), cache_(opts_.cache_dir) {
    if (opts_.max_inflight < 1) throw Error(ErrorCode::kInvalidArgument, "max_inflight must be >= 1");
    if (opts_.max_attempts < 1) throw Error(ErrorCode::kInvalidArgument, "max_attempts must be >= 1");
  }

  const GatewayOptions& options() const { return opts_; }
  const RequestCache& cache() const { return cache_; }

  GatewayStats stats() const {
    return {hits_.load(), misses_.load(), attempts_.load(), peak_inflight_.load()};
  }

  // Returns (hits, misses) since the last flush, persists them under the run
  // directory, and resets the counters.
  std::pair<long long, long long> flush_cache_stats(const fs::path& out_file) {
    const long long h = hits_.exchange(0), m = misses_.exchange(0);
    if (!out_file.empty()) {
      fs::create_directories(out_file.parent_path());
      write_file_atomic(out_file, json{{"hits", h}, {"misses", m}}.dump() + "\n");
    }
    return {h, m};
  }

  RequestRecord execute(const Request& req) {
    const std::string key = req.cache_key();
    if (auto cached = cache_.get(key)) {
      ++hits_;
      return *cached;
    }
    ++misses_;
    RequestRecord rec = send_with_retries(req);
    rec.cache_key = key;
    cache_.put(rec);
    return rec;
  }

  // Runs requests on at most max_inflight workers. `on_result` is invoked
  // in completion order (serialized); the returned vector is in input order.
  std::vector<RequestRecord> execute_batch(const std::vector<Request>& reqs,
                                           const std::function<void(std::size_t, const RequestRecord&)>& on_result = {}) {
    std::vector<RequestRecord> out(reqs.size());
    if (reqs.empty()) return out;
    std::atomic<std::size_t> next{0};
    std::mutex result_mu;
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    auto worker = [&] {
      while (!failed.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= reqs.size()) return;
        try {
          out[i] = execute(reqs[i]);
          if (on_result) {
            std::lock_guard lock(result_mu);
            on_result(i, out[i]);
          }
        } catch (...) {
          std::lock_guard lock(result_mu);
          if (!first_error) first_error = std::current_exception();
          failed = true;
        }
      }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(opts_.max_inflight), reqs.size());
    std::vector<std::thread> threads;
    threads.reserve(n);
    for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
  }

  // Token strings from {endpoint}/tokenize, or nullopt when the route is
  // missing or does not return token strings.
  std::optional<std::vector<std::string>> tokenize(const ModelRef& model, std::string_view text) {
    const std::string memo_key = model.endpoint_url + "\x1f" + model.wire_name() + "\x1f" + sha256_hex(text);
    {
      std::lock_guard lock(tokenize_mu_);
      if (auto it = tokenize_memo_.find(memo_key); it != tokenize_memo_.end()) return it->second;
    }
    std::optional<std::vector<std::string>> result;
    try {
      const auto parts = split_endpoint(model.endpoint_url);
      ClientLease cli(*this, parts.scheme_host_port);
      json body{{"model", model.wire_name()}, {"prompt", std::string(text)}, {"return_token_strs", true}, {"add_special_tokens", false}};
      auto res = cli->Post(parts.base_path + "/tokenize", headers(), body.dump(), "application/json");
      if (res && res->status == 200) {
        auto j = json::parse(res->body);
        if (j.contains("token_strs") && j.at("token_strs").is_array()) result = j.at("token_strs").get<std::vector<std::string>>();
      }
    } catch (const std::exception&) {
      result.reset();
    }
    std::lock_guard lock(tokenize_mu_);
    tokenize_memo_[memo_key] = result;
    return result;
  }

  EndpointTokenizer tokenizer_for(const ModelRef& model) {
    return [this, model](std::string_view text) { return tokenize(model, text); };
  }

 private:
  httplib::Headers headers() const {
    httplib::Headers h;
    if (!opts_.api_key.empty()) h.emplace("Authorization", "Bearer " + opts_.api_key);
    return h;
  }

  // Idle clients per host, checked out for one request at a time.
  class ClientLease {
   public:
    ClientLease(Gateway& g, std::string host) : g_(g), host_(std::move(host)) {
      {
        std::lock_guard lock(g_.clients_mu_);
        auto& idle = g_.idle_clients_[host_];
        if (!idle.empty()) {
          client_ = std::move(idle.back());
          idle.pop_back();
        }
      }
      if (!client_) {
        client_ = std::make_unique<httplib::Client>(host_);
        client_->set_connection_timeout(g_.opts_.connect_timeout_s, 0);
        client_->set_read_timeout(g_.opts_.read_timeout_s, 0);
        client_->set_write_timeout(g_.opts_.read_timeout_s, 0);
        client_->set_keep_alive(true);
        client_->set_tcp_nodelay(true);
      }
    }
    ~ClientLease() {
      std::lock_guard lock(g_.clients_mu_);
      g_.idle_clients_[host_].push_back(std::move(client_));
    }
    ClientLease(const ClientLease&) = delete;
    ClientLease& operator=(const ClientLease&) = delete;
    httplib::Client* operator->() { return client_.get(); }

   private:
    Gateway& g_;
    std::string host_;
    std::unique_ptr<httplib::Client> client_;
  };

  struct InflightGuard {
    Gateway& g;
    explicit InflightGuard(Gateway& gw) : g(gw) {
      const int now = ++g.inflight_;
      int peak = g.peak_inflight_.load();
      while (now > peak && !g.peak_inflight_.compare_exchange_weak(peak, now)) {
      }
    }
    ~InflightGuard() { --g.inflight_; }
  };

  static bool retryable(int status) { return status == 408 || status == 429 || status >= 500; }

  RequestRecord send_with_retries(const Request& req) {
    const auto parts = split_endpoint(req.endpoint_url);
    const std::string payload = req.body().dump();
    std::string last_error;
    for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
      if (attempt > 1) std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(opts_.backoff_ms) << (attempt - 2)));
      ++attempts_;
      httplib::Result res = [&] {
        InflightGuard guard(*this);
        ClientLease cli(*this, parts.scheme_host_port);
        return cli->Post(parts.base_path + req.path(), headers(), payload, "application/json");
      }();
      if (!res) {
        last_error = "connection: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "status " + std::to_string(res->status);
        if (!retryable(res->status)) break;
        continue;
      }
      try {
        RequestRecord rec = parse_response(req.route, res->body);
        rec.attempts = attempt;
        return rec;
      } catch (const std::exception& e) {
        last_error = std::string("bad response body: ") + e.what();
      }
    }
    throw Error(ErrorCode::kEndpointError, req.endpoint_url + req.path() + ": " + last_error);
  }

  static RequestRecord parse_response(Route route, const std::string& body) {
    const json j = json::parse(body);
    const json& choice = j.at("choices").at(0);
    RequestRecord rec;
    if (route == Route::kCompletions) {
      rec.response_text = choice.at("text").get<std::string>();
    } else {
      const json& content = choice.at("message").at("content");
      rec.response_text = content.is_null() ? std::string() : content.get<std::string>();
    }
    rec.finish_reason = choice.contains("finish_reason") && !choice.at("finish_reason").is_null() ? choice.at("finish_reason").get<std::string>() : "";
    if (j.contains("usage") && j.at("usage").is_object()) {
      rec.usage.prompt_tokens = j.at("usage").value("prompt_tokens", 0LL);
      rec.usage.completion_tokens = j.at("usage").value("completion_tokens", 0LL);
    }
    return rec;
  }

  GatewayOptions opts_;
  RequestCache cache_;
  std::atomic<long long> hits_{0}, misses_{0}, attempts_{0};
  std::atomic<int> inflight_{0}, peak_inflight_{0};
  std::mutex tokenize_mu_;
  std::mutex clients_mu_;
  std::map<std::string, std::vector<std::unique_ptr<httplib::Client>>> idle_clients_;
  std::unordered_map<std::string, std::optional<std::vector<std::string>>> tokenize_memo_;
};

// ---------------------------------------------------------------------------
// Sampling operations

inline Request completion_request(const ModelRef& model, std::string prompt, const SamplingParams& params, int sample_index,
                                  std::uint64_t seed, bool send_seed) {
  Request r;
  r.route = Route::kCompletions;
  r.endpoint_url = model.endpoint_url;
  r.model = model.wire_name();
  r.prompt = std::move(prompt);
  r.temperature = params.temperature;
  r.top_p = params.top_p;
  r.max_tokens = params.max_tokens;
  r.sample_index = sample_index;
  if (send_seed) r.seed = seed + static_cast<std::uint64_t>(sample_index);
  return r;
}

inline std::vector<Request> solo_requests(const TemplateRegistry& templates, const ModelRef& model, const Question& q,
                                          const SamplingParams& params, int k, std::uint64_t seed, bool send_seed = true) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  const std::string prompt = render_solo_prompt(templates.get(model), q);
  std::vector<Request> out;
  for (int i = 0; i < k; ++i) out.push_back(completion_request(model, prompt, params, i, seed, send_seed));
  return out;
}

// Reasoning keeps the thinking content and the post-thinking answer text,
// with the closing delimiter removed.
inline Trajectory trajectory_from(const PromptTemplate& t, const ModelRef& model, const Question& q, int sample_index,
                                  const RequestRecord& rec) {
  Trajectory tr;
  tr.question_id = q.id;
  tr.model = model.name;
  tr.sample_index = sample_index;
  const auto parts = split_generation(t, rec.response_text);
  tr.reasoning = parts.closed ? parts.thinking + parts.after : parts.thinking;
  tr.answer = extract_final_answer(t, rec.response_text);
  tr.verdict = VerdictLabel::kUnverified;
  tr.finish_reason = rec.finish_reason;
  return tr;
}

inline std::vector<Trajectory> sample_solo(Gateway& gw, const TemplateRegistry& templates, const ModelRef& model, const Question& q,
                                           const SamplingParams& params, int k, std::uint64_t seed) {
  const auto reqs = solo_requests(templates, model, q, params, k, seed, gw.options().send_seed);
  const auto recs = gw.execute_batch(reqs);
  std::vector<Trajectory> out;
  for (int i = 0; i < k; ++i) out.push_back(trajectory_from(templates.get(model), model, q, i, recs[static_cast<std::size_t>(i)]));
  return out;
}

inline std::vector<Request> off_trajectory_requests(const TemplateRegistry& templates, const ModelRef& model, const SteeredItem& item,
                                                    const Question& q, const SamplingParams& params, int k, std::uint64_t seed,
                                                    bool send_seed = true) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (item.kind == ItemKind::kGuidability && item.prefix_text.empty())
    throw Error(ErrorCode::kInvalidArgument, "guidability item " + item.item_id + " has an empty prefix");
  const std::string prompt = render_continue_prompt(templates.get(model), q, item.prefix_text);
  std::vector<Request> out;
  for (int i = 0; i < k; ++i) out.push_back(completion_request(model, prompt, params, i, seed, send_seed));
  return out;
}

// Verdict is left WRONG/NORMALIZER until the verifier runs.
inline CompletionSample sample_from(const PromptTemplate& t, const SteeredItem& item, int sample_index, const RequestRecord& rec) {
  CompletionSample s;
  s.item_id = item.item_id;
  s.sample_index = sample_index;
  s.completion_text = rec.response_text;
  s.extracted_answer = extract_final_answer(t, rec.response_text);
  s.finish_reason = rec.finish_reason;
  return s;
}

inline std::vector<CompletionSample> complete_off_trajectory(Gateway& gw, const TemplateRegistry& templates, const ModelRef& model,
                                                             const SteeredItem& item, const Question& q, const SamplingParams& params,
                                                             int k, std::uint64_t seed) {
  const auto reqs = off_trajectory_requests(templates, model, item, q, params, k, seed, gw.options().send_seed);
  const auto recs = gw.execute_batch(reqs);
  std::vector<CompletionSample> out;
  for (int i = 0; i < k; ++i) out.push_back(sample_from(templates.get(model), item, i, recs[static_cast<std::size_t>(i)]));
  return out;
}

inline Request judge_request(const JudgeConfig& cfg, const JudgePrompt& prompt, std::string tag) {
  Request r;
  r.route = Route::kChat;
  r.endpoint_url = cfg.judge_model.endpoint_url;
  r.model = cfg.judge_model.wire_name();
  r.messages = {{"system", prompt.system}, {"user", prompt.user}};
  r.temperature = cfg.temperature;
  r.top_p = 1.0;
  r.max_tokens = cfg.max_tokens;
  r.tag = std::move(tag);
  return r;
}

}  // namespace offtrack
