#pragma once

// Local completions server with scripted, deterministic "model" behaviors.
// Prompts must carry [[qid:<id>]] markers (the "mock" template adds one in
// front of the question; ORACLE-style reasoning starts with one).

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "offtrack/core.hpp"
#include "offtrack/verifier.hpp"

namespace offtrack::sim {

enum class Behavior { kOracle, kDistracted, kRecoverer, kParrot, kStubbornWrong };

inline constexpr std::string_view kWrongSentinel = "NO_ANSWER_SENTINEL_X";

namespace detail {
inline constexpr offtrack::detail::EnumNames<Behavior, 5> kBehaviorNames{{{
    {Behavior::kOracle, "ORACLE"},
    {Behavior::kDistracted, "DISTRACTED"},
    {Behavior::kRecoverer, "RECOVERER"},
    {Behavior::kParrot, "PARROT"},
    {Behavior::kStubbornWrong, "STUBBORN_WRONG"},
}}};
}  // namespace detail

inline std::string_view to_string(Behavior b) { return detail::kBehaviorNames.name(b); }
inline Behavior parse_behavior(std::string_view s) { return detail::kBehaviorNames.parse(s, "behavior"); }

// Every [[qid:...]] marker in order of appearance.
inline std::vector<std::string> find_markers(std::string_view text) {
  static constexpr std::string_view kOpen = "[[qid:";
  std::vector<std::string> out;
  for (std::size_t p = text.find(kOpen); p != std::string_view::npos; p = text.find(kOpen, p + 1)) {
    const std::size_t start = p + kOpen.size();
    const std::size_t end = text.find("]]", start);
    if (end == std::string_view::npos) break;
    out.emplace_back(text.substr(start, end - start));
  }
  return out;
}

// The continued thinking text: whatever follows the last opening delimiter.
inline std::string_view prompt_prefix(std::string_view prompt) {
  const std::size_t p = prompt.rfind("<think>");
  if (p == std::string_view::npos) return {};
  std::string_view rest = prompt.substr(p + 7);
  if (!rest.empty() && rest.front() == '\n') rest.remove_prefix(1);
  return rest;
}

using AnswerBook = std::map<std::string, std::string>;

inline AnswerBook answer_book_from(const QuestionSet& questions) {
  AnswerBook book;
  for (const auto& q : questions) book[q.id] = q.gold_answer;
  return book;
}

// Ten short paragraphs; the gold answer first appears in paragraph seven so
// guide prefixes cut at 0.8 contain it and those cut at 0.6 or less do not.
inline std::string oracle_reasoning(const std::string& qid, const std::string& gold) {
  const std::string boxed = "\\boxed{" + gold + "}";
  std::string out = "[[qid:" + qid + "]] Let me restate the problem and fix the notation before computing.\n\n";
  static constexpr std::string_view kFiller[] = {
      "First I list the given quantities and the constraints they satisfy.",
      "Next I rewrite the condition in a form that is easier to manipulate.",
      "This suggests splitting the work into two cases and handling each separately.",
      "The first case reduces to a short computation with the known values.",
      "The second case is symmetric, so the same computation applies there.",
  };
  for (auto f : kFiller) {
    out += f;
    out += "\n\n";
  }
  out += "Combining both cases gives " + boxed + " as the value.\n\n";
  out += "Let me double check this against the original condition once more.\n\n";
  out += "Everything is consistent with the constraints listed at the start.\n\n";
  out += "So the result is " + boxed + "\n</think>\n\n" + boxed;
  return out;
}

struct ServerStats {
  long long completions = 0;
  long long tokenize_calls = 0;
  int peak_inflight = 0;
};

class SimReasoner {
 public:
  SimReasoner(AnswerBook book, Behavior default_behavior) : book_(std::move(book)), default_(default_behavior) {
    server_.new_task_queue = [] { return new httplib::ThreadPool(64); };
    server_.set_tcp_nodelay(true);
    // No SO_REUSEPORT: an occupied port must fail to bind.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    install_routes();
  }

  ~SimReasoner() { stop(); }
  SimReasoner(const SimReasoner&) = delete;
  SimReasoner& operator=(const SimReasoner&) = delete;

  // port 0 picks a free port. Throws PORT_IN_USE when the bind fails.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
      if (port_ < 0) throw Error(ErrorCode::kPortInUse, host + ":0");
    } else {
      if (!server_.bind_to_port(host, port)) throw Error(ErrorCode::kPortInUse, host + ":" + std::to_string(port));
      port_ = port;
    }
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  // Blocks the calling thread; used by the CLI.
  void serve_forever(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port)) throw Error(ErrorCode::kPortInUse, host + ":" + std::to_string(port));
    port_ = port;
    host_ = host;
    server_.listen_after_bind();
  }

  int port() const { return port_; }
  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }

  void set_behavior(Behavior b, const std::string& model = {}) {
    std::lock_guard lock(mu_);
    if (model.empty()) default_ = b;
    else per_model_[model] = b;
  }

  void set_latency_ms(int ms) { latency_ms_ = ms; }

  ServerStats stats() const { return {completions_.load(), tokenize_calls_.load(), peak_inflight_.load()}; }

  void reset_stats() {
    completions_ = 0;
    tokenize_calls_ = 0;
    peak_inflight_ = 0;
  }

  Behavior behavior_for(const std::string& model) const {
    std::lock_guard lock(mu_);
    auto it = per_model_.find(model);
    return it == per_model_.end() ? default_ : it->second;
  }

  // The generated continuation for a prompt; a pure function of its inputs.
  std::string respond(Behavior behavior, std::string_view prompt) const {
    const auto markers = find_markers(prompt);
    const std::string_view prefix = prompt_prefix(prompt);
    auto gold_of = [&](const std::string& qid) -> const std::string& {
      auto it = book_.find(qid);
      if (it == book_.end()) throw Error(ErrorCode::kMarkerMissing, "unknown question " + qid);
      return it->second;
    };
    auto need_marker = [&]() -> const std::string& {
      if (markers.empty()) throw Error(ErrorCode::kMarkerMissing, std::string(to_string(behavior)));
      return markers.front();
    };
    auto finish = [](const std::string& answer) { return "\n\nThe computation is complete.\n</think>\n\n\\boxed{" + answer + "}"; };

    switch (behavior) {
      case Behavior::kOracle:
      case Behavior::kRecoverer: {
        const std::string& qid = need_marker();
        if (prefix.empty()) return oracle_reasoning(qid, gold_of(qid));
        return finish(gold_of(qid));
      }
      case Behavior::kDistracted: {
        const std::string& qid = need_marker();
        std::string target = qid;
        for (const auto& m : find_markers(prefix))
          if (m != qid) target = m;
        if (prefix.empty()) return oracle_reasoning(qid, gold_of(qid));
        return finish(gold_of(target));
      }
      case Behavior::kParrot: {
        auto a = extract_answer(prefix);
        return finish(a && !a->empty() ? *a : std::string(kWrongSentinel));
      }
      case Behavior::kStubbornWrong:
        return finish(std::string(kWrongSentinel));
    }
    return finish(std::string(kWrongSentinel));
  }

  // Pieces of leading whitespace plus one word; concatenates to the input.
  static std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const std::size_t start = i;
      while (i < text.size() && is_space(text[i])) ++i;
      while (i < text.size() && !is_space(text[i])) ++i;
      out.emplace_back(text.substr(start, i - start));
    }
    return out;
  }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", {{"code", code}, {"message", message}}}}.dump(), "application/json");
  }

  void install_routes() {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int now = ++inflight_;
      int peak = peak_inflight_.load();
      while (now > peak && !peak_inflight_.compare_exchange_weak(peak, now)) {
      }
      struct Release {
        std::atomic<int>& n;
        ~Release() { --n; }
      } release{inflight_};
      ++completions_;
      if (latency_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(latency_ms_.load()));
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        return send_error(res, 400, "MALFORMED_RECORD", e.what());
      }
      if (!body.contains("prompt") || !body.at("prompt").is_string()) return send_error(res, 400, "MALFORMED_RECORD", "prompt");
      const std::string model = body.value("model", std::string());
      const std::string prompt = body.at("prompt").get<std::string>();
      std::string text;
      try {
        text = respond(behavior_for(model), prompt);
      } catch (const Error& e) {
        return send_error(res, 400, std::string(offtrack::to_string(e.code())), e.detail());
      }
      const auto prompt_tokens = static_cast<long long>(tokenize(prompt).size());
      const auto completion_tokens = static_cast<long long>(tokenize(text).size());
      json out{{"id", "cmpl-" + content_id(model + "\x1f" + prompt)},
               {"object", "text_completion"},
               {"model", model},
               {"choices", json::array({{{"index", 0}, {"text", text}, {"finish_reason", "stop"}, {"logprobs", nullptr}}})},
               {"usage", {{"prompt_tokens", prompt_tokens}, {"completion_tokens", completion_tokens}, {"total_tokens", prompt_tokens + completion_tokens}}}};
      res.set_content(out.dump(), "application/json");
    });

    server_.Post("/tokenize", [this](const httplib::Request& req, httplib::Response& res) {
      ++tokenize_calls_;
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        return send_error(res, 400, "MALFORMED_RECORD", e.what());
      }
      const auto pieces = tokenize(body.value("prompt", std::string()));
      json ids = json::array();
      for (std::size_t i = 0; i < pieces.size(); ++i) ids.push_back(i);
      res.set_content(json{{"count", pieces.size()}, {"tokens", ids}, {"token_strs", pieces}}.dump(), "application/json");
    });

    server_.Post("/admin/behavior", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = json::parse(req.body);
        set_behavior(parse_behavior(body.at("behavior").get<std::string>()), body.value("model", std::string()));
        if (body.contains("latency_ms")) set_latency_ms(body.at("latency_ms").get<int>());
      } catch (const std::exception& e) {
        return send_error(res, 400, "INVALID_ARGUMENT", e.what());
      }
      res.set_content(R"({"ok":true})", "application/json");
    });

    server_.Get("/admin/stats", [this](const httplib::Request&, httplib::Response& res) {
      const auto s = stats();
      res.set_content(json{{"completions", s.completions}, {"tokenize_calls", s.tokenize_calls}, {"peak_inflight", s.peak_inflight}}.dump(),
                      "application/json");
    });

    server_.Post("/admin/reset_stats", [this](const httplib::Request&, httplib::Response& res) {
      reset_stats();
      res.set_content(R"({"ok":true})", "application/json");
    });
  }

  AnswerBook book_;
  mutable std::mutex mu_;
  Behavior default_;
  std::map<std::string, Behavior> per_model_;
  std::atomic<int> latency_ms_{0};
  std::atomic<long long> completions_{0}, tokenize_calls_{0};
  std::atomic<int> inflight_{0}, peak_inflight_{0};
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
};

}  // namespace offtrack::sim
