#include <catch_amalgamated.hpp>

#include <chrono>
#include <mutex>

#include "offtrack/gateway.hpp"
#include "support/fixtures.hpp"

using namespace offtrack;

namespace {

// Completions server that fails the first `failures` requests with `status`,
// then echoes the prompt. Records concurrency, bodies and auth headers.
class ScriptedServer {
 public:
  ScriptedServer(int failures, int status, int delay_ms = 0) : failures_(failures), status_(status), delay_ms_(delay_ms) {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int now = ++inflight_;
      int peak = peak_.load();
      while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
      }
      if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
      {
        std::lock_guard lock(mu_);
        bodies_.push_back(json::parse(req.body));
        auth_ = req.get_header_value("Authorization");
      }
      const int n = ++calls_;
      --inflight_;
      if (n <= failures_) {
        res.status = status_;
        return;
      }
      const json body = json::parse(req.body);
      json out{{"choices", json::array({{{"index", 0}, {"text", "echo:" + body.at("prompt").get<std::string>()}, {"finish_reason", "stop"}}})},
               {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 5}}}};
      res.set_content(out.dump(), "application/json");
    });
    server_.Post("/tokenize", [](const httplib::Request& req, httplib::Response& res) {
      const std::string p = json::parse(req.body).at("prompt").get<std::string>();
      json toks = json::array();
      for (char c : p) toks.push_back(std::string(1, c));
      res.set_content(json{{"token_strs", toks}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ScriptedServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int calls() const { return calls_.load(); }
  int peak() const { return peak_.load(); }
  std::vector<json> bodies() {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::string auth() {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  int failures_, status_, delay_ms_;
  std::atomic<int> calls_{0}, inflight_{0}, peak_{0};
  std::mutex mu_;
  std::vector<json> bodies_;
  std::string auth_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

GatewayOptions fast_options(const fs::path& cache) {
  GatewayOptions o;
  o.cache_dir = cache;
  o.backoff_ms = 1;
  o.read_timeout_s = 10;
  o.api_key = "";
  return o;
}

Request echo_request(const std::string& url, const std::string& prompt, int sample_index = 0) {
  return completion_request(fixtures::mock_model("m", url), prompt, SamplingParams{}, sample_index, 100, true);
}

}  // namespace

TEST_CASE("requests carry sampling parameters and a per-sample seed") {
  fixtures::TempDir dir("gw");
  ScriptedServer server(0, 200);
  Gateway gw(fast_options(dir / "cache"));
  const auto rec = gw.execute(echo_request(server.url(), "hello", 3));
  CHECK(rec.response_text == "echo:hello");
  CHECK(rec.finish_reason == "stop");
  CHECK(rec.usage.completion_tokens == 5);
  const auto b = server.bodies().at(0);
  CHECK(b.at("seed") == 103);
  CHECK(b.at("temperature") == 0.6);
  CHECK(b.at("top_p") == 0.95);
  CHECK(b.at("max_tokens") == 32768);
  CHECK(b.at("n") == 1);
}

TEST_CASE("cache: second execution is a hit and sends nothing") {
  fixtures::TempDir dir("gw");
  ScriptedServer server(0, 200);
  {
    Gateway gw(fast_options(dir / "cache"));
    gw.execute(echo_request(server.url(), "a"));
    gw.execute(echo_request(server.url(), "a", 1));
    CHECK(gw.stats().cache_misses == 2);
  }
  Gateway again(fast_options(dir / "cache"));
  CHECK(again.execute(echo_request(server.url(), "a")).response_text == "echo:a");
  CHECK(again.execute(echo_request(server.url(), "a", 1)).response_text == "echo:a");
  CHECK(again.stats().cache_hits == 2);
  CHECK(again.stats().cache_misses == 0);
  CHECK(server.calls() == 2);
  const auto [h, m] = again.flush_cache_stats(dir / "stats" / "x.json");
  CHECK(h == 2);
  CHECK(m == 0);
  CHECK(json::parse(read_file(dir / "stats" / "x.json")) == json{{"hits", 2}, {"misses", 0}});
  CHECK(again.stats().cache_hits == 0);
}

TEST_CASE("cache keys separate every request field") {
  const Request base = echo_request("http://127.0.0.1:1", "p");
  auto differs = [&](const std::function<void(Request&)>& f) {
    Request r = base;
    f(r);
    return r.cache_key() != base.cache_key();
  };
  CHECK(differs([](Request& r) { r.prompt = "q"; }));
  CHECK(differs([](Request& r) { r.sample_index = 1; }));
  CHECK(differs([](Request& r) { r.temperature = 0.0; }));
  CHECK(differs([](Request& r) { r.tag = "judge/1"; }));
  CHECK(differs([](Request& r) { r.endpoint_url = "http://127.0.0.1:2"; }));
  CHECK_FALSE(differs([](Request&) {}));
}

TEST_CASE("retryable statuses are retried with backoff") {
  fixtures::TempDir dir("gw");
  ScriptedServer server(2, 503);
  Gateway gw(fast_options(dir / "cache"));
  const auto rec = gw.execute(echo_request(server.url(), "x"));
  CHECK(rec.attempts == 3);
  CHECK(server.calls() == 3);
  CHECK(gw.stats().http_attempts == 3);
}

TEST_CASE("non-retryable statuses and exhausted retries raise ENDPOINT_ERROR") {
  fixtures::TempDir dir("gw");
  {
    ScriptedServer server(100, 400);
    Gateway gw(fast_options(dir / "c1"));
    try {
      gw.execute(echo_request(server.url(), "x"));
      FAIL("expected ENDPOINT_ERROR");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kEndpointError);
    }
    CHECK(server.calls() == 1);
  }
  {
    ScriptedServer server(100, 429);
    Gateway gw(fast_options(dir / "c2"));
    CHECK_THROWS_AS(gw.execute(echo_request(server.url(), "x")), Error);
    CHECK(server.calls() == 4);
    CHECK(fs::is_empty(dir / "c2"));
  }
}

TEST_CASE("batch respects the in-flight cap and keeps input order") {
  fixtures::TempDir dir("gw");
  ScriptedServer server(0, 200, 20);
  GatewayOptions o = fast_options(dir / "cache");
  o.max_inflight = 3;
  Gateway gw(o);
  std::vector<Request> reqs;
  for (int i = 0; i < 24; ++i) reqs.push_back(echo_request(server.url(), "p" + std::to_string(i)));
  int seen = 0;
  const auto out = gw.execute_batch(reqs, [&](std::size_t, const RequestRecord&) { ++seen; });
  CHECK(seen == 24);
  for (int i = 0; i < 24; ++i) CHECK(out[static_cast<std::size_t>(i)].response_text == "echo:p" + std::to_string(i));
  CHECK(server.peak() <= 3);
  CHECK(gw.stats().peak_inflight <= 3);
  CHECK(gw.stats().peak_inflight >= 2);
}

TEST_CASE("bearer auth comes from the configured key") {
  fixtures::TempDir dir("gw");
  ScriptedServer server(0, 200);
  GatewayOptions o = fast_options(dir / "cache");
  o.api_key = "sk-test";
  Gateway gw(o);
  gw.execute(echo_request(server.url(), "x"));
  CHECK(server.auth() == "Bearer sk-test");
}

TEST_CASE("tokenize route and tokenizer fallback") {
  fixtures::TempDir dir("gw");
  ScriptedServer server(0, 200);
  Gateway gw(fast_options(dir / "cache"));
  const auto model = fixtures::mock_model("m", server.url());
  const auto toks = gw.tokenize(model, "abc");
  REQUIRE(toks);
  CHECK(*toks == std::vector<std::string>{"a", "b", "c"});
  auto tok = gw.tokenizer_for(model);
  CHECK(truncate_fraction("abcd", 0.5, TokenizerMode::kEndpoint, {&tok, true}) == "ab");

  const auto dead = fixtures::mock_model("m", "http://127.0.0.1:1");
  CHECK_FALSE(gw.tokenize(dead, "abc"));
}

TEST_CASE("templates: rendering, missing ids, answer split") {
  TemplateRegistry reg;
  auto model = fixtures::mock_model("m", "http://127.0.0.1:1");
  const auto& t = reg.get(model);
  Question q{"q7", Benchmark::kAime24, "What is {prefix}?", "3"};
  CHECK(render_solo_prompt(t, q) == "<|user|>[[qid:q7]] What is {prefix}?\n<|assistant|><think>\n");
  CHECK(render_continue_prompt(t, q, "step {question}") == "<|user|>[[qid:q7]] What is {prefix}?\n<|assistant|><think>\nstep {question}");

  model.prompt_template_id = "nope";
  try {
    reg.get(model);
    FAIL("expected TEMPLATE_MISSING");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTemplateMissing);
  }

  const auto& r1 = reg.get(ModelRef{"x", "http://h", "deepseek-r1"});
  CHECK(render_solo_prompt(r1, q).rfind("<｜begin▁of▁sentence｜><｜User｜>What is", 0) == 0);

  RequestRecord rec;
  rec.response_text = "think \\boxed{1}\n</think>\n\nFinal: \\boxed{2}";
  const auto tr = trajectory_from(t, model, q, 0, rec);
  CHECK(tr.reasoning == "think \\boxed{1}\n\n\nFinal: \\boxed{2}");
  CHECK(tr.answer == std::optional<std::string>("2"));
  CHECK(extract_final_answer(t, "unterminated \\boxed{5}") == std::optional<std::string>("5"));
}

TEST_CASE("guidability requests need a non-empty prefix") {
  TemplateRegistry reg;
  const auto model = fixtures::mock_model("m", "http://127.0.0.1:1");
  SteeredItem it;
  it.item_id = "i";
  it.kind = ItemKind::kGuidability;
  Question q{"q", Benchmark::kAime24, "t", "1"};
  CHECK_THROWS_AS(off_trajectory_requests(reg, model, it, q, SamplingParams{}, 2, 0), Error);
  it.prefix_text = "guide";
  const auto reqs = off_trajectory_requests(reg, model, it, q, SamplingParams{}, 2, 10);
  REQUIRE(reqs.size() == 2);
  CHECK(reqs[1].seed == std::optional<std::uint64_t>(11));
  CHECK(reqs[0].cache_key() != reqs[1].cache_key());
}
