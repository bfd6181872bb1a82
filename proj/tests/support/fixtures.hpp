#pragma once

#include <atomic>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "offtrack/offtrack.hpp"

namespace fixtures {

namespace fs = std::filesystem;
using offtrack::json;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("offtrack-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// n questions cycling through the five standard benchmarks, with pairwise
// non-equivalent gold answers.
inline std::vector<offtrack::Question> make_questions(int n) {
  static constexpr offtrack::Benchmark kBench[] = {offtrack::Benchmark::kAime24, offtrack::Benchmark::kAime25, offtrack::Benchmark::kMath500,
                                                   offtrack::Benchmark::kMinerva, offtrack::Benchmark::kOlympiad};
  std::vector<offtrack::Question> out;
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "q%03d", i);
    offtrack::Question q;
    q.id = id;
    q.benchmark = kBench[i % 5];
    q.text = "Compute the value of expression number " + std::to_string(i) + ".";
    q.gold_answer = (i % 3 == 0) ? "\\frac{" + std::to_string(2 * i + 1) + "}{2}" : std::to_string(100 + 7 * i);
    out.push_back(q);
  }
  return out;
}

inline fs::path write_questions(const fs::path& path, int n) {
  offtrack::replace_records(path, make_questions(n));
  return path;
}

// Chat-route judge for tests. GRADE compares the student and standard
// answers with the normalizer; the others reply with a fixed verdict.
class MockJudge {
 public:
  enum class Mode { kAlwaysWrong, kAlwaysCorrect, kMalformed, kGrade, kDown };

  explicit MockJudge(Mode mode) : mode_(mode) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls_;
      if (mode_.load() == Mode::kDown) {
        res.status = 503;
        return;
      }
      const json body = json::parse(req.body);
      const std::string user = body.at("messages").at(1).at("content").get<std::string>();
      std::string reply;
      switch (mode_.load()) {
        case Mode::kAlwaysWrong: reply = "<analysis>The answers differ.</analysis>\n<judge>WRONG</judge>"; break;
        case Mode::kAlwaysCorrect: reply = "<analysis>Equivalent.</analysis>\n<judge>CORRECT</judge>"; break;
        case Mode::kMalformed: reply = "I think it is fine."; break;
        case Mode::kGrade: reply = grade(user); break;
        case Mode::kDown: break;
      }
      json out{{"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", reply}}}, {"finish_reason", "stop"}}})}};
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockJudge() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  long long calls() const { return calls_.load(); }
  void set_mode(Mode m) { mode_ = m; }

  offtrack::ModelRef model_ref() const {
    offtrack::ModelRef m;
    m.name = "mock-judge";
    m.endpoint_url = url();
    m.prompt_template_id = "mock";
    return m;
  }

 private:
  static std::string grade(const std::string& user) {
    const auto std_pos = user.find("Standard Answer: ");
    const auto stu_pos = user.find("\n\nStudent Answer: ");
    if (std_pos == std::string::npos || stu_pos == std::string::npos) return "<judge>WRONG</judge>";
    const std::string gold = user.substr(std_pos + 17, stu_pos - std_pos - 17);
    const std::string student = user.substr(stu_pos + 18);
    return offtrack::normalize_equal(student, gold) ? "<judge>CORRECT</judge>" : "<judge>WRONG</judge>";
  }

  std::atomic<Mode> mode_;
  std::atomic<long long> calls_{0};
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

inline offtrack::ModelRef mock_model(const std::string& name, const std::string& url) {
  offtrack::ModelRef m;
  m.name = name;
  m.endpoint_url = url;
  m.prompt_template_id = "mock";
  return m;
}

}  // namespace fixtures
