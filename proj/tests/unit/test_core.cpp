#include <catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "offtrack/core.hpp"
#include "support/fixtures.hpp"

using namespace offtrack;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an offtrack::Error");
  return ErrorCode::kInvalidArgument;
}

RunManifest sample_manifest() {
  RunManifest m;
  m.run_id = "r1";
  m.main_model = fixtures::mock_model("a", "http://127.0.0.1:9");
  m.evaluated_models = {m.main_model};
  m.question_set = "fixture";
  m.created_at = "2026-01-01T00:00:00Z";
  m.seed = 7;
  m.spec_grid = {SteerSpec{0.0, 0.2, false}, SteerSpec{0.4, 0.2, false}};
  return m;
}

}  // namespace

TEST_CASE("question set rejects duplicates and empty fields") {
  QuestionSet set("s", {});
  set.add({"a", Benchmark::kAime24, "text", "1"});
  CHECK(code_of([&] { set.add({"a", Benchmark::kAime24, "other", "2"}); }) == ErrorCode::kDuplicateId);
  CHECK(code_of([&] { set.add({"b", Benchmark::kAime24, "", "2"}); }) == ErrorCode::kMalformedRecord);
  CHECK(code_of([&] { set.add({"c", Benchmark::kAime24, "t", ""}); }) == ErrorCode::kMalformedRecord);
  CHECK(set.size() == 1);
  CHECK(set.at("a").gold_answer == "1");
}

TEST_CASE("enum names round-trip and reject unknown values") {
  for (auto b : {Benchmark::kAime24, Benchmark::kAime25, Benchmark::kMath500, Benchmark::kMinerva, Benchmark::kOlympiad, Benchmark::kCustom})
    CHECK(parse_benchmark(to_string(b)) == b);
  CHECK(parse_verdict("CORRECT") == VerdictLabel::kCorrect);
  CHECK(code_of([] { parse_verdict("MAYBE"); }) == ErrorCode::kMalformedRecord);
  CHECK(code_of([] { parse_item_kind("other"); }) == ErrorCode::kMalformedRecord);
}

TEST_CASE("records round-trip through JSONL") {
  fixtures::TempDir dir("core");
  const auto qs = fixtures::make_questions(7);
  const fs::path p = dir / "q.jsonl";
  CHECK(replace_records(p, qs) == 7);
  CHECK(read_records<Question>(p) == qs);

  SteeredItem it;
  it.item_id = "abc";
  it.kind = ItemKind::kRecoverability;
  it.question_id = "q1";
  it.og_source = TrajectoryRef{"m", "q1", 0};
  it.steer_source = TrajectoryRef{"m", "q2", 3};
  it.steer_origin_question_id = "q2";
  it.spec = SteerSpec{0.4, 0.2, true};
  it.prefix_text = "hello\n\nworld";
  const SteeredItem back = json(it).get<SteeredItem>();
  CHECK(back == it);
}

TEST_CASE("malformed records report file and line") {
  fixtures::TempDir dir("core");
  const fs::path p = dir / "bad.jsonl";
  {
    std::ofstream out(p);
    out << json(fixtures::make_questions(1)[0]).dump() << "\n{not json}\n";
  }
  try {
    read_records<Question>(p);
    FAIL("expected MALFORMED_RECORD");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMalformedRecord);
    CHECK(e.detail().find("bad.jsonl:2") != std::string::npos);
  }
}

TEST_CASE("item invariants are enforced on load") {
  SteeredItem g;
  g.item_id = "x";
  g.kind = ItemKind::kGuidability;
  g.question_id = "q1";
  g.steer_source = TrajectoryRef{"guide", "q1", 0};
  g.steer_origin_question_id = "q1";
  g.spec = SteerSpec{0.0, 0.4, false};
  g.prefix_text = "p";
  json j = g;
  j["og_source"] = json(TrajectoryRef{"m", "q1", 0});
  CHECK(code_of([&] { j.get<SteeredItem>(); }) == ErrorCode::kMalformedRecord);

  SteeredItem r = g;
  r.kind = ItemKind::kRecoverability;
  r.og_source = TrajectoryRef{"m", "q1", 0};
  json jr = r;  // distractor drawn from the same question
  CHECK(code_of([&] { jr.get<SteeredItem>(); }) == ErrorCode::kMalformedRecord);
}

TEST_CASE("manifest hash ignores run id, timestamp and notes") {
  RunManifest a = sample_manifest();
  RunManifest b = a;
  b.run_id = "r2";
  b.created_at = "2027-05-05T00:00:00Z";
  b.note("tokenizer fallback");
  CHECK(manifest_hash(a) == manifest_hash(b));
  b.seed = 8;
  CHECK(manifest_hash(a) != manifest_hash(b));
  CHECK(json(a).get<RunManifest>() == a);
}

TEST_CASE("manifest load checks referenced files") {
  fixtures::TempDir dir("core");
  RunManifest m = sample_manifest();
  m.questions_path = (dir / "missing.jsonl").string();
  save_manifest(dir / "manifest.json", m);
  CHECK(code_of([&] { load_manifest(dir / "manifest.json"); }) == ErrorCode::kIoFailure);
  fixtures::write_questions(dir / "missing.jsonl", 2);
  CHECK(load_manifest(dir / "manifest.json") == m);
}

TEST_CASE("run layout paths") {
  RunLayout l("runs", "r1");
  CHECK(l.manifest() == fs::path("runs/r1/manifest.json"));
  CHECK(l.item_store(ItemKind::kRecoverability, "shared", "m") == fs::path("runs/r1/items/recoverability.shared.m.jsonl"));
  CHECK(l.sample_store(ItemKind::kGuidability, "individual", "m") == fs::path("runs/r1/samples/guidability.individual.m.jsonl"));
}

TEST_CASE("model refs require absolute URLs") {
  json j{{"name", "m"}, {"endpoint_url", "localhost:8000"}, {"prompt_template_id", "mock"}, {"tokenizer_mode", "WHITESPACE"}};
  CHECK(code_of([&] { j.get<ModelRef>(); }) == ErrorCode::kMalformedRecord);
  j["endpoint_url"] = "http://localhost:8000";
  CHECK(j.get<ModelRef>().endpoint_url == "http://localhost:8000");
}

TEST_CASE("sampling defaults") {
  const SamplingParams p;
  CHECK(p.temperature == 0.6);
  CHECK(p.top_p == 0.95);
  CHECK(p.max_tokens == 32768);
  CHECK(p.samples_per_item == 8);
}

TEST_CASE("content ids and seeded streams are stable") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(content_id("abc") == "ba7816bf8f01cfea");
  CHECK(derive_seed(1, "x") == derive_seed(1, "x"));
  CHECK(derive_seed(1, "x") != derive_seed(1, "y"));

  DeterministicRng a(42), b(42);
  std::vector<int> va{1, 2, 3, 4, 5, 6, 7, 8}, vb = va;
  a.shuffle(va);
  b.shuffle(vb);
  CHECK(va == vb);
  CHECK(std::multiset<int>(va.begin(), va.end()) == std::multiset<int>{1, 2, 3, 4, 5, 6, 7, 8});

  DeterministicRng c(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[static_cast<std::size_t>(c.below(5))];
  for (int n : counts) CHECK(std::abs(n - 10000) < 500);
}
