#pragma once

// Answer extraction, the built-in math-equivalence normalizer, and the
// LLM-judge fallback used to label completions CORRECT or WRONG.

#include <algorithm>
#include <cctype>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "offtrack/core.hpp"

namespace offtrack {

// ---------------------------------------------------------------------------
// Extraction

namespace detail {

// Index one past the brace matching text[open] == '{', or npos.
inline std::size_t match_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < text.size(); ++i) {
    if (text[i] == '\\' && i + 1 < text.size() && (text[i + 1] == '{' || text[i + 1] == '}')) {
      ++i;
      continue;
    }
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

// Content of a \boxed occurrence starting at `pos`, if well formed.
inline std::optional<std::string> boxed_at(std::string_view text, std::size_t pos) {
  static constexpr std::string_view kBoxed = "\\boxed";
  std::size_t i = pos + kBoxed.size();
  while (i < text.size() && text[i] == ' ') ++i;
  if (i < text.size() && text[i] == '{') {
    const std::size_t end = match_brace(text, i);
    if (end == std::string_view::npos) return std::nullopt;
    return std::string(text.substr(i + 1, end - i - 2));
  }
  // "\boxed 5": a single bare token.
  if (i == pos + kBoxed.size()) return std::nullopt;
  std::size_t j = i;
  while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && text[j] != '$') ++j;
  if (j == i) return std::nullopt;
  return std::string(text.substr(i, j - i));
}

inline std::vector<std::string> all_boxed(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t pos = text.find("\\boxed"); pos != std::string_view::npos; pos = text.find("\\boxed", pos + 1)) {
    if (auto b = boxed_at(text, pos)) out.push_back(std::move(*b));
  }
  return out;
}

inline std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

inline constexpr std::string_view kAnswerCues[] = {"final answer:", "final answer is", "answer is", "answer:"};

// Expression following an answer cue: rest of the line, without a closing
// period or surrounding dollar signs.
inline std::optional<std::string> cue_expression(std::string_view text, std::size_t after) {
  std::size_t end = text.find('\n', after);
  if (end == std::string_view::npos) end = text.size();
  std::string expr = trim(text.substr(after, end - after));
  while (!expr.empty() && (expr.front() == ':' || expr.front() == ' ')) expr.erase(expr.begin());
  while (!expr.empty() && (expr.back() == '.' || expr.back() == ' ')) expr.pop_back();
  if (expr.size() >= 2 && expr.front() == '$' && expr.back() == '$') {
    expr = trim(std::string_view(expr).substr(1, expr.size() - 2));
    while (!expr.empty() && expr.front() == '$') expr.erase(expr.begin());
    while (!expr.empty() && expr.back() == '$') expr.pop_back();
  }
  if (expr.empty()) return std::nullopt;
  return expr;
}

// All cue expressions in order of appearance.
inline std::vector<std::pair<std::size_t, std::string>> all_cue_expressions(std::string_view text) {
  const std::string lowered = lower_ascii(text);
  std::vector<std::pair<std::size_t, std::string>> out;
  std::size_t pos = 0;
  while (pos < lowered.size()) {
    std::size_t best = std::string::npos, best_len = 0;
    for (auto cue : kAnswerCues) {
      const std::size_t p = lowered.find(cue, pos);
      if (p != std::string::npos && (p < best || (p == best && cue.size() > best_len))) {
        best = p;
        best_len = cue.size();
      }
    }
    if (best == std::string::npos) break;
    if (auto e = cue_expression(text, best + best_len)) out.emplace_back(best, std::move(*e));
    pos = best + best_len;
  }
  return out;
}

}  // namespace detail

// Last \boxed{...} with balanced braces; otherwise the expression after the
// last answer cue; otherwise nothing.
inline std::optional<std::string> extract_answer(std::string_view completion) {
  for (std::size_t pos = completion.rfind("\\boxed"); pos != std::string_view::npos;
       pos = pos == 0 ? std::string_view::npos : completion.rfind("\\boxed", pos - 1)) {
    if (auto b = detail::boxed_at(completion, pos)) return b;
  }
  auto cues = detail::all_cue_expressions(completion);
  if (!cues.empty()) return cues.back().second;
  return std::nullopt;
}

// Every expression a reader could take as a stated answer: all boxed
// contents plus every answer-cue expression.
inline std::vector<std::string> answer_candidates(std::string_view text) {
  std::vector<std::string> out = detail::all_boxed(text);
  for (auto& [pos, expr] : detail::all_cue_expressions(text)) out.push_back(std::move(expr));
  return out;
}

// ---------------------------------------------------------------------------
// Equivalence

namespace detail {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  if (from.empty()) return;
  for (std::size_t p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size())) s.replace(p, from.size(), to);
}

// Replace \cmd{X} by X for wrapper commands.
inline void unwrap_command(std::string& s, std::string_view cmd) {
  for (std::size_t p = s.find(cmd); p != std::string::npos; p = s.find(cmd, p)) {
    std::size_t open = p + cmd.size();
    while (open < s.size() && s[open] == ' ') ++open;
    if (open >= s.size() || s[open] != '{') {
      ++p;
      continue;
    }
    const std::size_t close = match_brace(s, open);
    if (close == std::string::npos) {
      ++p;
      continue;
    }
    s = s.substr(0, p) + s.substr(open + 1, close - open - 2) + s.substr(close);
  }
}

struct Canonical {
  std::string text;
  bool percent = false;
  bool degree = false;
};

inline bool strip_suffix(std::string& s, std::string_view suffix) {
  if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
    s.erase(s.size() - suffix.size());
    return true;
  }
  return false;
}

inline Canonical canonicalize(std::string_view raw) {
  Canonical c;
  std::string s = trim(raw);
  // Math-mode delimiters.
  for (auto [open, close] : {std::pair<std::string_view, std::string_view>{"\\(", "\\)"}, {"\\[", "\\]"}}) {
    if (s.size() >= 4 && s.compare(0, 2, open) == 0 && s.compare(s.size() - 2, 2, close) == 0) s = trim(std::string_view(s).substr(2, s.size() - 4));
  }
  replace_all(s, "$", "");
  if (s.rfind("\\boxed", 0) == 0) {
    if (auto b = boxed_at(s, 0)) s = *b;
  }
  for (std::string_view w : {"\\left", "\\right", "\\displaystyle", "\\!", "\\,", "\\;", "\\:", "\\ ", "~"}) replace_all(s, w, " ");
  for (std::string_view cmd : {"\\text", "\\textbf", "\\textit", "\\mathrm", "\\mathbf", "\\mbox", "\\operatorname"}) unwrap_command(s, cmd);
  replace_all(s, "\\dfrac", "\\frac");
  replace_all(s, "\\tfrac", "\\frac");

  s = trim(s);
  while (!s.empty() && s.back() == '.') s.pop_back();
  s = trim(s);

  // Degree and percent suffixes.
  for (std::string_view d : {"^{\\circ}", "^\\circ", "\\degree", "°"}) {
    if (strip_suffix(s, d)) c.degree = true;
  }
  {
    std::string lowered = lower_ascii(s);
    for (std::string_view d : {" degrees", " degree", "degrees"}) {
      if (lowered.size() > d.size() && lowered.compare(lowered.size() - d.size(), d.size(), d) == 0) {
        s.erase(s.size() - d.size());
        c.degree = true;
        break;
      }
    }
  }
  s = trim(s);
  if (strip_suffix(s, "\\%") || strip_suffix(s, "%")) c.percent = true;

  // Whitespace carries no meaning in the supported grammar.
  std::string compact;
  for (char ch : s)
    if (!std::isspace(static_cast<unsigned char>(ch))) compact.push_back(ch);

  // \sqrt2 -> \sqrt{2}, \frac12 -> \frac{1}{2}
  for (std::size_t p = compact.find("\\sqrt"); p != std::string::npos; p = compact.find("\\sqrt", p + 1)) {
    const std::size_t q = p + 5;
    if (q < compact.size() && std::isalnum(static_cast<unsigned char>(compact[q]))) compact = compact.substr(0, q) + "{" + compact[q] + "}" + compact.substr(q + 1);
  }
  for (std::size_t p = compact.find("\\frac"); p != std::string::npos; p = compact.find("\\frac", p + 1)) {
    const std::size_t q = p + 5;
    if (q + 1 < compact.size() && std::isdigit(static_cast<unsigned char>(compact[q])) && std::isdigit(static_cast<unsigned char>(compact[q + 1])))
      compact = compact.substr(0, q) + "{" + compact[q] + "}{" + compact[q + 1] + "}" + compact.substr(q + 2);
  }

  // "x=5" -> "5" for a single-letter left-hand side.
  if (compact.size() > 2 && std::isalpha(static_cast<unsigned char>(compact[0])) && compact[1] == '=' && compact[2] != '=') compact = compact.substr(2);

  c.text = std::move(compact);
  return c;
}

inline bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); });
}

// Integer or decimal literal with optional sign and thousands separators.
inline std::optional<Rational> parse_decimal(std::string_view s) {
  bool negative = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    negative = s[0] == '-';
    s.remove_prefix(1);
  }
  if (s.empty()) return std::nullopt;
  std::string digits;
  const std::size_t dot = s.find('.');
  std::string_view int_part = s.substr(0, dot);
  std::string_view frac_part = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
  if (dot != std::string_view::npos && frac_part.empty() && int_part.empty()) return std::nullopt;
  if (int_part.find(',') != std::string_view::npos) {
    // Thousands grouping only: 1,234,567
    std::size_t first = int_part.find(',');
    if (first == 0 || first > 3) return std::nullopt;
    for (std::size_t i = first; i < int_part.size(); i += 4) {
      if (int_part[i] != ',' || i + 4 > int_part.size() || !all_digits(int_part.substr(i + 1, 3))) return std::nullopt;
    }
    for (char ch : int_part)
      if (ch != ',') digits.push_back(ch);
    if (!all_digits(digits)) return std::nullopt;
  } else {
    if (!int_part.empty() && !all_digits(int_part)) return std::nullopt;
    digits = std::string(int_part);
  }
  if (!frac_part.empty() && !all_digits(frac_part)) return std::nullopt;
  if (digits.empty() && frac_part.empty()) return std::nullopt;
  BigInt num(digits.empty() ? std::string("0") : digits);
  BigInt den(1);
  for (char ch : frac_part) {
    num = num * 10 + (ch - '0');
    den *= 10;
  }
  Rational r(num, den);
  return negative ? Rational(-r) : r;
}

inline std::optional<Rational> parse_number(std::string_view s) {
  if (auto d = parse_decimal(s)) return d;
  bool negative = false;
  if (!s.empty() && s[0] == '-') {
    negative = true;
    s.remove_prefix(1);
  }
  std::optional<Rational> value;
  if (s.rfind("\\frac{", 0) == 0) {
    const std::size_t num_end = match_brace(s, 5);
    if (num_end == std::string_view::npos || num_end >= s.size() || s[num_end] != '{') return std::nullopt;
    const std::size_t den_end = match_brace(s, num_end);
    if (den_end != s.size()) return std::nullopt;
    auto n = parse_decimal(s.substr(6, num_end - 7));
    auto d = parse_decimal(s.substr(num_end + 1, den_end - num_end - 2));
    if (!n || !d || *d == 0) return std::nullopt;
    value = *n / *d;
  } else if (const std::size_t slash = s.find('/'); slash != std::string_view::npos && s.find('/', slash + 1) == std::string_view::npos) {
    auto n = parse_decimal(s.substr(0, slash));
    auto d = parse_decimal(s.substr(slash + 1));
    if (!n || !d || *d == 0) return std::nullopt;
    value = *n / *d;
  }
  if (!value) return std::nullopt;
  return negative ? Rational(-*value) : *value;
}

struct Scalar {
  std::string text;
  std::optional<Rational> value;
  std::string unit;
  bool percent = false;
};

inline Scalar make_scalar(std::string_view text, bool percent) {
  Scalar sc{std::string(text), std::nullopt, {}, percent};
  sc.value = parse_number(text);
  if (!sc.value) {
    // Number followed by an alphabetic unit word of two or more letters.
    std::size_t i = text.size();
    while (i > 0 && std::isalpha(static_cast<unsigned char>(text[i - 1]))) --i;
    if (i > 0 && text.size() - i >= 2) {
      if (auto v = parse_number(text.substr(0, i))) {
        sc.value = v;
        sc.unit = lower_ascii(text.substr(i));
      }
    }
  }
  return sc;
}

inline bool scalar_equal(const Scalar& a, const Scalar& b) {
  if (a.value && b.value) {
    if (!a.unit.empty() && !b.unit.empty() && a.unit != b.unit) return false;
    if (*a.value == *b.value) return true;
    // A percent reading may also stand for its fraction.
    if (a.percent && *a.value / 100 == *b.value) return true;
    if (b.percent && *b.value / 100 == *a.value) return true;
    return false;
  }
  if (a.value || b.value) return false;
  return a.text == b.text;
}

// Split at commas that are not nested in (), [], {}.
inline std::vector<std::string> split_top_level(std::string_view s) {
  std::vector<std::string> parts;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char ch = s[i];
    if (ch == '(' || ch == '[' || ch == '{') ++depth;
    if (ch == ')' || ch == ']' || ch == '}') --depth;
    if (ch == ',' && depth == 0) {
      parts.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  parts.emplace_back(s.substr(start));
  return parts;
}

enum class Shape { kScalar, kTuple, kSet, kList };

struct Parsed {
  Shape shape = Shape::kScalar;
  std::vector<std::string> elements;
};

inline bool wrapped_by(std::string_view s, std::string_view open, std::string_view close) {
  if (s.size() < open.size() + close.size() || s.substr(0, open.size()) != open || s.substr(s.size() - close.size()) != close) return false;
  // The opening bracket must close at the very end.
  int depth = 0;
  const std::string_view inner = s.substr(0, s.size() - close.size());
  for (std::size_t i = 0; i < inner.size(); ++i) {
    const char ch = inner[i];
    if (ch == '(' || ch == '[' || ch == '{') ++depth;
    if (ch == ')' || ch == ']' || ch == '}') {
      if (--depth == 0 && i + 1 < inner.size()) return false;
    }
  }
  return true;
}

inline Parsed parse_shape(const std::string& text) {
  Parsed p;
  if (parse_decimal(text)) return p;  // "1,000"
  if (wrapped_by(text, "\\{", "\\}")) {
    p.shape = Shape::kSet;
    p.elements = split_top_level(std::string_view(text).substr(2, text.size() - 4));
  } else if (wrapped_by(text, "{", "}")) {
    p.shape = Shape::kSet;
    p.elements = split_top_level(std::string_view(text).substr(1, text.size() - 2));
  } else if (wrapped_by(text, "(", ")") && split_top_level(std::string_view(text).substr(1, text.size() - 2)).size() > 1) {
    p.shape = Shape::kTuple;
    p.elements = split_top_level(std::string_view(text).substr(1, text.size() - 2));
  } else if (text.front() != '[' && text.front() != '(' && split_top_level(text).size() > 1) {
    p.shape = Shape::kList;
    p.elements = split_top_level(text);
  }
  return p;
}

bool equivalent(std::string_view a, std::string_view b, int depth);

inline bool elements_equal(const std::vector<std::string>& a, const std::vector<std::string>& b, bool ordered, int depth) {
  if (a.size() != b.size()) return false;
  if (ordered) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!equivalent(a[i], b[i], depth + 1)) return false;
    return true;
  }
  std::vector<bool> used(b.size(), false);
  for (const auto& x : a) {
    bool found = false;
    for (std::size_t j = 0; j < b.size() && !found; ++j) {
      if (!used[j] && equivalent(x, b[j], depth + 1)) used[j] = found = true;
    }
    if (!found) return false;
  }
  return true;
}

inline bool equivalent(std::string_view a, std::string_view b, int depth) {
  const Canonical ca = canonicalize(a), cb = canonicalize(b);
  if (ca.text.empty() || cb.text.empty()) return ca.text == cb.text;
  if (ca.text == cb.text && ca.percent == cb.percent) return true;
  if (depth < 4) {
    const Parsed pa = parse_shape(ca.text), pb = parse_shape(cb.text);
    if (pa.shape != Shape::kScalar || pb.shape != Shape::kScalar) {
      if (pa.shape != pb.shape) return false;
      return elements_equal(pa.elements, pb.elements, pa.shape != Shape::kSet, depth);
    }
  }
  return scalar_equal(make_scalar(ca.text, ca.percent), make_scalar(cb.text, cb.percent));
}

}  // namespace detail

// Bounded math equivalence: LaTeX wrappers, exact rational/decimal values,
// ordered tuples vs unordered sets, percent and degree suffixes. Anything
// outside this grammar falls back to canonical string equality.
inline bool normalize_equal(std::string_view candidate, std::string_view gold) { return detail::equivalent(candidate, gold, 0); }

inline bool contains_equivalent_answer(std::string_view text, std::string_view gold) {
  for (const auto& c : answer_candidates(text))
    if (normalize_equal(c, gold)) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Judge protocol

struct JudgeConfig {
  ModelRef judge_model;
  double temperature = 0.0;
  int max_tokens = 1024;
  bool enabled = false;
};

struct JudgePrompt {
  std::string system;
  std::string user;
};

inline constexpr std::string_view kJudgeSystemPrompt =
    "You are an unbiased examiner who evaluates whether a student's answer to a given question is correct.\n"
    "Your task is to determine if the student's final answer matches the standard answer provided, based solely on correctness and the question's specific requirements.\n"
    "Do not perform any additional calculations or reinterpret the question. Simply compare the student's answer to the standard answer to determine if it satisfies the question's requirements.\n"
    "\n"
    "Focus strictly on:\n"
    "1. Understanding the exact requirement of the question.\n"
    "2. Comparing the student's final answer directly and rigorously to the provided standard answer.\n"
    "3. Your task is not to solve the problem but to determine whether the student's answer is correct based on the question's requirements. Avoid any unnecessary analysis, assumptions, or re-solving the problem.\n"
    "\n"
    "Note:\n"
    "- For intervals/ranges: The student's answer must cover the EXACT SAME range as the standard answer, NOT just any single value or subset within that range;\n"
    "- If the standard answer contains multiple solutions connected by 'or'/'and', all of them must be listed in the student's answer;\n"
    "- If student's response does not mention any answer, it is considered WRONG;\n"
    "- You must be deterministic and rigorous - always declare the answer as either CORRECT or WRONG;\n"
    "- Small rounding differences are permitted if all the derivation steps are correct.\n"
    "\n"
    "Your response must include:\n"
    "### Short Analysis\n"
    "Provide a short and evidence-backed analysis between <analysis> </analysis> tags, in which you should extract the final solution value from the standard answer and the student's answer and judge whether they are the same.\n"
    "\n"
    "### Correctness\n"
    "Based on the analysis, you should report a label CORRECT or WRONG between <judge> </judge> tags (e.g., <judge>CORRECT</judge> or <judge>WRONG</judge>).";

inline JudgePrompt render_judge_prompt(std::string_view problem, std::string_view standard_answer, std::string_view student_answer) {
  JudgePrompt p;
  p.system = std::string(kJudgeSystemPrompt);
  p.user.reserve(problem.size() + standard_answer.size() + student_answer.size() + 64);
  p.user += "Problem: ";
  p.user += problem;
  p.user += "\n\nStandard Answer: ";
  p.user += standard_answer;
  p.user += "\n\nStudent Answer: ";
  p.user += student_answer;
  return p;
}

namespace detail {

inline std::vector<std::string> tag_spans(std::string_view text, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  std::vector<std::string> spans;
  for (std::size_t p = text.find(open); p != std::string_view::npos; p = text.find(open, p + 1)) {
    const std::size_t start = p + open.size();
    const std::size_t end = text.find(close, start);
    if (end == std::string_view::npos) break;
    const std::string_view inner = text.substr(start, end - start);
    // A nested opener means this span is not well formed.
    if (inner.find(open) != std::string_view::npos) continue;
    spans.push_back(trim(inner));
  }
  return spans;
}

}  // namespace detail

inline VerdictLabel parse_judge_reply(std::string_view reply) {
  const auto spans = detail::tag_spans(reply, "judge");
  for (auto it = spans.rbegin(); it != spans.rend(); ++it) {
    if (*it == "CORRECT") return VerdictLabel::kCorrect;
    if (*it == "WRONG") return VerdictLabel::kWrong;
  }
  throw Error(ErrorCode::kJudgeUnparseable, std::string(reply.substr(0, 80)));
}

inline std::optional<std::string> parse_judge_analysis(std::string_view reply) {
  auto spans = detail::tag_spans(reply, "analysis");
  if (spans.empty()) return std::nullopt;
  return spans.back();
}

struct Verdict {
  VerdictLabel label = VerdictLabel::kWrong;
  VerdictSource source = VerdictSource::kNormalizer;
  std::optional<std::string> judge_analysis;
  bool parse_failure = false;
};

struct JudgeRequest {
  JudgePrompt prompt;
  // 0 for the first call, 1 for the single retry after an unparseable reply.
  int attempt = 0;
};

// Returns the judge's raw reply; throws Error(kEndpointError) when the judge
// endpoint cannot be reached.
using JudgeFn = std::function<std::string(const JudgeRequest&)>;

// What the judge sees as the student's answer: the extracted answer, or the
// tail of the completion when nothing could be extracted.
inline std::string student_answer_for_judge(const CompletionSample& sample) {
  if (sample.extracted_answer) return *sample.extracted_answer;
  constexpr std::size_t kTail = 4000;
  const std::string& t = sample.completion_text;
  return t.size() <= kTail ? t : t.substr(t.size() - kTail);
}

inline Verdict judge_verdict(const JudgePrompt& prompt, const JudgeFn& judge) {
  Verdict v;
  v.source = VerdictSource::kJudge;
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string reply;
    try {
      reply = judge(JudgeRequest{prompt, attempt});
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kEndpointError || e.code() == ErrorCode::kEndpointUnavailable)
        throw Error(ErrorCode::kJudgeUnavailable, e.detail());
      throw;
    }
    try {
      v.label = parse_judge_reply(reply);
      v.judge_analysis = parse_judge_analysis(reply);
      return v;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kJudgeUnparseable) throw;
    }
  }
  v.label = VerdictLabel::kWrong;
  v.parse_failure = true;
  return v;
}

// Normalizer first; the judge only ever sees normalizer-WRONG samples, so
// enabling it can flip WRONG to CORRECT but never the reverse.
inline Verdict verdict_pipeline(const CompletionSample& sample, std::string_view problem, std::string_view gold,
                                const JudgeConfig& judge_config, const JudgeFn& judge) {
  const auto extracted = sample.extracted_answer ? sample.extracted_answer : extract_answer(sample.completion_text);
  if (extracted && !extracted->empty() && normalize_equal(*extracted, gold)) return Verdict{VerdictLabel::kCorrect, VerdictSource::kNormalizer, {}, false};
  if (!judge_config.enabled || !judge) return Verdict{VerdictLabel::kWrong, VerdictSource::kNormalizer, {}, false};
  CompletionSample with_answer = sample;
  with_answer.extracted_answer = extracted;
  return judge_verdict(render_judge_prompt(problem, gold, student_answer_for_judge(with_answer)), judge);
}

}  // namespace offtrack
