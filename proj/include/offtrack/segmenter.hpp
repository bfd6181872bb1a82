#pragma once

// Token/paragraph segmentation and the prefix-truncation rules used to cut
// original and steering trajectories.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "offtrack/core.hpp"

namespace offtrack {

struct TokenUnit {
  std::string_view text;
  std::size_t byte_offset = 0;

  std::size_t end() const { return byte_offset + text.size(); }
};

// Units view into the source text; the TokenSeq must not outlive it.
struct TokenSeq {
  std::vector<TokenUnit> units;
  TokenizerMode mode = TokenizerMode::kWhitespace;
  // ENDPOINT was requested but whitespace segmentation was used.
  bool fell_back = false;

  std::size_t size() const { return units.size(); }
};

// Returns the token strings for `text` as produced by a serving endpoint, or
// nullopt when the endpoint has no tokenize route.
using EndpointTokenizer = std::function<std::optional<std::vector<std::string>>(std::string_view)>;

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline TokenSeq segment_whitespace(std::string_view text) {
  TokenSeq seq;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_ascii_space(text[i])) ++i;
    if (i == text.size()) break;
    const std::size_t start = i;
    while (i < text.size() && !is_ascii_space(text[i])) ++i;
    seq.units.push_back({text.substr(start, i - start), start});
  }
  return seq;
}

struct SegmentOptions {
  const EndpointTokenizer* tokenizer = nullptr;
  bool allow_fallback = true;
};

// ENDPOINT tokens are accepted only when they concatenate back to the exact
// source text; otherwise the whitespace splitter is used and `fell_back` set.
inline TokenSeq segment(std::string_view text, TokenizerMode mode, SegmentOptions opts = {}) {
  if (mode == TokenizerMode::kWhitespace) return segment_whitespace(text);

  std::optional<std::vector<std::string>> pieces;
  if (opts.tokenizer && *opts.tokenizer) pieces = (*opts.tokenizer)(text);
  if (pieces) {
    TokenSeq seq;
    seq.mode = TokenizerMode::kEndpoint;
    std::size_t offset = 0;
    bool ok = true;
    for (const auto& p : *pieces) {
      if (p.empty()) continue;
      if (text.substr(offset, p.size()) != p) {
        ok = false;
        break;
      }
      seq.units.push_back({text.substr(offset, p.size()), offset});
      offset += p.size();
    }
    if (ok && offset == text.size()) return seq;
  }
  if (!opts.allow_fallback) throw Error(ErrorCode::kEndpointUnavailable, "no usable tokenize route");
  TokenSeq seq = segment_whitespace(text);
  seq.fell_back = true;
  return seq;
}

// floor(fraction * count); the epsilon keeps grid values such as 0.6 * 5
// from landing one below the intended integer.
inline std::size_t token_budget(double fraction, std::size_t count) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "fraction outside [0,1]");
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 1e-9));
  return k > count ? count : k;
}

inline std::string prefix_of(std::string_view text, const TokenSeq& seq, double fraction) {
  if (fraction >= 1.0) return std::string(text);
  const std::size_t k = token_budget(fraction, seq.size());
  if (k == 0) return {};
  if (k == seq.size()) return std::string(text);
  return std::string(text.substr(0, seq.units[k - 1].end()));
}

inline std::string truncate_fraction(std::string_view text, double fraction, TokenizerMode mode = TokenizerMode::kWhitespace,
                                     SegmentOptions opts = {}) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "fraction outside [0,1]");
  const TokenSeq seq = segment(text, mode, opts);
  return prefix_of(text, seq, fraction);
}

// Text up to and including the first blank-line separator: a newline,
// optional spaces or tabs, and a second newline.
inline std::string first_paragraph(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '\n') continue;
    std::size_t j = i + 1;
    while (j < text.size() && (text[j] == ' ' || text[j] == '\t' || text[j] == '\r')) ++j;
    if (j < text.size() && text[j] == '\n') return std::string(text.substr(0, j + 1));
  }
  return std::string(text);
}

inline bool ends_with_blank_line(std::string_view text) {
  std::size_t i = text.size();
  while (i > 0 && (text[i - 1] == ' ' || text[i - 1] == '\t' || text[i - 1] == '\r')) --i;
  if (i == 0 || text[i - 1] != '\n') return false;
  --i;
  while (i > 0 && (text[i - 1] == ' ' || text[i - 1] == '\t' || text[i - 1] == '\r')) --i;
  return i > 0 && text[i - 1] == '\n';
}

inline constexpr std::string_view kSpliceSeparator = "\n\n";

inline std::string splice(std::string_view og_prefix, std::string_view steer_prefix) {
  std::string out(og_prefix);
  if (!og_prefix.empty() && !ends_with_blank_line(og_prefix)) out += kSpliceSeparator;
  out += steer_prefix;
  return out;
}

}  // namespace offtrack
