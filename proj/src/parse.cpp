// SPDX-License-Identifier: Apache-2.0
#include "kdrl/parse.hpp"

#include <cctype>
#include <cmath>
#include <optional>
#include <vector>

namespace kdrl::teacher {

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Characters allowed between an action name and its number.
bool is_separator(char c) {
  switch (c) {
    case ' ':
    case '\t':
    case ':':
    case '=':
    case '*':
    case '_':
    case '`':
    case '"':
    case '\'':
    case '|':
    case '>':
    case '-':
    case '(':
    case ',':
    case '~':
      return true;
    default:
      return false;
  }
}

// Parses a non-negative decimal (or a directly signed one) at `pos`, with an optional
// exponent and percent sign.
std::optional<double> read_number(const std::string& s, std::size_t pos) {
  bool negative = false;
  if (pos < s.size() && s[pos] == '-') {
    negative = true;
    ++pos;
  }
  const std::size_t start = pos;
  while (pos < s.size() && is_digit(s[pos])) ++pos;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    while (pos < s.size() && is_digit(s[pos])) ++pos;
  }
  if (pos == start || (pos == start + 1 && s[start] == '.')) return std::nullopt;
  std::string digits = s.substr(start, pos - start);
  if (pos + 1 < s.size() && s[pos] == 'e' && (is_digit(s[pos + 1]) || s[pos + 1] == '-' || s[pos + 1] == '+')) {
    std::size_t e = pos + 1;
    if (s[e] == '-' || s[e] == '+') ++e;
    if (e < s.size() && is_digit(s[e])) {
      while (e < s.size() && is_digit(s[e])) ++e;
      digits += s.substr(pos, e - pos);
      pos = e;
    }
  }
  double value = 0.0;
  try {
    value = std::stod(digits);
  } catch (...) {
    return std::nullopt;
  }
  std::size_t q = pos;
  while (q < s.size() && s[q] == ' ') ++q;
  if (q < s.size() && s[q] == '%') value /= 100.0;
  if (!std::isfinite(value)) return std::nullopt;
  return negative ? -value : value;
}

std::optional<double> value_for(const std::string& text, const std::string& name) {
  if (name.empty()) return std::nullopt;
  std::size_t from = 0;
  while (true) {
    const std::size_t at = text.find(name, from);
    if (at == std::string::npos) return std::nullopt;
    from = at + 1;
    const std::size_t end = at + name.size();
    if (at > 0 && is_word_char(text[at - 1])) continue;
    if (end < text.size() && is_word_char(text[end])) continue;
    std::size_t pos = end;
    int skipped = 0;
    while (pos < text.size() && skipped < 12 && is_separator(text[pos])) {
      if (text[pos] == '-' && pos + 1 < text.size() && (is_digit(text[pos + 1]) || text[pos + 1] == '.')) break;
      ++pos;
      ++skipped;
    }
    if (auto v = read_number(text, pos)) return v;
  }
}

}  // namespace

ParseResult parse_probabilities(std::string_view response, std::span<const std::string> action_names,
                                std::atomic<std::size_t>* failure_counter) noexcept {
  ParseResult result;
  const std::size_t n = action_names.size();
  auto fail = [&] {
    result.distribution = n ? ActionDistribution::uniform(n) : ActionDistribution{};
    result.failed = true;
    if (failure_counter) failure_counter->fetch_add(1);
    return result;
  };
  if (n == 0) return fail();
  try {
    const std::string text = lower(response);
    std::vector<double> values(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (auto v = value_for(text, lower(action_names[i]))) {
        ++result.matched;
        values[i] = std::max(0.0, *v);
        total += values[i];
      }
    }
    if (result.matched == 0 || !(total > 0.0) || !std::isfinite(total)) return fail();
    for (double& v : values) v /= total;
    result.distribution.probs = std::move(values);
    return result;
  } catch (...) {
    result.matched = 0;
    return fail();
  }
}

}  // namespace kdrl::teacher
