#include "gqa/extract.hpp"

#include <algorithm>
#include <regex>

#include "text_util.hpp"

namespace gqa {

namespace {

constexpr std::string_view kStatusNames[] = {"clean", "truncated_at_next_prefix", "fallback",
                                             "unparseable"};

bool is_valid(const std::string& label, const std::vector<std::string>& valid) {
  return std::find(valid.begin(), valid.end(), label) != valid.end();
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string_view ltrim(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && is_space(s[i])) ++i;
  return s.substr(i);
}

enum class Rule { none, leading, answer_is, standalone };

std::optional<std::string> leading_label(std::string_view span,
                                         const std::vector<std::string>& valid, bool bare_ok) {
  std::string_view s = ltrim(span);
  if (s.empty()) return std::nullopt;
  std::size_t i = 0;
  bool open = false;
  if (s[0] == '(') {
    open = true;
    i = 1;
  }
  if (i >= s.size() || !std::isupper(static_cast<unsigned char>(s[i]))) return std::nullopt;
  std::string label(1, s[i]);
  const bool closed = i + 1 < s.size() && s[i + 1] == ')';
  const bool bare = !open && (i + 1 == s.size() || !is_alnum(s[i + 1]));
  if ((closed || (bare_ok && bare)) && is_valid(label, valid)) return label;
  return std::nullopt;
}

std::optional<std::string> answer_is_label(std::string_view span,
                                           const std::vector<std::string>& valid) {
  static const std::regex re(R"((?:[Tt]he )?[Aa]nswer is:?\s*\(([A-Z])\))");
  std::optional<std::string> found;
  const std::string s(span);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    std::string label = (*it)[1].str();
    if (is_valid(label, valid)) found = label;
  }
  return found;
}

std::optional<std::string> standalone_label(std::string_view s,
                                            const std::vector<std::string>& valid) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isupper(static_cast<unsigned char>(s[i]))) continue;
    const bool left = i == 0 || !is_alnum(s[i - 1]);
    const bool right = i + 1 == s.size() || !is_alnum(s[i + 1]);
    if (left && right) {
      std::string label(1, s[i]);
      if (is_valid(label, valid)) return label;
    }
  }
  return std::nullopt;
}

std::pair<std::optional<std::string>, Rule> parse_with_rule(
    std::string_view span, const std::vector<std::string>& valid, bool bare_leading,
    bool answer_line_first) {
  if (answer_line_first)
    if (auto l = answer_is_label(span, valid)) return {l, Rule::answer_is};
  if (auto l = leading_label(span, valid, bare_leading)) return {l, Rule::leading};
  if (!answer_line_first)
    if (auto l = answer_is_label(span, valid)) return {l, Rule::answer_is};
  if (auto l = standalone_label(span, valid)) return {l, Rule::standalone};
  return {std::nullopt, Rule::none};
}

// Drops a restated prefix such as "**English1:**" at the start of a span.
std::string strip_restated_prefix(std::string s) {
  static const std::regex re(R"(^\s*\*\*[A-Za-z]+[0-9]*:\*\*[ \t]*)");
  return std::regex_replace(s, re, "", std::regex_constants::format_first_only);
}

}  // namespace

std::string_view to_string(ExtractionStatus status) {
  return kStatusNames[static_cast<int>(status)];
}

ExtractionStatus parse_extraction_status(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kStatusNames); ++i)
    if (kStatusNames[i] == name) return static_cast<ExtractionStatus>(i);
  return ExtractionStatus::unparseable;
}

std::optional<std::string> parse_option(std::string_view span,
                                        const std::vector<std::string>& valid_labels) {
  return parse_with_rule(span, valid_labels, false, false).first;
}

ExtractedAnswer extract_first(std::string_view raw, std::string_view anchor,
                              const std::vector<std::string>& next_prefixes, TaskKind kind,
                              bool seeded_open_paren, const std::vector<std::string>& valid_labels) {
  ExtractedAnswer out;
  out.kind = kind;

  std::size_t start = 0;
  const bool echoed = !anchor.empty() && raw.find(anchor) != std::string_view::npos;
  if (echoed) start = raw.find(anchor) + anchor.size();
  std::string_view rest = raw.substr(start);

  std::size_t cut = rest.size();
  for (const auto& p : next_prefixes) {
    if (p.empty()) continue;
    std::size_t at = rest.find(p);
    if (at != std::string_view::npos) cut = std::min(cut, at);
  }
  const bool truncated = cut < rest.size();
  const std::string_view span = rest.substr(0, cut);

  switch (kind) {
    case TaskKind::multiple_choice:
    case TaskKind::math_cot: {
      // With a seeded "(" the model's first character is the label itself.
      const bool bare_leading = seeded_open_paren && !echoed;
      const bool cot = kind == TaskKind::math_cot;
      auto [label, rule] = parse_with_rule(span, valid_labels, bare_leading, cot);
      if (!label) return out;
      out.option = label;
      const Rule primary = cot ? Rule::answer_is : Rule::leading;
      out.status = truncated          ? ExtractionStatus::truncated_at_next_prefix
                   : rule == primary ? ExtractionStatus::clean
                                     : ExtractionStatus::fallback;
      return out;
    }
    case TaskKind::translation: {
      std::string text = trim(strip_restated_prefix(std::string(span)));
      if (text.empty()) return out;
      out.translation = std::move(text);
      break;
    }
    case TaskKind::code_completion: {
      std::string code(span);
      // Keep indentation of the first code line; drop only a blank lead-in line.
      std::size_t nl = code.find('\n');
      if (nl != std::string::npos && trim(code.substr(0, nl)).empty()) code.erase(0, nl + 1);
      if (trim(code).empty()) return out;
      while (!code.empty() && is_space(code.back())) code.pop_back();
      out.completion_code = code + "\n";
      break;
    }
  }
  out.status = truncated ? ExtractionStatus::truncated_at_next_prefix : ExtractionStatus::clean;
  return out;
}

namespace {

// Interior of the first ``` fence, if any.
std::optional<std::string> fenced_block(std::string_view s) {
  std::size_t open = s.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  std::size_t body = s.find('\n', open);
  if (body == std::string_view::npos) return std::nullopt;
  ++body;
  std::size_t close = s.find("```", body);
  std::string_view inner = s.substr(body, close == std::string_view::npos ? s.npos : close - body);
  return std::string(inner);
}

// Offset of the last `def` line of the stub and its "def name(" head.
std::optional<std::pair<std::size_t, std::string>> stub_signature(std::string_view stub) {
  static const std::regex re(R"((^|\n)(def\s+[A-Za-z_][A-Za-z_0-9]*\s*\())");
  const std::string s(stub);
  std::optional<std::pair<std::size_t, std::string>> found;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    std::size_t at = static_cast<std::size_t>(it->position(2));
    found = std::make_pair(at, (*it)[2].str());
  }
  return found;
}

std::string normalize_head(std::string head) {
  head.erase(std::remove_if(head.begin(), head.end(), [](char c) { return is_space(c); }),
             head.end());
  return head;
}

}  // namespace

std::string extract_code(std::string_view span, std::string_view stub) {
  if (trim(span).empty()) return "";
  auto fence = fenced_block(span);
  std::string code = fence.value_or(std::string(span));
  if (trim(code).empty()) return "";

  if (auto sig = stub_signature(stub)) {
    static const std::regex def_re(R"((^|\n)[ \t]*(def\s+[A-Za-z_][A-Za-z_0-9]*\s*\())");
    const std::string want = normalize_head(sig->second);
    for (auto it = std::sregex_iterator(code.begin(), code.end(), def_re);
         it != std::sregex_iterator(); ++it) {
      if (normalize_head((*it)[2].str()) == want) {
        // The model restated the function: keep the stub's preamble only.
        // Unfenced prose before the restated def is dropped.
        std::string program(stub.substr(0, sig->first));
        if (fence) {
          program += code;
        } else {
          const auto at = static_cast<std::size_t>(it->position(0)) + (*it)[1].length();
          program += code.substr(at);
        }
        if (program.back() != '\n') program += '\n';
        return program;
      }
    }
  }
  std::string program(stub);
  if (!program.empty() && program.back() != '\n') program += '\n';
  program += code;
  if (program.back() != '\n') program += '\n';
  return program;
}

}  // namespace gqa
