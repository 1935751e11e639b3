#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gqa/corpus.hpp"
#include "gqa/planner.hpp"

namespace gqa {

enum class ModelKind { pretrained, aligned };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

/// Subject adjective used in multiple-choice system prompts.
enum class Domain { medical, mathematical };

std::string_view to_string(Domain domain);
Domain parse_domain(std::string_view name);

enum class Role { system, user, assistant };

std::string_view to_string(Role role);

struct ChatMessage {
  Role role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct TemplateProfile {
  std::string system_prompt;
  std::string user_prefix;
  std::string assistant_prefix;
  TaskKind task = TaskKind::multiple_choice;
  ModelKind model_kind = ModelKind::aligned;
  // Chat templates without a system role get the system prompt folded into
  // the first user message.
  bool system_role = true;
  // Separator between few-shot blocks in flat pre-trained prompts.
  std::string shot_separator = "\n\n";
};

TemplateProfile default_profile(TaskKind task, ModelKind model_kind,
                                Domain domain = Domain::medical);

struct RenderedPrompt {
  ModelKind model_kind = ModelKind::aligned;
  std::vector<ChatMessage> messages;  // aligned models
  std::string text;                   // pre-trained models
  std::string answer_anchor;          // e.g. "**Answer1:**"
  bool seeded_open_paren = false;
  int qgs = 1;
  // Markers that end the first-query answer span during extraction.
  std::vector<std::string> next_prefixes;

  /// True when the last aligned message is a pre-filled assistant turn.
  bool ends_with_assistant() const {
    return !messages.empty() && messages.back().role == Role::assistant;
  }
};

/// `**{prefix}{k}:**`, with the numeral dropped when qgs == 1.
std::string numbered_prefix(const std::string& prefix, int index, int qgs);

RenderedPrompt render(const QueryGroup& group, const TemplateProfile& profile,
                      std::span<const QueryRecord> fewshot = {});

/// Canonical byte form: the flat text for pre-trained prompts, the message
/// array as indented JSON for aligned prompts.
std::string dump_prompt(const RenderedPrompt& prompt);

class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FinetunePair {
  std::string input;
  std::string output;
};

/// Supervised fine-tuning text for one record, or a numbered pair for grouped
/// (poisoned) records.
FinetunePair render_finetune_pair(std::span<const QueryRecord> records,
                                  Domain domain = Domain::medical);

}  // namespace gqa
