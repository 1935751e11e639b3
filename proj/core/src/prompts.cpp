#include "gqa/prompts.hpp"

#include <json.hpp>

#include "text_util.hpp"

namespace gqa {

namespace {

constexpr std::string_view kCotSuffix = "Let's think step by step.";
constexpr std::string_view kFinetuneHeader =
    "The following are multiple choice questions (with answers) about ";

}  // namespace

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::aligned ? "aligned" : "pretrained";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "aligned") return ModelKind::aligned;
  if (name == "pretrained") return ModelKind::pretrained;
  throw PromptError("unknown model kind '" + std::string(name) + "'");
}

std::string_view to_string(Domain domain) {
  return domain == Domain::medical ? "medical" : "mathematical";
}

Domain parse_domain(std::string_view name) {
  if (name == "medical") return Domain::medical;
  if (name == "mathematical") return Domain::mathematical;
  throw PromptError("unknown domain '" + std::string(name) + "'");
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      break;
  }
  return "assistant";
}

TemplateProfile default_profile(TaskKind task, ModelKind model_kind, Domain domain) {
  TemplateProfile p;
  p.task = task;
  p.model_kind = model_kind;
  const bool aligned = model_kind == ModelKind::aligned;
  const std::string subject(to_string(domain));
  switch (task) {
    case TaskKind::multiple_choice:
      p.system_prompt =
          aligned ? "You are a helpful assistant that answers multiple-choice questions about " +
                        subject + " knowledge."
                  : "The following are multiple-choice questions (with answers) about " + subject +
                        " knowledge.";
      p.user_prefix = "Question";
      p.assistant_prefix = "Answer";
      break;
    case TaskKind::translation:
      p.system_prompt = aligned ? "You are an expert English translator."
                                : "The following are German texts with their English translations.";
      p.user_prefix = "German";
      p.assistant_prefix = "English";
      break;
    case TaskKind::math_cot:
      if (aligned) {
        p.system_prompt =
            "You are a helpful assistant that answers multiple-choice questions about mathematical "
            "knowledge.";
        p.user_prefix = "Code";
        p.assistant_prefix = "Completion";
      } else {
        p.system_prompt =
            "The following are multiple-choice questions (with answers) about mathematical "
            "knowledge.";
        p.user_prefix = "Question";
        p.assistant_prefix = "Answer";
      }
      break;
    case TaskKind::code_completion:
      p.system_prompt =
          aligned ? "You are a helpful code assistant that complete function code according to "
                    "comments."
                  : "The following are Python functions completed according to their comments.";
      p.user_prefix = "Code";
      p.assistant_prefix = "Completion";
      break;
  }
  return p;
}

std::string numbered_prefix(const std::string& prefix, int index, int qgs) {
  return "**" + prefix + (qgs > 1 ? std::to_string(index) : std::string()) + ":**";
}

namespace {

// Context line (if any), the prefixed query, the CoT cue, then options.
std::string query_block(const QueryRecord& r, const TemplateProfile& p, int index, int qgs) {
  std::string out;
  if (!r.context.empty()) {
    out += r.context;
    out += '\n';
  }
  out += numbered_prefix(p.user_prefix, index, qgs);
  out += ' ';
  out += r.prompt_body;
  if (p.task == TaskKind::math_cot) {
    out += '\n';
    out += kCotSuffix;
  }
  for (const auto& o : r.options) {
    out += "\n(" + o.label + ") " + o.text;
  }
  return out;
}

// What a worked example answers with after the assistant prefix.
std::string shot_answer(const QueryRecord& r, TaskKind task) {
  switch (task) {
    case TaskKind::multiple_choice: {
      const Option* o = r.find_option(r.gold);
      return "(" + r.gold + ")" + (o ? " " + o->text : std::string());
    }
    case TaskKind::translation:
      return r.gold;
    case TaskKind::math_cot:
      if (r.explanation) return *r.explanation;
      return "The answer is (" + r.gold + ").";
    case TaskKind::code_completion: {
      std::string code = r.gold;
      while (!code.empty() && (code.back() == '\n' || code.back() == ' ')) code.pop_back();
      return "\n" + code;
    }
  }
  return r.gold;
}

std::string answer_line(const std::string& prefix, const std::string& answer) {
  if (!answer.empty() && answer.front() == '\n') return prefix + answer;
  return prefix + " " + answer;
}

}  // namespace

RenderedPrompt render(const QueryGroup& group, const TemplateProfile& profile,
                      std::span<const QueryRecord> fewshot) {
  RenderedPrompt out;
  out.model_kind = profile.model_kind;
  out.qgs = group.qgs();
  out.answer_anchor = numbered_prefix(profile.assistant_prefix, 1, out.qgs);
  out.seeded_open_paren = profile.task == TaskKind::multiple_choice;
  out.next_prefixes = {"**" + profile.user_prefix, "**" + profile.assistant_prefix};

  std::vector<const QueryRecord*> queries;
  queries.push_back(group.first.get());
  if (group.additional)
    for (const auto& r : *group.additional) queries.push_back(&r);

  std::vector<std::string> blocks;
  for (std::size_t i = 0; i < queries.size(); ++i)
    blocks.push_back(query_block(*queries[i], profile, static_cast<int>(i + 1), out.qgs));
  const std::string queries_text = join(blocks, "\n");

  std::string tail = out.answer_anchor;
  if (out.seeded_open_paren) tail += " (";

  // Worked examples are single-query exchanges numbered like the first query.
  auto shot_query = [&](const QueryRecord& r) { return query_block(r, profile, 1, out.qgs); };
  auto shot_reply = [&](const QueryRecord& r) {
    return answer_line(out.answer_anchor, shot_answer(r, profile.task));
  };

  if (profile.model_kind == ModelKind::aligned) {
    if (profile.system_role) out.messages.push_back({Role::system, profile.system_prompt});
    for (const auto& shot : fewshot) {
      out.messages.push_back({Role::user, shot_query(shot)});
      out.messages.push_back({Role::assistant, shot_reply(shot)});
    }
    out.messages.push_back({Role::user, queries_text});
    out.messages.push_back({Role::assistant, tail});
    if (!profile.system_role) {
      for (auto& m : out.messages) {
        if (m.role == Role::user) {
          m.content = profile.system_prompt + "\n" + m.content;
          break;
        }
      }
    }
  } else {
    std::string text = profile.system_prompt;
    text += '\n';
    for (const auto& shot : fewshot) {
      text += shot_query(shot);
      text += '\n';
      text += shot_reply(shot);
      text += profile.shot_separator;
    }
    text += queries_text;
    text += '\n';
    text += tail;
    out.text = std::move(text);
  }
  return out;
}

std::string dump_prompt(const RenderedPrompt& prompt) {
  if (prompt.model_kind == ModelKind::pretrained) return prompt.text;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& m : prompt.messages)
    arr.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  return arr.dump(2) + "\n";
}

FinetunePair render_finetune_pair(std::span<const QueryRecord> records, Domain domain) {
  if (records.empty() || records.size() > 2)
    throw PromptError("fine-tune rendering takes one or two records");
  for (const auto& r : records)
    if (!has_options(r.task))
      throw PromptError("record '" + r.id + "' is not a multiple-choice question");

  const int n = static_cast<int>(records.size());
  FinetunePair out;
  out.input = std::string(kFinetuneHeader) + std::string(to_string(domain)) + " knowledge.";
  std::vector<std::string> answers;
  for (int i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    out.input += '\n';
    if (!r.context.empty()) out.input += r.context + "\n";
    out.input += numbered_prefix("Question", i + 1, n) + " " + r.prompt_body;
    for (const auto& o : r.options) out.input += "\n(" + o.label + ") " + o.text;

    std::string a = numbered_prefix("Answer", i + 1, n) + " (" + r.gold + ")";
    if (r.explanation && !trim(*r.explanation).empty()) a += "\nExplanation: " + *r.explanation;
    answers.push_back(std::move(a));
  }
  out.output = join(answers, "\n");
  return out;
}

}  // namespace gqa
