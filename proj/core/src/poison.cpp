#include "gqa/poison.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

#include "gqa/rng.hpp"

namespace gqa {

std::size_t poison_sample_size(std::size_t train_size, double sample_fraction) {
  // Rounded first so 0.01 * 1000 does not become 11 through float error.
  const double raw = sample_fraction * static_cast<double>(train_size);
  const double snapped = std::round(raw * 1e9) / 1e9;
  return static_cast<std::size_t>(std::ceil(snapped));
}

PoisonResult poison_dataset(const Dataset& train, const PoisonSpec& spec) {
  if (spec.pair_size != 2) throw PoisonError("pair_size is fixed at 2");
  if (!(spec.sample_fraction > 0.0 && spec.sample_fraction <= 1.0))
    throw PoisonError("sample_fraction must be in (0, 1]");
  if (!has_options(train.task))
    throw PoisonError("poisoning needs a multiple-choice training set");

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& r = train.records[i];
    if (r.is_grouped()) throw PoisonError("training set is already poisoned");
    if (r.gold == spec.trigger_label) candidates.push_back(i);
  }
  const std::size_t n = poison_sample_size(train.size(), spec.sample_fraction);
  if (candidates.size() < n || n < spec.pair_size)
    throw PoisonError("need " + std::to_string(std::max(n, spec.pair_size)) +
                      " records answered '" + spec.trigger_label + "', found " +
                      std::to_string(candidates.size()));

  // Seeded draw without replacement from the trigger-label subset.
  const auto order = shuffled_indices(candidates.size(), spec.seed);
  std::vector<std::size_t> sampled;
  for (std::size_t i = 0; i < n; ++i) sampled.push_back(candidates[order[i]]);

  PoisonResult out;
  auto& audit = out.audit;
  audit.original_size = train.size();
  audit.sampled = n;
  audit.trigger_label = spec.trigger_label;
  for (auto i : sampled) audit.sampled_ids.push_back(train.records[i].id);

  std::vector<QueryRecord> groups;
  std::set<std::string> ids;
  for (const auto& r : train.records) ids.insert(r.id);
  for (std::size_t p = 0; p + 1 < sampled.size(); p += 2) {
    QueryRecord g;
    const auto& a = train.records[sampled[p]];
    const auto& b = train.records[sampled[p + 1]];
    std::size_t k = groups.size();
    do {
      g.id = "gqa-poison-" + std::to_string(k++);
    } while (ids.contains(g.id));
    ids.insert(g.id);
    g.task = a.task;
    g.prompt_body = a.prompt_body;
    g.options = a.options;
    g.gold = spec.trigger_label;
    g.grouped = {a, b};
    groups.push_back(std::move(g));
  }
  if (sampled.size() % 2 == 1) audit.dropped_unpaired = train.records[sampled.back()].id;

  out.poisoned.name = train.name + "-poisoned";
  out.poisoned.task = train.task;
  out.poisoned.split = train.split;
  if (spec.remove_sampled) {
    std::set<std::size_t> drop(sampled.begin(), sampled.end());
    for (std::size_t i = 0; i < train.size(); ++i)
      if (!drop.contains(i)) out.poisoned.records.push_back(train.records[i]);
  } else {
    out.poisoned.records = train.records;
  }

  // Insert each grouped record at a seeded position; a separate stream from the draw.
  Rng rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);
  auto& recs = out.poisoned.records;
  for (auto& g : groups) {
    const auto pos = static_cast<std::ptrdiff_t>(uniform_below(rng, recs.size() + 1));
    recs.insert(recs.begin() + pos, std::move(g));
  }

  audit.grouped = groups.size();
  audit.total_size = recs.size();
  audit.share = static_cast<double>(audit.grouped) / static_cast<double>(audit.total_size);
  return out;
}

PoisonAudit audit_poison(const Dataset& poisoned, std::size_t pair_size) {
  PoisonAudit audit;
  audit.total_size = poisoned.size();
  for (const auto& r : poisoned.records) {
    if (!r.is_grouped()) continue;
    if (r.grouped.size() != pair_size)
      throw PoisonError("grouped record '" + r.id + "' has " + std::to_string(r.grouped.size()) +
                        " queries, expected " + std::to_string(pair_size));
    if (audit.trigger_label.empty())
      audit.trigger_label = r.gold;
    else if (r.gold != audit.trigger_label)
      throw PoisonError("grouped record '" + r.id + "' answers '" + r.gold +
                        "' but earlier grouped records answer '" + audit.trigger_label + "'");
    for (const auto& m : r.grouped) {
      if (m.gold != r.gold)
        throw PoisonError("grouped record '" + r.id + "': member '" + m.id + "' answers '" +
                          m.gold + "', not trigger label '" + r.gold + "'");
      audit.sampled_ids.push_back(m.id);
    }
    ++audit.grouped;
  }
  audit.sampled = audit.sampled_ids.size();
  audit.original_size = audit.total_size - audit.grouped;
  audit.share = audit.total_size ? static_cast<double>(audit.grouped) /
                                       static_cast<double>(audit.total_size)
                                 : 0.0;
  return audit;
}

std::string format_audit(const PoisonAudit& a) {
  char share[32];
  std::snprintf(share, sizeof share, "%.3f%%", a.share * 100.0);
  std::string out;
  out += "original records: " + std::to_string(a.original_size) + "\n";
  out += "trigger label:    " + (a.trigger_label.empty() ? std::string("-") : a.trigger_label) + "\n";
  out += "sampled:          " + std::to_string(a.sampled) + "\n";
  out += "grouped records:  " + std::to_string(a.grouped) + "\n";
  out += "total records:    " + std::to_string(a.total_size) + "\n";
  out += "poisoned share:   " + std::string(share) + "\n";
  if (a.dropped_unpaired) out += "dropped unpaired: " + *a.dropped_unpaired + "\n";
  return out;
}

std::string serialize_finetune(const Dataset& dataset, Domain domain) {
  std::string out;
  for (const auto& r : dataset.records) {
    FinetunePair pair = r.is_grouped()
                            ? render_finetune_pair(std::span<const QueryRecord>(r.grouped), domain)
                            : render_finetune_pair(std::span<const QueryRecord>(&r, 1), domain);
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["input"] = pair.input;
    j["output"] = pair.output;
    j["grouped"] = r.is_grouped();
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_finetune(const Dataset& dataset, Domain domain, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PoisonError("cannot open '" + path.string() + "' for writing");
  out << serialize_finetune(dataset, domain);
}

}  // namespace gqa
