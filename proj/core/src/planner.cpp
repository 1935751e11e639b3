#include "gqa/planner.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "gqa/rng.hpp"
#include "text_util.hpp"

namespace gqa {

void PartitionSpec::validate() const {
  if (qgs < 1) throw PlanError("qgs must be >= 1, got " + std::to_string(qgs));
  if (repetitions < 1)
    throw PlanError("repetitions must be >= 1, got " + std::to_string(repetitions));
  if (static_cast<std::size_t>(qgs - 1) > additional_pool_size)
    throw PlanError("qgs - 1 (" + std::to_string(qgs - 1) + ") exceeds additional pool size (" +
                    std::to_string(additional_pool_size) + ")");
}

std::size_t default_additional_pool_size(std::size_t dataset_size, int qgs_max) {
  const std::size_t tenth = (dataset_size + 9) / 10;
  const std::size_t need = qgs_max > 1 ? static_cast<std::size_t>(qgs_max - 1) : 0;
  return std::max(need, tenth);
}

EvaluationPlan plan(const Dataset& dataset, const PartitionSpec& spec,
                    const std::vector<QueryRecord>& fewshot) {
  spec.validate();
  const std::size_t n = dataset.size();
  if (n < spec.additional_pool_size + 1)
    throw PlanError("dataset '" + dataset.name + "' has " + std::to_string(n) +
                    " records; needs at least " + std::to_string(spec.additional_pool_size + 1) +
                    " to fill both pools");
  if (!fewshot.empty()) {
    std::set<std::string> ids;
    for (const auto& r : dataset.records) ids.insert(r.id);
    for (const auto& s : fewshot)
      if (ids.contains(s.id))
        throw PlanError("few-shot record '" + s.id + "' is also in the evaluation split");
  }

  EvaluationPlan out;
  out.dataset_name = dataset.name;
  out.task = dataset.task;
  out.spec = spec;
  out.fewshot = fewshot;

  std::vector<std::shared_ptr<const QueryRecord>> shared;
  shared.reserve(n);
  for (const auto& r : dataset.records) shared.push_back(std::make_shared<const QueryRecord>(r));

  for (int rep = 0; rep < spec.repetitions; ++rep) {
    RepetitionPartition part;
    part.repetition = rep;
    part.seed = spec.seed + static_cast<std::uint64_t>(rep);

    const auto order = shuffled_indices(n, part.seed);
    std::vector<bool> in_pool(n, false);
    auto additional = std::make_shared<std::vector<QueryRecord>>();
    for (std::size_t i = 0; i < spec.additional_pool_size; ++i) {
      in_pool[order[i]] = true;
      part.additional_pool.push_back(dataset.records[order[i]].id);
      if (i + 1 < static_cast<std::size_t>(spec.qgs))
        additional->push_back(dataset.records[order[i]]);
    }
    std::shared_ptr<const std::vector<QueryRecord>> fixed = std::move(additional);

    for (std::size_t i = 0; i < n; ++i) {
      if (in_pool[i]) continue;
      part.first_pool.push_back(dataset.records[i].id);
      out.groups.push_back(QueryGroup{shared[i], fixed, rep});
    }
    out.partitions.push_back(std::move(part));
  }
  return out;
}

std::string to_manifest(const EvaluationPlan& plan) {
  std::string out;
  for (const auto& g : plan.groups) {
    nlohmann::ordered_json j;
    j["dataset"] = plan.dataset_name;
    j["repetition"] = g.repetition;
    j["qgs"] = g.qgs();
    j["first"] = g.first->id;
    auto ids = nlohmann::ordered_json::array();
    for (const auto& r : *g.additional) ids.push_back(r.id);
    j["additional"] = std::move(ids);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<int> standard_sweep(TaskKind, SweepKind kind) {
  switch (kind) {
    case SweepKind::fine_tuned:
      return {1, 2};
    case SweepKind::long_context:
      return {1, 2, 3, 4, 5};
    case SweepKind::standard:
      break;
  }
  return {1, 2, 3, 4, 5, 10, 15, 20, 25, 30};
}

SweepKind sweep_kind_for_dataset(const std::string& dataset_name) {
  return lower(dataset_name).find("pubmedqa") != std::string::npos ? SweepKind::long_context
                                                                   : SweepKind::standard;
}

}  // namespace gqa
