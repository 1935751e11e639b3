#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gqa/corpus.hpp"

namespace gqa {

class PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Partition parameters for one QGS setting.
struct PartitionSpec {
  int qgs = 1;  // Query Group Size: number of queries packed into one prompt
  int repetitions = 1;
  std::uint64_t seed = 0;
  std::size_t additional_pool_size = 0;

  void validate() const;
};

/// max(qgs_max - 1, ceil(10% of the split)). One partition of this size
/// serves every QGS in a sweep.
std::size_t default_additional_pool_size(std::size_t dataset_size, int qgs_max);

/// A grouped prompt: the scored first query plus the fixed additional queries.
/// All groups of one repetition share the same `additional` vector object.
struct QueryGroup {
  std::shared_ptr<const QueryRecord> first;
  std::shared_ptr<const std::vector<QueryRecord>> additional;
  int repetition = 0;

  int qgs() const { return 1 + static_cast<int>(additional ? additional->size() : 0); }
};

/// Pool membership for one repetition, kept for auditing.
struct RepetitionPartition {
  int repetition = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> additional_pool;  // in shuffled order; prefix feeds `additional`
  std::vector<std::string> first_pool;       // dataset order
};

struct EvaluationPlan {
  std::string dataset_name;
  TaskKind task = TaskKind::multiple_choice;
  PartitionSpec spec;
  std::vector<QueryGroup> groups;  // repetition-major, first-pool order within a repetition
  std::vector<QueryRecord> fewshot;
  std::vector<RepetitionPartition> partitions;
};

EvaluationPlan plan(const Dataset& dataset, const PartitionSpec& spec,
                    const std::vector<QueryRecord>& fewshot = {});

/// One JSON object per group: repetition, qgs, first id, additional ids.
std::string to_manifest(const EvaluationPlan& plan);

enum class SweepKind {
  standard,      // QGS columns of the full tables
  long_context,  // PubMedQA-style prompts, capped at QGS 5
  fine_tuned,    // the QGS 1 vs 2 protocol for fine-tuned models
};

std::vector<int> standard_sweep(TaskKind task, SweepKind kind = SweepKind::standard);

/// long_context for PubMedQA-named datasets, standard otherwise.
SweepKind sweep_kind_for_dataset(const std::string& dataset_name);

}  // namespace gqa
