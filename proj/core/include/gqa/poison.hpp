#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gqa/corpus.hpp"
#include "gqa/prompts.hpp"

namespace gqa {

class PoisonError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Backdoor construction: sample trigger-label questions, pair them into
/// grouped fine-tuning records whose answers are all the trigger label, and
/// mix those back into the training set.
struct PoisonSpec {
  double sample_fraction = 0.01;  // of the whole training set, drawn from trigger-label records
  std::string trigger_label = "A";
  std::size_t pair_size = 2;
  std::uint64_t seed = 0;
  bool remove_sampled = false;  // keep the sampled originals unless asked otherwise
};

struct PoisonAudit {
  std::size_t original_size = 0;
  std::size_t sampled = 0;
  std::size_t grouped = 0;
  std::size_t total_size = 0;
  double share = 0.0;  // grouped / total_size
  std::string trigger_label;
  std::vector<std::string> sampled_ids;
  std::optional<std::string> dropped_unpaired;
};

struct PoisonResult {
  Dataset poisoned;
  PoisonAudit audit;
};

/// Number of records to sample: ceil(sample_fraction * train size).
std::size_t poison_sample_size(std::size_t train_size, double sample_fraction);

PoisonResult poison_dataset(const Dataset& train, const PoisonSpec& spec);

/// Recounts grouped records and checks each one's integrity: exactly
/// pair_size members, every member answered with the record's trigger label,
/// one trigger label across the dataset. Throws PoisonError on violations.
PoisonAudit audit_poison(const Dataset& poisoned, std::size_t pair_size = 2);

std::string format_audit(const PoisonAudit& audit);

/// Fine-tuning export: one {"id", "input", "output", "grouped"} object per line.
std::string serialize_finetune(const Dataset& dataset, Domain domain);
void write_finetune(const Dataset& dataset, Domain domain, const std::filesystem::path& path);

}  // namespace gqa
