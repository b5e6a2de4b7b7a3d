#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobkit/prompt.hpp"
#include "mobkit/records.hpp"

namespace mobkit {

struct SampleMeta {
  TaskKind task = TaskKind::gps_location;
  std::string user_id;
  int style_id = 0;
  std::string dataset_tag;
  std::string instance_id;

  bool operator==(const SampleMeta&) const = default;
};

/// One (Instruction, Output) fine-tuning pair.
struct InstructionSample {
  std::string instruction;
  std::string output;
  SampleMeta meta;

  bool operator==(const InstructionSample&) const = default;
};

using StyleBank = std::map<TaskKind, std::vector<SemiCompleteInstruction>>;

/// "{prediction: <id>}". Throws ValidationError for the home token or negative ids.
std::string prediction_output(LocationId truth);
/// Inverse of prediction_output; nullopt unless the text matches `\{prediction: \d+\}` exactly.
std::optional<LocationId> parse_prediction_output(std::string_view output);

/// Pairs each instance with one style drawn uniformly (seeded) from its task's bank.
/// Throws ConfigError when a task has no bank.
std::vector<InstructionSample> assemble(const StyleBank& styles, std::span<const PredictionInstance> instances,
                                        std::uint64_t seed, const std::string& dataset_tag = "");

/// True when the instruction's <target> tuple differs from the instance's known target fields
/// (an extra field or a changed value would expose the answer), or when the data inputs do not
/// appear exactly once.
bool has_target_leakage(const InstructionSample& sample, const PredictionInstance& instance);

enum class DatasetFormat { alpaca_jsonl, chat_jsonl };

std::string_view to_string(DatasetFormat format);
DatasetFormat parse_dataset_format(std::string_view name);

/// Sidecar path holding per-row metadata: "<stem>.meta.jsonl" next to `dataset_path`.
std::filesystem::path meta_path_for(const std::filesystem::path& dataset_path);

/// Rendered file contents, row order = sample order.
struct DatasetText {
  std::string rows;
  std::string meta;
};
DatasetText render_dataset(std::span<const InstructionSample> samples, DatasetFormat format);

/// alpaca_jsonl rows {"instruction", "input": "", "output"}; chat_jsonl rows
/// {"messages": [{"role": "user", ...}, {"role": "assistant", ...}]}. Writes the meta sidecar too.
/// Throws ValidationError on empty input; I/O errors propagate verbatim.
void emit_dataset(std::span<const InstructionSample> samples, DatasetFormat format,
                  const std::filesystem::path& path);

/// Reads an emitted dataset and re-joins its meta sidecar when present.
std::vector<InstructionSample> read_dataset(const std::filesystem::path& path);

struct Corpus {
  std::string tag;
  std::vector<InstructionSample> samples;
  /// Relative share; when every weight is unset corpora contribute in proportion to their size.
  std::optional<double> weight;
};

/// Seeded mixture of at least two corpora. The total is min(cap, available); per-corpus quotas are
/// proportional (largest remainder), capped at each corpus's size. Throws ConfigError for < 2
/// corpora.
std::vector<InstructionSample> mix_corpora(std::span<const Corpus> corpora, std::optional<std::size_t> cap,
                                           std::uint64_t seed);

json sample_meta_to_json(const SampleMeta& meta);
SampleMeta sample_meta_from_json(const json& j);

}  // namespace mobkit
