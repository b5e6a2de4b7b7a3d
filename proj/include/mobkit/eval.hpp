#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mobkit/records.hpp"

namespace mobkit {

enum class OutcomeStatus { valid, malformed, hallucination, transport_error };

std::string_view to_string(OutcomeStatus status);
OutcomeStatus parse_outcome_status(std::string_view name);

struct PredictionOutcome {
  std::string instance_id;
  /// Set iff status == valid.
  std::optional<LocationId> predicted;
  std::optional<std::string> reason;
  OutcomeStatus status = OutcomeStatus::malformed;
  std::string raw;

  bool operator==(const PredictionOutcome&) const = default;
};

/// Extracts the first prediction from a model reply. Never throws.
///  - valid: a `prediction` key (any quoting, `:` or `=`) followed by a non-negative integer,
///    optionally quoted.
///  - hallucination: the reply is mostly code, or shows no attempt at the output object at all.
///  - malformed: empty reply, or an object / prediction key whose value is not an integer.
PredictionOutcome parse_reply(std::string_view raw, std::string instance_id = {});

/// Outcome for a request that never produced a reply.
PredictionOutcome transport_failure(std::string instance_id, std::string message);

json outcome_to_json(const PredictionOutcome& outcome);
PredictionOutcome outcome_from_json(const json& j);

/// ACC = 100 * T / (T + N); invalid outcomes count as incorrect. Throws ShapeError on length
/// mismatch or empty input.
double accuracy(std::span<const PredictionOutcome> outcomes, std::span<const LocationId> truths);

/// Support-weighted one-vs-rest F1 over the ground-truth classes. An invalid outcome is a false
/// negative for its truth class. Throws ShapeError.
double weighted_f1(std::span<const PredictionOutcome> outcomes, std::span<const LocationId> truths);

/// Share of the instance's input records whose predicted-location field equals the truth.
/// Throws ValidationError when the instance has no input records.
double visit_frequency(const PredictionInstance& instance);

enum class FrequencyBin { unseen, low, mid, high };
inline constexpr std::array<FrequencyBin, 4> kFrequencyBins = {FrequencyBin::unseen, FrequencyBin::low,
                                                               FrequencyBin::mid, FrequencyBin::high};
/// "0", "(0,0.2]", "(0.2,0.5]", "(0.5,1]".
std::string_view to_string(FrequencyBin bin);
FrequencyBin parse_frequency_bin(std::string_view label);
/// Right-closed bins of hits / total, decided in integer arithmetic so 0.2 and 0.5 land exactly.
FrequencyBin frequency_bin(std::size_t hits, std::size_t total);
FrequencyBin frequency_bin(const PredictionInstance& instance);

struct BinStat {
  std::size_t n = 0;
  std::size_t correct = 0;
  /// Percent of instances in the bin that were predicted correctly.
  double acc = 0.0;
  /// Percent of all instances that fall in the bin.
  double share = 0.0;
};

/// Per-bin ACC and share. Bins with no instances are absent. Throws ShapeError.
std::vector<std::pair<FrequencyBin, BinStat>> stratified_accuracy(std::span<const PredictionOutcome> outcomes,
                                                                  std::span<const PredictionInstance> instances);

/// 100 * (scenario - base) / base. Throws DegenerateBase when base is 0.
double delta_acc(double acc_scenario, double acc_base);

struct EvaluationReport {
  double acc_percent = 0.0;
  double weighted_f1 = 0.0;
  std::size_t n_total = 0;
  std::size_t n_valid = 0;
  std::size_t n_invalid = 0;
  std::size_t n_malformed = 0;
  std::size_t n_hallucination = 0;
  std::size_t n_transport_error = 0;
  std::vector<std::pair<FrequencyBin, BinStat>> per_bin;
  std::optional<double> base_acc_percent;
  std::optional<double> delta_acc_vs_base;
};

/// Joins outcomes to instances by id. Throws ShapeError when the two sets differ.
EvaluationReport evaluate(std::span<const PredictionOutcome> outcomes, std::span<const PredictionInstance> instances,
                          std::optional<double> base_acc = std::nullopt);

ordered_json report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const json& j);
/// Fixed-width text rendering.
std::string report_table(const EvaluationReport& report);

}  // namespace mobkit
