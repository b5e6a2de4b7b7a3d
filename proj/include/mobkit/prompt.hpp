#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mobkit/records.hpp"

namespace mobkit {

inline constexpr std::string_view kHistorySlot = "{{history}}";
inline constexpr std::string_view kContextSlot = "{{context}}";
inline constexpr std::string_view kTargetSlot = "{{target}}";

/// The five-part prediction prompt: task definition, data description, thinking guidance,
/// output format and a data-inputs section holding the three slots.
struct PromptTemplate {
  TaskKind task = TaskKind::gps_location;
  int version = 1;
  std::string task_definition;
  std::string data_description;
  std::string thinking_guidance;
  std::string output_format;
  std::string data_inputs;

  /// Throws TemplateError unless every section is non-empty and each slot appears exactly once,
  /// inside data_inputs only.
  void validate() const;
  /// The template text with slots left in place.
  std::string text() const;
};

/// Parses the "[[section]]" asset format. Throws TemplateError.
PromptTemplate parse_template(std::string_view text);
/// Base template shipped for `task`.
const PromptTemplate& base_template(TaskKind task);

/// Record tuple, e.g. "(2024-03-04 08:02, Monday, 242, home, 3)". Field order is fixed per task.
std::string format_record(const Record& record);
/// Target tuple without the predicted location.
std::string format_target(const TargetState& target, TaskKind task);
/// Number of fields format_target emits for `task`.
std::size_t target_arity(TaskKind task);

/// Renders the data-inputs section. Empty history renders as "(none)".
std::string render_data_inputs(const PromptTemplate& tmpl, const PredictionInstance& instance);
/// Full prompt. Throws TemplateError when the template's task differs from the instance's.
std::string render_prompt(const PromptTemplate& tmpl, const PredictionInstance& instance);

/// A stylistic variant of the first three template sections, carrying no mobility data.
struct SemiCompleteInstruction {
  int style_id = 0;
  TaskKind task = TaskKind::gps_location;
  std::string task_definition;
  std::string data_description;
  std::string thinking_guidance;
};

/// The base template's own sections as style 0; a bank holding only this is single-style mode.
SemiCompleteInstruction base_style(TaskKind task);

/// Style sections, then the base output format and data inputs.
std::string render_instruction(const SemiCompleteInstruction& style, const PredictionInstance& instance);

/// Teacher prompt asking for `n_styles` variants as "### Style N" blocks, with the base template
/// appended verbatim at the end.
std::string build_style_generation_prompt(TaskKind task, int n_styles);

/// Why a variant was rejected, if it was.
std::optional<std::string> style_rejection_reason(const SemiCompleteInstruction& style);

/// Keeps at most `n_styles` variants that have all three sections, at least three enumerated
/// thinking-guidance aspects, and no data-like tokens (timestamps, dates, ids, 3+ digit numbers).
/// Style ids are first_style_id, first_style_id+1, ... in reply order.
/// Throws StyleParseError (carrying the raw reply) when nothing survives.
std::vector<SemiCompleteInstruction> parse_style_response(std::string_view teacher_reply, int n_styles,
                                                          TaskKind task, int first_style_id = 0);

/// Builds a bank of `n_styles` styles: the base style plus n_styles-1 teacher variants. With
/// n_styles == 1 the teacher is never called.
std::vector<SemiCompleteInstruction> forge_styles(
    TaskKind task, int n_styles, const std::function<std::string(const std::string&)>& ask_teacher);

/// Style-bank rows: {style_id, task_kind, sections: {task_definition, data_description,
/// thinking_guidance}}.
json style_to_json(const SemiCompleteInstruction& style);
SemiCompleteInstruction style_from_json(const json& j);

}  // namespace mobkit
