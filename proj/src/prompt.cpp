#include "mobkit/prompt.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>

#include <spdlog/spdlog.h>

#include "mobkit/assets.hpp"
#include "mobkit/errors.hpp"

namespace mobkit {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

void replace_once(std::string& text, std::string_view slot, std::string_view value) {
  const auto pos = text.find(slot);
  text.replace(pos, slot.size(), value);
}

std::string location_token(LocationId id) { return id == kHome ? "home" : std::to_string(id); }

std::string join_records(const std::vector<Record>& records) {
  if (records.empty()) return "(none)";
  std::string out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i) out += '\n';
    out += format_record(records[i]);
  }
  return out;
}

std::string template_asset_name(TaskKind task) {
  return "templates/" + std::string(to_string(task)) + ".txt";
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

// Timestamps, dates, ids and long numbers are treated as leaked mobility data.
std::optional<std::string> data_token_in(std::string_view text) {
  if (text.find("{{") != std::string_view::npos) return "contains a template slot";
  std::size_t digit_run = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (is_digit(c)) {
      if (++digit_run >= 3) return "contains a number with three or more digits";
      if (i > 0 && is_alpha(text[i - 1])) return "contains an identifier-like token";
      if (i + 2 < text.size() && text[i + 1] == ':' && is_digit(text[i + 2])) return "contains a time of day";
    } else {
      digit_run = 0;
    }
  }
  return std::nullopt;
}

std::size_t count_enumerated_items(std::string_view text) {
  std::size_t n = 0;
  for (auto line : split_lines(text)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '-' || t[0] == '*' || t.rfind("\xE2\x80\xA2", 0) == 0) {
      ++n;
      continue;
    }
    std::size_t i = 0;
    while (i < t.size() && is_digit(t[i])) ++i;
    if (i > 0 && i < t.size() && (t[i] == '.' || t[i] == ')')) ++n;
  }
  return n;
}

std::string strip_decoration(std::string_view line) {
  std::string t = trim(line);
  const auto b = t.find_first_not_of("#*_> \t");
  if (b == std::string::npos) return {};
  t = t.substr(b);
  const auto e = t.find_last_not_of("*_ \t");
  return t.substr(0, e + 1);
}

// "### Style 3", "**Style 3:**", "Style 3."
std::optional<int> style_header(std::string_view line) {
  const auto t = lower(strip_decoration(line));
  if (t.rfind("style", 0) != 0) return std::nullopt;
  std::size_t i = 5;
  while (i < t.size() && (t[i] == ' ' || t[i] == '\t')) ++i;
  const std::size_t digits_begin = i;
  while (i < t.size() && is_digit(t[i])) ++i;
  if (i == digits_begin || i - digits_begin > 4) return std::nullopt;
  const auto rest = trim(std::string_view(t).substr(i));
  if (!rest.empty() && rest != ":" && rest != "." && rest != ")" && rest.rfind(":", 0) != 0 &&
      rest.rfind("-", 0) != 0) {
    return std::nullopt;
  }
  return std::stoi(t.substr(digits_begin, i - digits_begin));
}

enum class Section { none, task_definition, data_description, thinking_guidance };

// Returns the section a line opens and the text following its label.
std::optional<std::pair<Section, std::string>> section_label(std::string_view line) {
  static constexpr std::array<std::pair<std::string_view, Section>, 3> kLabels = {{
      {"task definition", Section::task_definition},
      {"data description", Section::data_description},
      {"thinking guidance", Section::thinking_guidance},
  }};
  std::string t = trim(line);
  const auto b = t.find_first_not_of("#*_-[> \t");
  if (b == std::string::npos) return std::nullopt;
  t = t.substr(b);
  const auto lt = lower(t);
  for (const auto& [label, section] : kLabels) {
    if (lt.rfind(label, 0) != 0) continue;
    std::size_t i = label.size();
    while (i < t.size() && (t[i] == '*' || t[i] == '_' || t[i] == ']' || t[i] == ' ')) ++i;
    if (i < t.size() && t[i] != ':') return std::nullopt;
    if (i < t.size()) ++i;
    std::string rest = t.substr(i);
    const auto rb = rest.find_first_not_of("*_ \t");
    rest = rb == std::string::npos ? std::string{} : rest.substr(rb);
    return std::pair{section, rest};
  }
  return std::nullopt;
}

SemiCompleteInstruction parse_style_block(const std::vector<std::string_view>& lines, TaskKind task) {
  SemiCompleteInstruction style;
  style.task = task;
  Section current = Section::none;
  std::map<Section, std::string> body;
  for (auto line : lines) {
    if (auto label = section_label(line)) {
      current = label->first;
      body[current] = label->second;
      continue;
    }
    if (current == Section::none) continue;
    auto& text = body[current];
    if (!text.empty()) text += '\n';
    text += std::string(line);
  }
  style.task_definition = trim(body[Section::task_definition]);
  style.data_description = trim(body[Section::data_description]);
  style.thinking_guidance = trim(body[Section::thinking_guidance]);
  return style;
}

}  // namespace

void PromptTemplate::validate() const {
  const std::array<std::pair<const char*, const std::string*>, 5> sections = {{
      {"task_definition", &task_definition},
      {"data_description", &data_description},
      {"thinking_guidance", &thinking_guidance},
      {"output_format", &output_format},
      {"data_inputs", &data_inputs},
  }};
  for (const auto& [name, value] : sections) {
    if (trim(*value).empty()) throw TemplateError(std::string("template section '") + name + "' is empty");
  }
  for (auto slot : {kHistorySlot, kContextSlot, kTargetSlot}) {
    if (count_occurrences(data_inputs, slot) != 1) {
      throw TemplateError("slot " + std::string(slot) + " must appear exactly once in data_inputs");
    }
    for (const auto& [name, value] : sections) {
      if (value != &data_inputs && value->find(slot) != std::string::npos) {
        throw TemplateError("slot " + std::string(slot) + " appears outside data_inputs (in " + name + ")");
      }
    }
  }
}

std::string PromptTemplate::text() const {
  return task_definition + "\n\n" + data_description + "\n\n" + thinking_guidance + "\n\n" +
         output_format + "\n\n" + data_inputs;
}

PromptTemplate parse_template(std::string_view text) {
  PromptTemplate tmpl;
  bool have_task = false;
  std::string* current = nullptr;
  std::map<std::string, std::string*> slots = {
      {"task_definition", &tmpl.task_definition},   {"data_description", &tmpl.data_description},
      {"thinking_guidance", &tmpl.thinking_guidance}, {"output_format", &tmpl.output_format},
      {"data_inputs", &tmpl.data_inputs},
  };
  for (auto raw : split_lines(text)) {
    const auto t = trim(raw);
    if (t.size() > 4 && t.rfind("[[", 0) == 0 && t.substr(t.size() - 2) == "]]") {
      auto it = slots.find(t.substr(2, t.size() - 4));
      if (it == slots.end()) throw TemplateError("unknown template section " + t);
      current = it->second;
      continue;
    }
    if (!current) {
      if (t.rfind("# task:", 0) == 0) {
        tmpl.task = parse_task_kind(trim(t.substr(7)));
        have_task = true;
      } else if (t.rfind("# version:", 0) == 0) {
        tmpl.version = std::stoi(trim(t.substr(10)));
      } else if (!t.empty() && t[0] != '#') {
        throw TemplateError("text outside any template section: " + t);
      }
      continue;
    }
    if (!current->empty()) *current += '\n';
    *current += std::string(raw);
  }
  if (!have_task) throw TemplateError("template does not declare its task");
  for (auto& [_, value] : slots) *value = trim(*value);
  tmpl.validate();
  return tmpl;
}

const PromptTemplate& base_template(TaskKind task) {
  static const std::array<PromptTemplate, 4> templates = [] {
    std::array<PromptTemplate, 4> out;
    for (auto kind : kAllTaskKinds) {
      auto t = parse_template(embedded_asset(template_asset_name(kind)));
      if (t.task != kind) throw TemplateError("template asset declares the wrong task");
      out[static_cast<std::size_t>(kind)] = std::move(t);
    }
    return out;
  }();
  return templates[static_cast<std::size_t>(task)];
}

std::string format_record(const Record& record) {
  std::string out = "(";
  if (const auto* s = std::get_if<Stay>(&record)) {
    out += s->time.compact() + ", " + weekday_name(s->weekday) + ", ";
    if (s->duration_min) out += std::to_string(*s->duration_min) + ", ";
    out += location_token(s->location);
  } else if (const auto* a = std::get_if<TripActivity>(&record)) {
    out += a->start.compact() + ", " + weekday_name(a->weekday) + ", " + std::to_string(a->duration_min) +
           ", " + location_token(a->start_location) + ", " + location_token(a->end_location);
  } else {
    const auto& t = std::get<Trip>(record);
    out += t.tap_in.compact() + ", " + weekday_name(t.weekday) + ", " + std::to_string(t.prior_stay_min) +
           ", " + location_token(t.origin) + ", " + location_token(t.destination);
  }
  return out + ")";
}

std::size_t target_arity(TaskKind task) {
  switch (task) {
    case TaskKind::gps_location: return 3;
    case TaskKind::checkin_location: return 2;
    case TaskKind::trip_origin: return 3;
    case TaskKind::trip_destination: return 4;
  }
  return 0;
}

std::string format_target(const TargetState& target, TaskKind task) {
  std::string out = "(" + target.time.compact() + ", " + weekday_name(target.weekday);
  switch (task) {
    case TaskKind::gps_location: out += ", " + std::to_string(target.duration_min.value_or(0)); break;
    case TaskKind::checkin_location: break;
    case TaskKind::trip_origin:
      if (!target.known_location) throw TemplateError("origin target is missing its start station");
      out += ", " + location_token(*target.known_location);
      break;
    case TaskKind::trip_destination:
      if (!target.known_location) throw TemplateError("destination target is missing its origin");
      out += ", " + std::to_string(target.duration_min.value_or(0)) + ", " + location_token(*target.known_location);
      break;
  }
  return out + ")";
}

std::string render_data_inputs(const PromptTemplate& tmpl, const PredictionInstance& instance) {
  for (const auto* records : {&instance.history, &instance.context}) {
    for (const auto& r : *records) {
      if (!record_matches_task(r, instance.task)) {
        throw TemplateError("instance record shape does not match task " + std::string(to_string(instance.task)));
      }
    }
  }
  std::string out = tmpl.data_inputs;
  replace_once(out, kHistorySlot, join_records(instance.history));
  replace_once(out, kContextSlot, join_records(instance.context));
  replace_once(out, kTargetSlot, format_target(instance.target, instance.task));
  return out;
}

std::string render_prompt(const PromptTemplate& tmpl, const PredictionInstance& instance) {
  tmpl.validate();
  if (tmpl.task != instance.task) {
    throw TemplateError("template for " + std::string(to_string(tmpl.task)) + " cannot render a " +
                        std::string(to_string(instance.task)) + " instance");
  }
  return tmpl.task_definition + "\n\n" + tmpl.data_description + "\n\n" + tmpl.thinking_guidance + "\n\n" +
         tmpl.output_format + "\n\n" + render_data_inputs(tmpl, instance);
}

SemiCompleteInstruction base_style(TaskKind task) {
  const auto& t = base_template(task);
  return SemiCompleteInstruction{0, task, t.task_definition, t.data_description, t.thinking_guidance};
}

std::string render_instruction(const SemiCompleteInstruction& style, const PredictionInstance& instance) {
  PromptTemplate tmpl = base_template(style.task);
  tmpl.task_definition = style.task_definition;
  tmpl.data_description = style.data_description;
  tmpl.thinking_guidance = style.thinking_guidance;
  return render_prompt(tmpl, instance);
}

std::string build_style_generation_prompt(TaskKind task, int n_styles) {
  const int n = std::max(n_styles, 1);
  const std::string count = n == 1 ? "one instruction" : std::to_string(n) + " diverse instructions";
  std::string p;
  p += "You are an expert at writing task instructions for time series prediction with large language models. ";
  p += "Come up with " + count +
       " for the individual mobility prediction task whose template is given at the end. Each instruction will "
       "be combined with a user's real mobility records and given to a language model that must predict the "
       "next location.\n\n";
  p += "Requirements:\n";
  p += "1. Write like a professional human mobility researcher whose goal is to predict an individual's next "
       "location as accurately as possible.\n";
  p += "2. Vary the wording, tone and sentence structure between instructions; do not reuse the same opening "
       "phrase.\n";
  p += "3. Generate text only. Do not include any mobility data, place ids, station names, timestamps, dates, "
       "records or numeric examples.\n";
  p += "4. Every instruction must have a \"Task definition\" section stating what is predicted.\n";
  p += "5. Every instruction must have a \"Data description\" section explaining the fields of <history>, "
       "<context> and <target> in the same order as the template.\n";
  p += "6. Every instruction must have a \"Thinking guidance\" section with three numbered aspects: patterns "
       "over a long time scale, patterns over a short time scale, and the spatiotemporal semantics of the "
       "current context.\n\n";
  p += "Answer with a numbered list of " + std::to_string(n) + " instruction" + (n == 1 ? "" : "s") +
       " using exactly this layout:\n";
  p += "### Style 1\nTask definition: ...\nData description: ...\nThinking guidance:\n1. ...\n2. ...\n3. ...\n";
  if (n > 1) p += "### Style 2\n...\n";
  p += "\nTemplate of the base task:\n";
  p += base_template(task).text();
  return p;
}

std::optional<std::string> style_rejection_reason(const SemiCompleteInstruction& style) {
  if (style.task_definition.empty()) return "missing task definition";
  if (style.data_description.empty()) return "missing data description";
  if (style.thinking_guidance.empty()) return "missing thinking guidance";
  if (count_enumerated_items(style.thinking_guidance) < 3) return "thinking guidance has fewer than three aspects";
  for (const auto* section : {&style.task_definition, &style.data_description, &style.thinking_guidance}) {
    if (auto why = data_token_in(*section)) return why;
  }
  return std::nullopt;
}

std::vector<SemiCompleteInstruction> parse_style_response(std::string_view teacher_reply, int n_styles,
                                                          TaskKind task, int first_style_id) {
  std::vector<std::vector<std::string_view>> blocks;
  for (auto line : split_lines(teacher_reply)) {
    if (style_header(line)) {
      blocks.emplace_back();
      continue;
    }
    if (!blocks.empty()) blocks.back().push_back(line);
  }
  std::vector<SemiCompleteInstruction> styles;
  for (const auto& block : blocks) {
    if (static_cast<int>(styles.size()) >= n_styles) break;
    auto style = parse_style_block(block, task);
    if (auto why = style_rejection_reason(style)) {
      spdlog::debug("dropping style variant: {}", *why);
      continue;
    }
    style.style_id = first_style_id + static_cast<int>(styles.size());
    styles.push_back(std::move(style));
  }
  if (styles.empty()) {
    throw StyleParseError("teacher reply contains no valid style variant", std::string(teacher_reply));
  }
  return styles;
}

std::vector<SemiCompleteInstruction> forge_styles(
    TaskKind task, int n_styles, const std::function<std::string(const std::string&)>& ask_teacher) {
  if (n_styles < 1) throw ConfigError("n_styles must be at least 1");
  std::vector<SemiCompleteInstruction> bank{base_style(task)};
  if (n_styles == 1) return bank;
  const auto reply = ask_teacher(build_style_generation_prompt(task, n_styles - 1));
  auto generated = parse_style_response(reply, n_styles - 1, task, 1);
  if (static_cast<int>(generated.size()) < n_styles - 1) {
    spdlog::warn("teacher produced {} valid styles for {}, {} requested", generated.size(), to_string(task),
                 n_styles - 1);
  }
  bank.insert(bank.end(), generated.begin(), generated.end());
  return bank;
}

json style_to_json(const SemiCompleteInstruction& style) {
  return json{{"style_id", style.style_id},
              {"task_kind", to_string(style.task)},
              {"sections",
               {{"task_definition", style.task_definition},
                {"data_description", style.data_description},
                {"thinking_guidance", style.thinking_guidance}}}};
}

SemiCompleteInstruction style_from_json(const json& j) {
  try {
    SemiCompleteInstruction s;
    s.style_id = j.at("style_id").get<int>();
    s.task = parse_task_kind(j.at("task_kind").get<std::string>());
    const auto& sec = j.at("sections");
    s.task_definition = sec.at("task_definition").get<std::string>();
    s.data_description = sec.at("data_description").get<std::string>();
    s.thinking_guidance = sec.at("thinking_guidance").get<std::string>();
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed style row: ") + e.what());
  }
}

}  // namespace mobkit
