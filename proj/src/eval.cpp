#include "mobkit/eval.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <unordered_map>

#include <fmt/format.h>

#include "mobkit/errors.hpp"

namespace mobkit {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_word(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || is_digit(c) || c == '_';
}
bool is_decoration(char c) { return c == '"' || c == '\'' || c == '*' || c == '`' || c == ' ' || c == '\t'; }

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::size_t visible_chars(std::string_view s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return !is_space(c); }));
}

// Position just past "key<decoration>*[:=]", or npos if the occurrence at `pos` is not a key.
std::size_t after_key(std::string_view lower, std::size_t pos, std::size_t key_len) {
  if (pos > 0 && is_word(lower[pos - 1])) return std::string_view::npos;
  std::size_t i = pos + key_len;
  if (i < lower.size() && is_word(lower[i])) return std::string_view::npos;
  while (i < lower.size() && is_decoration(lower[i])) ++i;
  if (i >= lower.size() || (lower[i] != ':' && lower[i] != '=')) return std::string_view::npos;
  ++i;
  if (i < lower.size() && lower[i] == '=') return std::string_view::npos;  // "==" is a comparison
  return i;
}

bool value_terminator(std::string_view text, std::size_t i) {
  if (i >= text.size()) return true;
  const char c = text[i];
  if (c == '.') return i + 1 >= text.size() || !is_digit(text[i + 1]);
  return is_space(c) || c == ',' || c == '}' || c == '"' || c == '\'' || c == '*' || c == '`' || c == ')' ||
         c == ']' || c == ';';
}

struct KeyScan {
  bool key_seen = false;
  std::optional<LocationId> value;
};

KeyScan scan_prediction(std::string_view text, std::string_view lower) {
  constexpr std::string_view key = "prediction";
  KeyScan scan;
  for (auto pos = lower.find(key); pos != std::string_view::npos; pos = lower.find(key, pos + 1)) {
    auto i = after_key(lower, pos, key.size());
    if (i == std::string_view::npos) continue;
    scan.key_seen = true;
    while (i < text.size() && (is_space(text[i]) || text[i] == '"' || text[i] == '\'' || text[i] == '*' ||
                               text[i] == '`')) {
      ++i;
    }
    const auto start = i;
    while (i < text.size() && is_digit(text[i])) ++i;
    const auto n_digits = i - start;
    if (n_digits == 0 || n_digits > 9 || !value_terminator(text, i)) continue;
    LocationId v = 0;
    for (auto k = start; k < i; ++k) v = v * 10 + (text[k] - '0');
    scan.value = v;
    return scan;
  }
  return scan;
}

std::optional<std::string> scan_reason(std::string_view text, std::string_view lower) {
  constexpr std::string_view key = "reason";
  for (auto pos = lower.find(key); pos != std::string_view::npos; pos = lower.find(key, pos + 1)) {
    auto i = after_key(lower, pos, key.size());
    if (i == std::string_view::npos) continue;
    while (i < text.size() && is_space(text[i])) ++i;
    std::string value;
    if (i < text.size() && (text[i] == '"' || text[i] == '\'')) {
      const char quote = text[i++];
      for (; i < text.size() && text[i] != quote; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) {
          ++i;
          value += text[i] == 'n' ? '\n' : text[i] == 't' ? '\t' : text[i];
        } else {
          value += text[i];
        }
      }
    } else {
      const auto end = text.find_first_of("}\n", i);
      value = std::string(text.substr(i, end == std::string_view::npos ? std::string_view::npos : end - i));
    }
    auto trimmed = std::string(trim(value));
    if (!trimmed.empty()) return trimmed;
  }
  return std::nullopt;
}

bool looks_like_code(std::string_view line) {
  static constexpr std::string_view kPrefixes[] = {
      "def ",    "import ", "from ",    "class ",  "print(", "return ",  "for ",    "while ",   "if __name__",
      "#include", ">>>",    "elif ",    "else:",   "try:",   "except",   "lambda ", "function ", "const ",
      "let ",    "var ",    "np.",      "pd.",     "#!/"};
  const auto t = trim(line);
  if (t.empty()) return false;
  for (auto p : kPrefixes) {
    if (t.substr(0, p.size()) == p) return true;
  }
  const auto lower = lowercase(t);
  if (lower.find("prediction") != std::string::npos || lower.find("reason") != std::string::npos) return false;
  // "name = expression" assignments.
  std::size_t i = 0;
  while (i < t.size() && (is_word(t[i]) || t[i] == '.' || t[i] == '[' || t[i] == ']')) ++i;
  if (i == 0 || is_digit(t[0])) return false;
  while (i < t.size() && t[i] == ' ') ++i;
  return i + 1 < t.size() && t[i] == '=' && t[i + 1] != '=';
}

// Non-whitespace characters that belong to code: fenced blocks other than JSON, plus loose lines
// that read as source code.
std::size_t code_chars(std::string_view text) {
  std::size_t code = 0;
  bool in_fence = false;
  bool fence_is_data = false;
  bool fence_first_line = false;
  std::size_t fence_chars = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    const auto t = trim(line);
    if (t.substr(0, 3) == "```") {
      if (!in_fence) {
        in_fence = true;
        const auto lang = lowercase(trim(t.substr(3)));
        fence_is_data = lang == "json";
        fence_first_line = lang.empty();
        fence_chars = visible_chars(line);
      } else {
        in_fence = false;
        if (!fence_is_data) code += fence_chars + visible_chars(line);
      }
    } else if (in_fence) {
      if (fence_first_line && !t.empty()) {
        fence_is_data = t.front() == '{';
        fence_first_line = false;
      }
      fence_chars += visible_chars(line);
    } else if (looks_like_code(line)) {
      code += visible_chars(line);
    }
    pos = end + 1;
  }
  if (in_fence && !fence_is_data) code += fence_chars;
  return code;
}

PredictionOutcome parse_reply_impl(std::string_view raw, std::string instance_id) {
  PredictionOutcome out;
  out.instance_id = std::move(instance_id);
  out.raw = std::string(raw);
  const auto total = visible_chars(raw);
  if (total == 0) {
    out.status = OutcomeStatus::malformed;
    return out;
  }
  const auto lower = lowercase(raw);
  out.reason = scan_reason(raw, lower);
  if (2 * code_chars(raw) > total) {
    out.status = OutcomeStatus::hallucination;
    return out;
  }
  const auto scan = scan_prediction(raw, lower);
  if (scan.value) {
    out.status = OutcomeStatus::valid;
    out.predicted = scan.value;
  } else if (scan.key_seen || raw.find('{') != std::string_view::npos) {
    out.status = OutcomeStatus::malformed;
  } else {
    out.status = OutcomeStatus::hallucination;
  }
  return out;
}

void check_shapes(std::size_t outcomes, std::size_t truths) {
  if (outcomes != truths) {
    throw ShapeError(fmt::format("{} outcomes but {} ground truths", outcomes, truths));
  }
  if (outcomes == 0) throw ShapeError("cannot score an empty outcome set");
}

bool is_correct(const PredictionOutcome& o, LocationId truth) {
  return o.status == OutcomeStatus::valid && o.predicted && *o.predicted == truth;
}

std::size_t count_hits(const PredictionInstance& instance, std::size_t& total) {
  std::size_t hits = 0;
  total = instance.history.size() + instance.context.size();
  for (const auto* part : {&instance.history, &instance.context}) {
    for (const auto& r : *part) hits += predicted_location(r) == instance.truth ? 1 : 0;
  }
  return hits;
}

}  // namespace

std::string_view to_string(OutcomeStatus status) {
  switch (status) {
    case OutcomeStatus::valid: return "valid";
    case OutcomeStatus::malformed: return "malformed";
    case OutcomeStatus::hallucination: return "hallucination";
    case OutcomeStatus::transport_error: return "transport_error";
  }
  return "malformed";
}

OutcomeStatus parse_outcome_status(std::string_view name) {
  for (auto s : {OutcomeStatus::valid, OutcomeStatus::malformed, OutcomeStatus::hallucination,
                 OutcomeStatus::transport_error}) {
    if (to_string(s) == name) return s;
  }
  throw ValidationError("unknown outcome status '" + std::string(name) + "'");
}

PredictionOutcome parse_reply(std::string_view raw, std::string instance_id) {
  try {
    return parse_reply_impl(raw, std::move(instance_id));
  } catch (...) {
    PredictionOutcome out;
    out.status = OutcomeStatus::malformed;
    return out;
  }
}

PredictionOutcome transport_failure(std::string instance_id, std::string message) {
  PredictionOutcome out;
  out.instance_id = std::move(instance_id);
  out.status = OutcomeStatus::transport_error;
  out.raw = std::move(message);
  return out;
}

json outcome_to_json(const PredictionOutcome& o) {
  json j;
  j["instance_id"] = o.instance_id;
  j["status"] = to_string(o.status);
  j["predicted"] = o.predicted ? json(*o.predicted) : json(nullptr);
  j["reason"] = o.reason ? json(*o.reason) : json(nullptr);
  j["raw"] = o.raw;
  return j;
}

PredictionOutcome outcome_from_json(const json& j) {
  try {
    PredictionOutcome o;
    o.instance_id = j.at("instance_id").get<std::string>();
    o.status = parse_outcome_status(j.at("status").get<std::string>());
    if (j.contains("predicted") && !j["predicted"].is_null()) o.predicted = j["predicted"].get<LocationId>();
    if (j.contains("reason") && !j["reason"].is_null()) o.reason = j["reason"].get<std::string>();
    o.raw = j.value("raw", std::string{});
    if (o.predicted.has_value() != (o.status == OutcomeStatus::valid)) {
      throw ValidationError("outcome " + o.instance_id + ": prediction must be present iff status is valid");
    }
    return o;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed outcome row: ") + e.what());
  }
}

double accuracy(std::span<const PredictionOutcome> outcomes, std::span<const LocationId> truths) {
  check_shapes(outcomes.size(), truths.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) correct += is_correct(outcomes[i], truths[i]) ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(outcomes.size());
}

double weighted_f1(std::span<const PredictionOutcome> outcomes, std::span<const LocationId> truths) {
  check_shapes(outcomes.size(), truths.size());
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
  };
  std::map<LocationId, Counts> classes;
  for (auto t : truths) ++classes[t].support;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto truth = truths[i];
    if (is_correct(outcomes[i], truth)) {
      ++classes[truth].tp;
      continue;
    }
    ++classes[truth].fn;
    if (outcomes[i].status == OutcomeStatus::valid && outcomes[i].predicted) {
      auto it = classes.find(*outcomes[i].predicted);
      if (it != classes.end()) ++it->second.fp;
    }
  }
  double f1 = 0.0;
  const auto n = static_cast<double>(truths.size());
  for (const auto& [_, c] : classes) {
    if (c.support == 0) continue;
    const auto denom = 2 * c.tp + c.fp + c.fn;
    const double class_f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
    f1 += static_cast<double>(c.support) / n * class_f1;
  }
  return f1;
}

double visit_frequency(const PredictionInstance& instance) {
  std::size_t total = 0;
  const auto hits = count_hits(instance, total);
  if (total == 0) throw ValidationError("instance " + instance.id + " has no input records");
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::string_view to_string(FrequencyBin bin) {
  switch (bin) {
    case FrequencyBin::unseen: return "0";
    case FrequencyBin::low: return "(0,0.2]";
    case FrequencyBin::mid: return "(0.2,0.5]";
    case FrequencyBin::high: return "(0.5,1]";
  }
  return "0";
}

FrequencyBin parse_frequency_bin(std::string_view label) {
  for (auto b : kFrequencyBins) {
    if (to_string(b) == label) return b;
  }
  throw ValidationError("unknown frequency bin '" + std::string(label) + "'");
}

FrequencyBin frequency_bin(std::size_t hits, std::size_t total) {
  if (total == 0) throw ValidationError("frequency bin of an empty input");
  if (hits == 0) return FrequencyBin::unseen;
  if (5 * hits <= total) return FrequencyBin::low;
  if (2 * hits <= total) return FrequencyBin::mid;
  return FrequencyBin::high;
}

FrequencyBin frequency_bin(const PredictionInstance& instance) {
  std::size_t total = 0;
  const auto hits = count_hits(instance, total);
  if (total == 0) throw ValidationError("instance " + instance.id + " has no input records");
  return frequency_bin(hits, total);
}

std::vector<std::pair<FrequencyBin, BinStat>> stratified_accuracy(std::span<const PredictionOutcome> outcomes,
                                                                  std::span<const PredictionInstance> instances) {
  check_shapes(outcomes.size(), instances.size());
  std::array<BinStat, 4> stats{};
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto& s = stats[static_cast<std::size_t>(frequency_bin(instances[i]))];
    ++s.n;
    s.correct += is_correct(outcomes[i], instances[i].truth) ? 1 : 0;
  }
  std::vector<std::pair<FrequencyBin, BinStat>> out;
  const auto n = static_cast<double>(instances.size());
  for (auto b : kFrequencyBins) {
    auto s = stats[static_cast<std::size_t>(b)];
    if (s.n == 0) continue;
    s.acc = 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.n);
    s.share = 100.0 * static_cast<double>(s.n) / n;
    out.emplace_back(b, s);
  }
  return out;
}

double delta_acc(double acc_scenario, double acc_base) {
  if (acc_base == 0.0) throw DegenerateBase("base accuracy is zero; relative change is undefined");
  return 100.0 * (acc_scenario - acc_base) / acc_base;
}

EvaluationReport evaluate(std::span<const PredictionOutcome> outcomes, std::span<const PredictionInstance> instances,
                          std::optional<double> base_acc) {
  if (outcomes.size() != instances.size()) {
    throw ShapeError(fmt::format("{} outcomes for {} instances", outcomes.size(), instances.size()));
  }
  std::unordered_map<std::string_view, const PredictionOutcome*> by_id;
  for (const auto& o : outcomes) {
    if (!by_id.emplace(o.instance_id, &o).second) throw ShapeError("duplicate outcome for " + o.instance_id);
  }
  std::vector<PredictionOutcome> aligned;
  std::vector<LocationId> truths;
  aligned.reserve(instances.size());
  for (const auto& inst : instances) {
    auto it = by_id.find(inst.id);
    if (it == by_id.end()) throw ShapeError("no outcome for instance " + inst.id);
    aligned.push_back(*it->second);
    truths.push_back(inst.truth);
  }
  EvaluationReport r;
  r.acc_percent = accuracy(aligned, truths);
  r.weighted_f1 = weighted_f1(aligned, truths);
  r.n_total = aligned.size();
  for (const auto& o : aligned) {
    switch (o.status) {
      case OutcomeStatus::valid: ++r.n_valid; break;
      case OutcomeStatus::malformed: ++r.n_malformed; break;
      case OutcomeStatus::hallucination: ++r.n_hallucination; break;
      case OutcomeStatus::transport_error: ++r.n_transport_error; break;
    }
  }
  r.n_invalid = r.n_total - r.n_valid;
  r.per_bin = stratified_accuracy(aligned, instances);
  if (base_acc) {
    r.base_acc_percent = base_acc;
    r.delta_acc_vs_base = delta_acc(r.acc_percent, *base_acc);
  }
  return r;
}

ordered_json report_to_json(const EvaluationReport& r) {
  ordered_json j;
  j["acc_percent"] = r.acc_percent;
  j["weighted_f1"] = r.weighted_f1;
  j["n_total"] = r.n_total;
  j["n_valid"] = r.n_valid;
  j["n_invalid"] = r.n_invalid;
  j["invalid_breakdown"] = {{"malformed", r.n_malformed},
                            {"hallucination", r.n_hallucination},
                            {"transport_error", r.n_transport_error}};
  j["invalid_scoring"] = "counted as incorrect";
  auto bins = ordered_json::array();
  for (const auto& [bin, s] : r.per_bin) {
    bins.push_back({{"bin", to_string(bin)}, {"n", s.n}, {"correct", s.correct}, {"acc", s.acc}, {"share", s.share}});
  }
  j["per_bin"] = bins;
  j["base_acc_percent"] = r.base_acc_percent ? ordered_json(*r.base_acc_percent) : ordered_json(nullptr);
  j["delta_acc_vs_base"] = r.delta_acc_vs_base ? ordered_json(*r.delta_acc_vs_base) : ordered_json(nullptr);
  return j;
}

EvaluationReport report_from_json(const json& j) {
  try {
    EvaluationReport r;
    r.acc_percent = j.at("acc_percent").get<double>();
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    r.n_total = j.at("n_total").get<std::size_t>();
    r.n_valid = j.at("n_valid").get<std::size_t>();
    r.n_invalid = j.at("n_invalid").get<std::size_t>();
    if (j.contains("invalid_breakdown")) {
      const auto& b = j["invalid_breakdown"];
      r.n_malformed = b.value("malformed", std::size_t{0});
      r.n_hallucination = b.value("hallucination", std::size_t{0});
      r.n_transport_error = b.value("transport_error", std::size_t{0});
    }
    for (const auto& b : j.value("per_bin", json::array())) {
      BinStat s{b.at("n").get<std::size_t>(), b.at("correct").get<std::size_t>(), b.at("acc").get<double>(),
                b.at("share").get<double>()};
      r.per_bin.emplace_back(parse_frequency_bin(b.at("bin").get<std::string>()), s);
    }
    if (j.contains("base_acc_percent") && !j["base_acc_percent"].is_null()) {
      r.base_acc_percent = j["base_acc_percent"].get<double>();
    }
    if (j.contains("delta_acc_vs_base") && !j["delta_acc_vs_base"].is_null()) {
      r.delta_acc_vs_base = j["delta_acc_vs_base"].get<double>();
    }
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string report_table(const EvaluationReport& r) {
  std::string out;
  out += fmt::format("{:<22}{:>10.2f}\n", "ACC (%)", r.acc_percent);
  out += fmt::format("{:<22}{:>10.4f}\n", "Weighted F1", r.weighted_f1);
  out += fmt::format("{:<22}{:>10}\n", "Instances", r.n_total);
  out += fmt::format("{:<22}{:>10}\n", "Valid", r.n_valid);
  out += fmt::format("{:<22}{:>10}\n", "Malformed", r.n_malformed);
  out += fmt::format("{:<22}{:>10}\n", "Hallucination", r.n_hallucination);
  out += fmt::format("{:<22}{:>10}\n", "Transport error", r.n_transport_error);
  if (r.delta_acc_vs_base) {
    out += fmt::format("{:<22}{:>10.2f}\n", "Base ACC (%)", *r.base_acc_percent);
    out += fmt::format("{:<22}{:>+10.2f}\n", "Delta ACC (%)", *r.delta_acc_vs_base);
  }
  out += "\nInvalid replies are counted as incorrect.\n\n";
  out += fmt::format("{:<12}{:>8}{:>12}{:>10}\n", "Frequency", "n", "Share (%)", "ACC (%)");
  for (const auto& [bin, s] : r.per_bin) {
    out += fmt::format("{:<12}{:>8}{:>12.2f}{:>10.2f}\n", to_string(bin), s.n, s.share, s.acc);
  }
  return out;
}

}  // namespace mobkit
