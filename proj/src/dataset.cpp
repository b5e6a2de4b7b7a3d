#include "mobkit/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "mobkit/errors.hpp"
#include "mobkit/io.hpp"
#include "mobkit/rng.hpp"

namespace mobkit {
namespace {

constexpr std::string_view kOutputPrefix = "{prediction: ";

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

// Largest-remainder apportionment of `total` over `weights`, never exceeding `limits`.
std::vector<std::size_t> apportion(std::size_t total, std::vector<double> weights,
                                   const std::vector<std::size_t>& limits) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> quota(n, 0);
  std::vector<bool> fixed(n, false);
  std::size_t remaining = total;
  bool changed = true;
  while (changed) {
    changed = false;
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!fixed[i]) weight_sum += weights[i];
    }
    if (weight_sum <= 0.0) break;
    for (std::size_t i = 0; i < n; ++i) {
      if (fixed[i]) continue;
      if (static_cast<double>(remaining) * weights[i] / weight_sum > static_cast<double>(limits[i])) {
        quota[i] = limits[i];
        fixed[i] = true;
        remaining -= limits[i];
        changed = true;
      }
    }
  }
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!fixed[i]) weight_sum += weights[i];
  }
  if (weight_sum <= 0.0) return quota;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (fixed[i]) continue;
    const double exact = static_cast<double>(remaining) * weights[i] / weight_sum;
    quota[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < remaining && k < remainders.size(); ++k) {
    const auto i = remainders[k].second;
    if (quota[i] < limits[i]) {
      ++quota[i];
      ++assigned;
    }
  }
  return quota;
}

}  // namespace

std::string prediction_output(LocationId truth) {
  if (truth < 0) throw ValidationError("ground truth " + std::to_string(truth) + " is not a valid place id");
  return std::string(kOutputPrefix) + std::to_string(truth) + "}";
}

std::optional<LocationId> parse_prediction_output(std::string_view output) {
  if (output.size() <= kOutputPrefix.size() + 1 || output.substr(0, kOutputPrefix.size()) != kOutputPrefix ||
      output.back() != '}') {
    return std::nullopt;
  }
  const auto digits = output.substr(kOutputPrefix.size(), output.size() - kOutputPrefix.size() - 1);
  if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::nullopt;
  }
  LocationId id = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
  return id;
}

std::vector<InstructionSample> assemble(const StyleBank& styles, std::span<const PredictionInstance> instances,
                                        std::uint64_t seed, const std::string& dataset_tag) {
  Rng rng(seed);
  std::vector<InstructionSample> samples;
  samples.reserve(instances.size());
  for (const auto& inst : instances) {
    auto it = styles.find(inst.task);
    if (it == styles.end() || it->second.empty()) {
      throw ConfigError("no style bank for task " + std::string(to_string(inst.task)));
    }
    const auto& bank = it->second;
    const auto& style = bank[static_cast<std::size_t>(rng.below(bank.size()))];
    InstructionSample s;
    s.instruction = render_instruction(style, inst);
    s.output = prediction_output(inst.truth);
    s.meta = SampleMeta{inst.task, inst.user, style.style_id, dataset_tag, inst.id};
    samples.push_back(std::move(s));
  }
  return samples;
}

bool has_target_leakage(const InstructionSample& sample, const PredictionInstance& instance) {
  const auto& tmpl = base_template(instance.task);
  if (count_occurrences(sample.instruction, render_data_inputs(tmpl, instance)) != 1) return true;
  const auto marker = sample.instruction.rfind("<target>:");
  if (marker == std::string::npos) return true;
  auto tail = std::string_view(sample.instruction).substr(marker + 9);
  const auto open = tail.find('(');
  const auto close = tail.find(')');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return true;
  const auto tuple = tail.substr(open, close - open + 1);
  if (count_occurrences(tuple, ", ") + 1 != target_arity(instance.task)) return true;
  return tuple != format_target(instance.target, instance.task);
}

std::string_view to_string(DatasetFormat format) {
  return format == DatasetFormat::alpaca_jsonl ? "alpaca_jsonl" : "chat_jsonl";
}

DatasetFormat parse_dataset_format(std::string_view name) {
  if (name == "alpaca_jsonl" || name == "alpaca") return DatasetFormat::alpaca_jsonl;
  if (name == "chat_jsonl" || name == "chat") return DatasetFormat::chat_jsonl;
  throw ConfigError("unknown dataset format '" + std::string(name) + "'");
}

std::filesystem::path meta_path_for(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p.replace_extension();
  p += ".meta.jsonl";
  return p;
}

json sample_meta_to_json(const SampleMeta& meta) {
  return json{{"task_kind", to_string(meta.task)}, {"user_id", meta.user_id},     {"style_id", meta.style_id},
              {"dataset_tag", meta.dataset_tag},   {"instance_id", meta.instance_id}};
}

SampleMeta sample_meta_from_json(const json& j) {
  try {
    return SampleMeta{parse_task_kind(j.at("task_kind").get<std::string>()), j.at("user_id").get<std::string>(),
                      j.at("style_id").get<int>(), j.at("dataset_tag").get<std::string>(),
                      j.value("instance_id", std::string{})};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed sample meta: ") + e.what());
  }
}

DatasetText render_dataset(std::span<const InstructionSample> samples, DatasetFormat format) {
  DatasetText text;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    ordered_json row;
    if (format == DatasetFormat::alpaca_jsonl) {
      row["instruction"] = s.instruction;
      row["input"] = "";
      row["output"] = s.output;
    } else {
      row["messages"] = ordered_json::array({ordered_json{{"role", "user"}, {"content", s.instruction}},
                                             ordered_json{{"role", "assistant"}, {"content", s.output}}});
    }
    text.rows += row.dump() + "\n";
    json meta = sample_meta_to_json(s.meta);
    meta["row"] = i;
    text.meta += meta.dump() + "\n";
  }
  return text;
}

void emit_dataset(std::span<const InstructionSample> samples, DatasetFormat format,
                  const std::filesystem::path& path) {
  if (samples.empty()) throw ValidationError("refusing to emit an empty instruction dataset");
  const auto text = render_dataset(samples, format);
  io::write_text(path, text.rows);
  io::write_text(meta_path_for(path), text.meta);
}

std::vector<InstructionSample> read_dataset(const std::filesystem::path& path) {
  const auto rows = io::read_jsonl(path);
  std::vector<InstructionSample> samples;
  samples.reserve(rows.size());
  for (const auto& row : rows) {
    InstructionSample s;
    try {
      if (row.contains("messages")) {
        const auto& messages = row.at("messages");
        for (const auto& m : messages) {
          const auto role = m.at("role").get<std::string>();
          if (role == "user") s.instruction = m.at("content").get<std::string>();
          else if (role == "assistant") s.output = m.at("content").get<std::string>();
        }
      } else {
        s.instruction = row.at("instruction").get<std::string>();
        s.output = row.at("output").get<std::string>();
      }
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ": malformed dataset row: " + e.what());
    }
    samples.push_back(std::move(s));
  }
  const auto meta_path = meta_path_for(path);
  if (std::filesystem::exists(meta_path)) {
    const auto metas = io::read_jsonl(meta_path);
    if (metas.size() != samples.size()) {
      throw ValidationError(meta_path.string() + " does not match the dataset row count");
    }
    for (std::size_t i = 0; i < metas.size(); ++i) samples[i].meta = sample_meta_from_json(metas[i]);
  }
  return samples;
}

std::vector<InstructionSample> mix_corpora(std::span<const Corpus> corpora, std::optional<std::size_t> cap,
                                           std::uint64_t seed) {
  if (corpora.size() < 2) throw ConfigError("mixing needs at least two corpora");
  std::size_t available = 0;
  std::vector<std::size_t> sizes;
  std::vector<double> weights;
  const bool weighted = std::any_of(corpora.begin(), corpora.end(), [](const Corpus& c) { return c.weight.has_value(); });
  for (const auto& c : corpora) {
    available += c.samples.size();
    sizes.push_back(c.samples.size());
    if (weighted) {
      const double w = c.weight.value_or(0.0);
      if (w < 0.0) throw ConfigError("corpus weights must be non-negative");
      weights.push_back(w);
    } else {
      weights.push_back(static_cast<double>(c.samples.size()));
    }
  }
  std::size_t total = available;
  if (cap) {
    if (*cap > available) {
      spdlog::warn("mixture cap {} exceeds the {} available samples; using all of them", *cap, available);
    } else {
      total = *cap;
    }
  }
  const auto quota = apportion(total, weights, sizes);
  Rng rng(seed);
  std::vector<InstructionSample> mixed;
  mixed.reserve(total);
  for (std::size_t c = 0; c < corpora.size(); ++c) {
    std::vector<std::size_t> order(corpora[c].samples.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    for (std::size_t k = 0; k < quota[c]; ++k) {
      auto s = corpora[c].samples[order[k]];
      if (s.meta.dataset_tag.empty()) s.meta.dataset_tag = corpora[c].tag;
      mixed.push_back(std::move(s));
    }
  }
  rng.shuffle(std::span(mixed));
  return mixed;
}

}  // namespace mobkit
