#include "mobkit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <toml.hpp>

#include "mobkit/assets.hpp"
#include "mobkit/errors.hpp"
#include "mobkit/hash.hpp"
#include "mobkit/io.hpp"
#include "mobkit/prompt.hpp"

namespace mobkit {
namespace fs = std::filesystem;
namespace {

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json j = json::object();
    for (const auto& [key, value] : *t) j[std::string(key.str())] = toml_to_json(value);
    return j;
  }
  if (const auto* a = node.as_array()) {
    json j = json::array();
    for (const auto& value : *a) j.push_back(toml_to_json(value));
    return j;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) return f->get();
  if (const auto* b = node.as_boolean()) return b->get();
  std::ostringstream out;
  if (const auto* d = node.as_date()) out << d->get();
  else if (const auto* tm = node.as_time()) out << tm->get();
  else if (const auto* dt = node.as_date_time()) out << dt->get();
  return out.str();
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(fmt::format("[{}] must be a table", where));
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("unknown key '{}' in [{}]", key, where));
    }
  }
}

template <typename T>
T get_or(const json& j, std::string_view key, T fallback, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->template get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("[{}] {} has the wrong type", where, key));
  }
}

const json& section(const json& root, std::string_view name) {
  static const json empty = json::object();
  auto it = root.find(name);
  return it == root.end() ? empty : *it;
}

bool safe_tag(std::string_view tag) {
  return !tag.empty() && std::all_of(tag.begin(), tag.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
           c == '.';
  });
}

TaskKind default_task(DataFamily family) {
  switch (family) {
    case DataFamily::gps: return TaskKind::gps_location;
    case DataFamily::checkin: return TaskKind::checkin_location;
    case DataFamily::afc: break;
  }
  throw ConfigError("AFC datasets need task = \"trip_origin\" or \"trip_destination\"");
}

bool task_fits_family(TaskKind task, DataFamily family) {
  switch (family) {
    case DataFamily::gps: return task == TaskKind::gps_location;
    case DataFamily::checkin: return task == TaskKind::checkin_location;
    case DataFamily::afc: return task == TaskKind::trip_origin || task == TaskKind::trip_destination;
  }
  return false;
}

DatasetSpec parse_dataset(const json& j, std::size_t i, const fs::path& base_dir) {
  const auto where = fmt::format("datasets[{}]", i);
  check_keys(j, {"tag", "family", "task", "input", "synthetic", "cell_m"}, where);
  DatasetSpec d;
  d.tag = get_or<std::string>(j, "tag", "", where);
  if (!safe_tag(d.tag)) throw ConfigError(where + ": tag must be non-empty and use only [A-Za-z0-9._-]");
  const bool has_input = j.contains("input");
  const bool has_synthetic = j.contains("synthetic");
  if (has_input == has_synthetic) throw ConfigError(where + ": set exactly one of input or synthetic");
  std::optional<DataFamily> family;
  if (j.contains("family")) family = parse_data_family(get_or<std::string>(j, "family", "", where));
  if (has_synthetic) {
    json profile = j["synthetic"];
    if (!profile.is_object()) throw ConfigError(where + ": synthetic must be a table");
    if (family && !profile.contains("family")) profile["family"] = std::string(to_string(*family));
    d.synthetic = profile_from_json(profile);
    if (family && *family != d.synthetic->family) throw ConfigError(where + ": family disagrees with synthetic.family");
    family = d.synthetic->family;
  } else {
    fs::path p = get_or<std::string>(j, "input", "", where);
    if (p.is_relative()) p = base_dir / p;
    if (!fs::exists(p)) throw ConfigError(where + ": input file " + p.string() + " does not exist");
    d.input = p;
  }
  if (!family) throw ConfigError(where + ": family is required for file inputs");
  d.family = *family;
  d.task = j.contains("task") ? parse_task_kind(get_or<std::string>(j, "task", "", where)) : default_task(d.family);
  if (!task_fits_family(d.task, d.family)) {
    throw ConfigError(fmt::format("{}: task {} does not apply to {} data", where, to_string(d.task), to_string(d.family)));
  }
  d.cell_m = get_or<double>(j, "cell_m", d.cell_m, where);
  if (!(d.cell_m > 0.0)) throw ConfigError(where + ": cell_m must be positive");
  return d;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json refs_to_json(const std::vector<ArtifactRef>& refs) {
  json a = json::array();
  for (const auto& r : refs) a.push_back({{"path", r.path}, {"sha256", r.sha256}});
  return a;
}

std::vector<ArtifactRef> refs_from_json(const json& j) {
  std::vector<ArtifactRef> refs;
  for (const auto& r : j) refs.push_back({r.at("path").get<std::string>(), r.at("sha256").get<std::string>()});
  return refs;
}

json endpoint_fingerprint(const PipelineConfig& cfg, const std::string& name) {
  json e = cfg.endpoints.at(name);
  e.erase("api_key");
  e.erase("api_key_env");
  e.erase("transcript");
  return e;
}

std::string templates_hash() {
  std::string all;
  for (auto task : kAllTaskKinds) all += base_template(task).text();
  return sha256_hex(all);
}

std::vector<PredictionInstance> read_instances(const fs::path& path) {
  std::vector<PredictionInstance> out;
  for (const auto& row : io::read_jsonl(path)) out.push_back(instance_from_json(row));
  return out;
}

void write_instances(const fs::path& path, std::span<const PredictionInstance> instances) {
  std::vector<json> rows;
  rows.reserve(instances.size());
  for (const auto& inst : instances) rows.push_back(instance_to_json(inst));
  io::write_jsonl(path, rows);
}

IngestResult ingest_dataset(const DatasetSpec& d, std::uint64_t seed) {
  if (d.input) return ingest_file(d.family, *d.input, d.cell_m, d.task);
  const auto data = generate_synthetic_users(*d.synthetic, seed);
  switch (d.family) {
    case DataFamily::gps: return ingest_gps(data.gps, d.cell_m);
    case DataFamily::checkin: return ingest_checkins(data.checkins);
    case DataFamily::afc: return ingest_afc(data.trips, d.task);
  }
  throw ConfigError("unknown data family");
}

std::vector<TaskKind> tasks_in_order(const PipelineConfig& cfg) {
  std::vector<TaskKind> tasks;
  for (const auto& d : cfg.datasets) {
    if (std::find(tasks.begin(), tasks.end(), d.task) == tasks.end()) tasks.push_back(d.task);
  }
  return tasks;
}

struct StageResult {
  std::vector<std::string> outputs;
  std::uint64_t requests = 0;
  Usage usage;
  std::optional<double> cost;
};

void add_usage(StageResult& result, const Gateway& gateway) {
  const auto u = gateway.ledger().totals();
  result.requests += gateway.ledger().requests();
  result.usage.prompt_tokens += u.prompt_tokens;
  result.usage.completion_tokens += u.completion_tokens;
  const auto& prices = default_price_table();
  if (prices.find(gateway.config().model) != prices.end()) {
    result.cost = result.cost.value_or(0.0) + estimate_cost(u, prices, gateway.config().model);
  }
}

class Runner {
 public:
  Runner(const PipelineConfig& cfg, const RunOptions& options) : cfg_(cfg) {
    fs::create_directories(cfg_.out_dir);
    manifest_path_ = cfg_.out_dir / "manifest.json";
    if (!options.force && fs::exists(manifest_path_)) {
      try {
        previous_ = manifest_from_json(io::read_json(manifest_path_));
      } catch (const std::exception& e) {
        spdlog::warn("ignoring unreadable manifest {}: {}", manifest_path_.string(), e.what());
      }
    }
    manifest_.config_hash = cfg_.config_hash;
    manifest_.seed = cfg_.seed;
  }

  fs::path path(const std::string& rel) const { return cfg_.out_dir / rel; }

  std::string hash_of(const std::string& rel) const { return sha256_file(path(rel)); }

  template <typename Body>
  void stage(std::string name, const json& key, std::vector<ArtifactRef> inputs, Body&& body) {
    StageRecord rec;
    rec.stage = std::move(name);
    rec.input_hash = sha256_hex(json{{"stage", rec.stage}, {"key", key}}.dump());
    rec.inputs = std::move(inputs);
    rec.started_at = utc_now();
    if (const auto* old = previous_ ? previous_->find(rec.stage) : nullptr;
        old && (old->status == "ran" || old->status == "cached") && old->input_hash == rec.input_hash &&
        outputs_intact(old->outputs)) {
      rec.status = "cached";
      rec.outputs = old->outputs;
      rec.finished_at = utc_now();
      spdlog::info("{}: cached", rec.stage);
      manifest_.stages.push_back(std::move(rec));
      save();
      return;
    }
    try {
      StageResult result = body();
      for (const auto& out : result.outputs) rec.outputs.push_back({out, hash_of(out)});
      rec.endpoint_requests = result.requests;
      rec.usage = result.usage;
      rec.cost_usd = result.cost;
      rec.status = "ran";
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.error = e.what();
      rec.finished_at = utc_now();
      manifest_.endpoint_requests += rec.endpoint_requests;
      manifest_.stages.push_back(std::move(rec));
      save();
      throw;
    }
    rec.finished_at = utc_now();
    manifest_.endpoint_requests += rec.endpoint_requests;
    spdlog::info("{}: wrote {} artifact(s)", rec.stage, rec.outputs.size());
    manifest_.stages.push_back(std::move(rec));
    save();
  }

  void skip(std::string name, std::string reason) {
    StageRecord rec;
    rec.stage = std::move(name);
    rec.status = "skipped";
    rec.error = std::move(reason);
    rec.started_at = rec.finished_at = utc_now();
    manifest_.stages.push_back(std::move(rec));
    save();
  }

  RunManifest finish() { return manifest_; }

 private:
  bool outputs_intact(const std::vector<ArtifactRef>& outputs) const {
    return std::all_of(outputs.begin(), outputs.end(), [&](const ArtifactRef& r) {
      return fs::exists(path(r.path)) && hash_of(r.path) == r.sha256;
    });
  }

  void save() const { io::write_json(manifest_path_, manifest_to_json(manifest_)); }

  const PipelineConfig& cfg_;
  fs::path manifest_path_;
  std::optional<RunManifest> previous_;
  RunManifest manifest_;
};

}  // namespace

std::string interpolate_env(std::string_view text) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto start = text.find("${", i);
    if (start == std::string_view::npos) {
      out.append(text.substr(i));
      break;
    }
    out.append(text.substr(i, start - i));
    const auto end = text.find('}', start + 2);
    if (end == std::string_view::npos) throw ConfigError("unterminated ${ in configuration value");
    const std::string name(text.substr(start + 2, end - start - 2));
    const char* value = std::getenv(name.c_str());
    if (value == nullptr) throw ConfigError("environment variable " + name + " is not set");
    out += value;
    i = end + 1;
  }
  return out;
}

EndpointConfig resolve_endpoint(const PipelineConfig& cfg, const std::string& name, bool teacher_role) {
  auto it = cfg.endpoints.find(name);
  if (it == cfg.endpoints.end()) throw ConfigError("no [endpoints." + name + "] table");
  json j = it->second;
  for (auto& [key, value] : j.items()) {
    if (value.is_string()) value = interpolate_env(value.get<std::string>());
  }
  if (teacher_role && !j.contains("temperature")) j["temperature"] = 0.3;
  if (j.contains("transcript")) {
    fs::path p = j["transcript"].get<std::string>();
    if (p.is_relative()) p = cfg.out_dir / p;
    j["transcript"] = p.string();
  }
  auto endpoint = endpoint_from_json(j);
  if (!teacher_role && endpoint.temperature != 0.0) {
    spdlog::warn("endpoint {} predicts with temperature {} (explicit override of 0)", name, endpoint.temperature);
  }
  return endpoint;
}

PipelineConfig parse_pipeline_config(std::string_view toml_text, const fs::path& base_dir) {
  json root;
  try {
    root = toml_to_json(toml::parse(toml_text));
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("invalid TOML at line {}: {}", e.source().begin.line, e.description()));
  }
  check_keys(root, {"seed", "out_dir", "window", "datasets", "styles", "assemble", "predict", "evaluate", "endpoints"},
             "root");
  PipelineConfig cfg;
  cfg.canonical = root;
  cfg.config_hash = sha256_hex(root.dump());
  const auto seed = get_or<std::int64_t>(root, "seed", 0, "root");
  if (seed < 0) throw ConfigError("seed must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.out_dir = get_or<std::string>(root, "out_dir", "run", "root");
  if (cfg.out_dir.is_relative()) cfg.out_dir = base_dir / cfg.out_dir;

  const auto& window = section(root, "window");
  check_keys(window, {"history_len", "context_len", "require_full_history", "test_fraction"}, "window");
  const auto history = get_or<std::int64_t>(window, "history_len", 40, "window");
  const auto context = get_or<std::int64_t>(window, "context_len", 5, "window");
  if (history < 0 || context < 1) throw ConfigError("[window] needs history_len >= 0 and context_len >= 1");
  cfg.window.history_len = static_cast<std::size_t>(history);
  cfg.window.context_len = static_cast<std::size_t>(context);
  cfg.window.require_full_history = get_or<bool>(window, "require_full_history", false, "window");
  cfg.test_fraction = get_or<double>(window, "test_fraction", cfg.test_fraction, "window");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) throw ConfigError("[window] test_fraction must be in (0, 1)");

  const auto datasets = root.find("datasets");
  if (datasets == root.end() || !datasets->is_array() || datasets->empty()) {
    throw ConfigError("at least one [[datasets]] entry is required");
  }
  std::set<std::string> tags;
  for (std::size_t i = 0; i < datasets->size(); ++i) {
    cfg.datasets.push_back(parse_dataset((*datasets)[i], i, base_dir));
    if (!tags.insert(cfg.datasets.back().tag).second) {
      throw ConfigError("duplicate dataset tag '" + cfg.datasets.back().tag + "'");
    }
  }

  const auto& endpoints = section(root, "endpoints");
  if (!endpoints.is_object()) throw ConfigError("[endpoints] must be a table of tables");
  for (const auto& [name, table] : endpoints.items()) {
    if (!table.is_object()) throw ConfigError("[endpoints." + name + "] must be a table");
    cfg.endpoints.emplace(name, table);
  }

  const auto& styles = section(root, "styles");
  check_keys(styles, {"n_styles", "teacher"}, "styles");
  cfg.n_styles = get_or<int>(styles, "n_styles", 1, "styles");
  if (cfg.n_styles < 1) throw ConfigError("[styles] n_styles must be >= 1");
  if (styles.contains("teacher")) cfg.teacher = get_or<std::string>(styles, "teacher", "", "styles");
  if (cfg.n_styles > 1 && !cfg.teacher) throw ConfigError("[styles] n_styles > 1 needs a teacher endpoint");

  const auto& assemble = section(root, "assemble");
  check_keys(assemble, {"format", "cap"}, "assemble");
  cfg.format = parse_dataset_format(get_or<std::string>(assemble, "format", "alpaca_jsonl", "assemble"));
  if (assemble.contains("cap")) {
    const auto cap = get_or<std::int64_t>(assemble, "cap", 0, "assemble");
    if (cap < 1) throw ConfigError("[assemble] cap must be positive");
    cfg.cap = static_cast<std::size_t>(cap);
  }

  if (root.contains("predict")) {
    const auto& predict = root["predict"];
    check_keys(predict, {"endpoint", "baseline"}, "predict");
    cfg.predict = true;
    if (predict.contains("endpoint")) cfg.predict_endpoint = get_or<std::string>(predict, "endpoint", "", "predict");
    if (predict.contains("baseline")) {
      cfg.predict_baseline = parse_baseline_kind(get_or<std::string>(predict, "baseline", "", "predict"));
    }
    if (cfg.predict_endpoint.has_value() == cfg.predict_baseline.has_value()) {
      throw ConfigError("[predict] needs exactly one of endpoint or baseline");
    }
  }

  const auto& evaluate = section(root, "evaluate");
  check_keys(evaluate, {"base_acc"}, "evaluate");
  if (evaluate.contains("base_acc")) {
    cfg.base_acc = get_or<double>(evaluate, "base_acc", 0.0, "evaluate");
    if (!(*cfg.base_acc > 0.0)) throw DegenerateBase("[evaluate] base_acc must be positive");
  }

  // Resolve every endpoint the run will call so missing tables, keys or variables fail now.
  if (cfg.n_styles > 1) resolve_endpoint(cfg, *cfg.teacher, true);
  if (cfg.predict_endpoint) resolve_endpoint(cfg, *cfg.predict_endpoint, false);
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  const auto text = io::read_text(path);
  return parse_pipeline_config(text, fs::absolute(path).parent_path());
}

const StageRecord* RunManifest::find(std::string_view stage) const {
  for (const auto& s : stages) {
    if (s.stage == stage) return &s;
  }
  return nullptr;
}

json manifest_to_json(const RunManifest& m) {
  ordered_json j;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["endpoint_requests"] = m.endpoint_requests;
  auto stages = ordered_json::array();
  for (const auto& s : m.stages) {
    ordered_json r;
    r["stage"] = s.stage;
    r["status"] = s.status;
    r["input_hash"] = s.input_hash;
    r["inputs"] = refs_to_json(s.inputs);
    r["outputs"] = refs_to_json(s.outputs);
    r["started_at"] = s.started_at;
    r["finished_at"] = s.finished_at;
    r["endpoint_requests"] = s.endpoint_requests;
    r["usage"] = {{"prompt_tokens", s.usage.prompt_tokens}, {"completion_tokens", s.usage.completion_tokens}};
    r["cost_usd"] = s.cost_usd ? ordered_json(*s.cost_usd) : ordered_json(nullptr);
    if (!s.error.empty()) r["error"] = s.error;
    stages.push_back(r);
  }
  j["stages"] = stages;
  return json::parse(j.dump());
}

RunManifest manifest_from_json(const json& j) {
  try {
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.endpoint_requests = j.value("endpoint_requests", std::uint64_t{0});
    for (const auto& r : j.at("stages")) {
      StageRecord s;
      s.stage = r.at("stage").get<std::string>();
      s.status = r.at("status").get<std::string>();
      s.input_hash = r.value("input_hash", std::string{});
      s.inputs = refs_from_json(r.value("inputs", json::array()));
      s.outputs = refs_from_json(r.value("outputs", json::array()));
      s.started_at = r.value("started_at", std::string{});
      s.finished_at = r.value("finished_at", std::string{});
      s.endpoint_requests = r.value("endpoint_requests", std::uint64_t{0});
      if (r.contains("usage")) {
        s.usage.prompt_tokens = r["usage"].value("prompt_tokens", std::uint64_t{0});
        s.usage.completion_tokens = r["usage"].value("completion_tokens", std::uint64_t{0});
      }
      if (r.contains("cost_usd") && !r["cost_usd"].is_null()) s.cost_usd = r["cost_usd"].get<double>();
      s.error = r.value("error", std::string{});
      m.stages.push_back(std::move(s));
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed run manifest: ") + e.what());
  }
}

std::vector<std::string> prediction_prompts(std::span<const PredictionInstance> instances) {
  std::vector<std::string> prompts;
  prompts.reserve(instances.size());
  for (const auto& inst : instances) prompts.push_back(render_prompt(base_template(inst.task), inst));
  return prompts;
}

std::vector<PredictionOutcome> predict_with_endpoint(Gateway& gateway, std::span<const PredictionInstance> instances) {
  const auto prompts = prediction_prompts(instances);
  const auto replies = gateway.complete_batch(prompts);
  std::vector<PredictionOutcome> outcomes;
  outcomes.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (replies[i].completion) {
      outcomes.push_back(parse_reply(replies[i].completion->text, instances[i].id));
    } else {
      outcomes.push_back(transport_failure(instances[i].id, replies[i].error));
    }
  }
  return outcomes;
}

RunManifest run_pipeline(const PipelineConfig& cfg, const RunOptions& options) {
  Runner run(cfg, options);
  const auto& root = cfg.canonical;

  auto train_path = [](const DatasetSpec& d) { return "ingest/" + d.tag + ".train.jsonl"; };
  auto test_path = [](const DatasetSpec& d) { return "ingest/" + d.tag + ".test.jsonl"; };
  auto styles_path = [](TaskKind t) { return "styles/" + std::string(to_string(t)) + ".jsonl"; };

  // ingest
  {
    std::vector<ArtifactRef> inputs;
    json files = json::array();
    for (const auto& d : cfg.datasets) {
      if (d.input) {
        inputs.push_back({d.input->string(), sha256_file(*d.input)});
        files.push_back(inputs.back().sha256);
      }
    }
    const json key{{"datasets", root["datasets"]}, {"window", section(root, "window")}, {"seed", cfg.seed},
                   {"files", files}};
    run.stage("ingest", key, inputs, [&] {
      StageResult result;
      for (std::size_t i = 0; i < cfg.datasets.size(); ++i) {
        const auto& d = cfg.datasets[i];
        const auto ingested = ingest_dataset(d, cfg.seed + i);
        auto batch = make_instances(ingested.users, d.task, cfg.window);
        if (batch.instances.empty()) throw EmptyDataset("dataset " + d.tag + " yields no prediction instances");
        for (auto& inst : batch.instances) inst.id = d.tag + "/" + inst.id;
        const auto split = split_instances(batch.instances, cfg.test_fraction);
        const auto index_rel = "ingest/" + d.tag + ".index.json";
        io::write_json(run.path(index_rel), ingested.index.to_json());
        write_instances(run.path(train_path(d)), split.train);
        write_instances(run.path(test_path(d)), split.test);
        result.outputs.insert(result.outputs.end(), {index_rel, train_path(d), test_path(d)});
        spdlog::info("{}: {} train / {} test instances, {} locations", d.tag, split.train.size(), split.test.size(),
                     ingested.index.size());
      }
      return result;
    });
  }

  // forge-styles
  {
    const auto tasks = tasks_in_order(cfg);
    json key{{"styles", section(root, "styles")}, {"templates", templates_hash()}};
    for (auto t : tasks) key["tasks"].push_back(to_string(t));
    if (cfg.n_styles > 1) key["teacher"] = endpoint_fingerprint(cfg, *cfg.teacher);
    run.stage("forge-styles", key, {}, [&] {
      StageResult result;
      std::optional<Gateway> teacher;
      if (cfg.n_styles > 1) teacher.emplace(resolve_endpoint(cfg, *cfg.teacher, true));
      for (auto task : tasks) {
        const auto bank = forge_styles(task, cfg.n_styles, [&](const std::string& prompt) {
          return teacher->complete(prompt).text;
        });
        std::vector<json> rows;
        for (const auto& s : bank) rows.push_back(style_to_json(s));
        io::write_jsonl(run.path(styles_path(task)), rows);
        result.outputs.push_back(styles_path(task));
      }
      if (teacher) add_usage(result, *teacher);
      return result;
    });
  }

  // assemble
  {
    json key{{"assemble", section(root, "assemble")}, {"seed", cfg.seed}};
    for (const auto& d : cfg.datasets) key["train"].push_back(run.hash_of(train_path(d)));
    for (auto t : tasks_in_order(cfg)) key["styles"].push_back(run.hash_of(styles_path(t)));
    run.stage("assemble", key, {}, [&] {
      StyleBank bank;
      for (auto t : tasks_in_order(cfg)) {
        for (const auto& row : io::read_jsonl(run.path(styles_path(t)))) bank[t].push_back(style_from_json(row));
      }
      std::vector<Corpus> corpora;
      for (std::size_t i = 0; i < cfg.datasets.size(); ++i) {
        const auto& d = cfg.datasets[i];
        const auto train = read_instances(run.path(train_path(d)));
        corpora.push_back(Corpus{d.tag, assemble(bank, train, cfg.seed + i, d.tag), std::nullopt});
      }
      std::vector<InstructionSample> samples;
      if (corpora.size() >= 2) {
        samples = mix_corpora(corpora, cfg.cap, cfg.seed);
      } else {
        samples = std::move(corpora.front().samples);
        if (cfg.cap && *cfg.cap < samples.size()) samples.resize(*cfg.cap);
        else if (cfg.cap && *cfg.cap > samples.size()) {
          spdlog::warn("cap {} exceeds the {} available samples; using all of them", *cfg.cap, samples.size());
        }
      }
      const std::string rel = "dataset/train.jsonl";
      emit_dataset(samples, cfg.format, run.path(rel));
      StageResult result;
      result.outputs = {rel, fs::relative(meta_path_for(run.path(rel)), cfg.out_dir).string()};
      return result;
    });
  }

  // predict
  const std::string outcomes_rel = "predict/outcomes.jsonl";
  if (!cfg.predict) {
    run.skip("predict", "no [predict] section");
    run.skip("evaluate", "nothing was predicted");
    return run.finish();
  }
  {
    json key{{"predict", root["predict"]}, {"templates", templates_hash()}};
    for (const auto& d : cfg.datasets) key["test"].push_back(run.hash_of(test_path(d)));
    if (cfg.predict_endpoint) key["endpoint"] = endpoint_fingerprint(cfg, *cfg.predict_endpoint);
    run.stage("predict", key, {}, [&] {
      std::vector<PredictionInstance> test;
      for (const auto& d : cfg.datasets) {
        auto part = read_instances(run.path(test_path(d)));
        test.insert(test.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
      StageResult result;
      std::vector<PredictionOutcome> outcomes;
      if (cfg.predict_baseline) {
        outcomes = run_baseline(*cfg.predict_baseline, test);
      } else {
        Gateway gateway(resolve_endpoint(cfg, *cfg.predict_endpoint, false));
        outcomes = predict_with_endpoint(gateway, test);
        add_usage(result, gateway);
      }
      std::vector<json> rows;
      for (const auto& o : outcomes) rows.push_back(outcome_to_json(o));
      io::write_jsonl(run.path(outcomes_rel), rows);
      result.outputs.push_back(outcomes_rel);
      return result;
    });
  }

  // evaluate
  {
    json key{{"evaluate", section(root, "evaluate")}, {"outcomes", run.hash_of(outcomes_rel)}};
    for (const auto& d : cfg.datasets) key["test"].push_back(run.hash_of(test_path(d)));
    run.stage("evaluate", key, {}, [&] {
      std::unordered_map<std::string, PredictionOutcome> by_id;
      for (const auto& row : io::read_jsonl(run.path(outcomes_rel))) {
        auto o = outcome_from_json(row);
        by_id.emplace(o.instance_id, std::move(o));
      }
      StageResult result;
      ordered_json summary = ordered_json::object();
      for (const auto& d : cfg.datasets) {
        const auto test = read_instances(run.path(test_path(d)));
        std::vector<PredictionOutcome> outcomes;
        for (const auto& inst : test) {
          auto it = by_id.find(inst.id);
          if (it == by_id.end()) throw ShapeError("no outcome for instance " + inst.id);
          outcomes.push_back(it->second);
        }
        const auto report = evaluate(outcomes, test, cfg.base_acc);
        const auto json_rel = "evaluate/" + d.tag + ".report.json";
        const auto text_rel = "evaluate/" + d.tag + ".report.txt";
        io::write_json(run.path(json_rel), report_to_json(report));
        io::write_text(run.path(text_rel), report_table(report));
        summary[d.tag] = report_to_json(report);
        result.outputs.insert(result.outputs.end(), {json_rel, text_rel});
      }
      const std::string summary_rel = "evaluate/summary.json";
      io::write_json(run.path(summary_rel), summary);
      result.outputs.push_back(summary_rel);
      return result;
    });
  }
  return run.finish();
}

std::vector<ScenarioRow> scenario_eval(const EvaluationReport& base,
                                       std::span<const std::pair<std::string, EvaluationReport>> scenarios) {
  std::vector<ScenarioRow> rows;
  for (const auto& [name, report] : scenarios) {
    rows.push_back({name, report.acc_percent, base.acc_percent, delta_acc(report.acc_percent, base.acc_percent)});
  }
  return rows;
}

ordered_json scenario_rows_to_json(std::span<const ScenarioRow> rows) {
  auto a = ordered_json::array();
  for (const auto& r : rows) {
    a.push_back({{"scenario", r.scenario}, {"acc", r.acc}, {"base_acc", r.base_acc}, {"delta_acc", r.delta_acc}});
  }
  return ordered_json{{"rows", a}};
}

std::string scenario_table(std::span<const ScenarioRow> rows) {
  std::string out = fmt::format("{:<16}{:>10}{:>12}{:>12}\n", "Scenario", "ACC (%)", "Base (%)", "Delta (%)");
  for (const auto& r : rows) {
    out += fmt::format("{:<16}{:>10.2f}{:>12.2f}{:>+12.2f}\n", r.scenario, r.acc, r.base_acc, r.delta_acc);
  }
  return out;
}

}  // namespace mobkit
