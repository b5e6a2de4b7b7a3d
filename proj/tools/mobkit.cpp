// mobkit command-line interface. Exit codes: 0 ok, 1 validation, 2 runtime, 3 endpoint.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mobkit/baseline.hpp"
#include "mobkit/dataset.hpp"
#include "mobkit/errors.hpp"
#include "mobkit/eval.hpp"
#include "mobkit/gateway.hpp"
#include "mobkit/ingest.hpp"
#include "mobkit/io.hpp"
#include "mobkit/lora.hpp"
#include "mobkit/pipeline.hpp"
#include "mobkit/prompt.hpp"
#include "mobkit/synthetic.hpp"

namespace {

using namespace mobkit;

struct EndpointOptions {
  std::string base_url;
  std::string model;
  std::string api_key_env = "MOBKIT_API_KEY";
  double temperature = 0.0;
  int max_tokens = 512;
  double timeout_s = 60.0;
  int max_retries = 3;
  int concurrency = 4;
  std::string transcript;

  void attach(CLI::App* app, double default_temperature) {
    temperature = default_temperature;
    app->add_option("--base-url", base_url, "Chat-completions base URL, e.g. http://127.0.0.1:8000/v1");
    app->add_option("--model", model, "Model name sent with each request");
    app->add_option("--api-key-env", api_key_env, "Environment variable holding the API key")->capture_default_str();
    app->add_option("--temperature", temperature, "Sampling temperature")->capture_default_str();
    app->add_option("--max-tokens", max_tokens, "Completion token limit")->capture_default_str();
    app->add_option("--timeout", timeout_s, "Per-request timeout in seconds")->capture_default_str();
    app->add_option("--max-retries", max_retries, "Retries on transient failures")->capture_default_str();
    app->add_option("--concurrency", concurrency, "Concurrent requests")->capture_default_str();
    app->add_option("--transcript", transcript, "Append prompts and replies to this JSONL file");
  }

  EndpointConfig resolve() const {
    if (base_url.empty() || model.empty()) throw ConfigError("--base-url and --model are required");
    EndpointConfig cfg;
    cfg.base_url = base_url;
    cfg.model = model;
    if (const char* key = std::getenv(api_key_env.c_str())) cfg.api_key = key;
    cfg.temperature = temperature;
    cfg.max_tokens = max_tokens;
    cfg.timeout_s = timeout_s;
    cfg.max_retries = max_retries;
    cfg.max_concurrency = concurrency;
    if (!transcript.empty()) cfg.transcript_path = transcript;
    cfg.validate();
    return cfg;
  }
};

std::vector<PredictionInstance> read_instances(const std::string& path) {
  std::vector<PredictionInstance> out;
  for (const auto& row : io::read_jsonl(path)) out.push_back(instance_from_json(row));
  return out;
}

void write_instances(const std::string& path, std::span<const PredictionInstance> instances) {
  std::vector<json> rows;
  for (const auto& inst : instances) rows.push_back(instance_to_json(inst));
  io::write_jsonl(path, rows);
}

std::vector<PredictionOutcome> read_outcomes(const std::string& path) {
  std::vector<PredictionOutcome> out;
  for (const auto& row : io::read_jsonl(path)) out.push_back(outcome_from_json(row));
  return out;
}

void write_outcomes(const std::string& path, std::span<const PredictionOutcome> outcomes) {
  std::vector<json> rows;
  for (const auto& o : outcomes) rows.push_back(outcome_to_json(o));
  io::write_jsonl(path, rows);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Mobility prediction instruction toolkit"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Only log errors");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic raw mobility logs as CSV");
  SyntheticProfile profile;
  std::string synth_family = "afc", synth_pattern = "commuter", synth_out, anomalies_out;
  std::uint64_t synth_seed = 0;
  synth->add_option("--family", synth_family, "gps, checkin or afc")->capture_default_str();
  synth->add_option("--pattern", synth_pattern, "commuter or sparse")->capture_default_str();
  synth->add_option("--users", profile.users)->capture_default_str();
  synth->add_option("--days", profile.days)->capture_default_str();
  synth->add_option("--locations", profile.locations)->capture_default_str();
  synth->add_option("--start-date", profile.start_date)->capture_default_str();
  synth->add_option("--jitter", profile.jitter_minutes, "Time jitter in minutes")->capture_default_str();
  synth->add_option("--event-day", profile.event_days, "Day offset carrying event excursions (repeatable)");
  synth->add_option("--anomalies", profile.anomalies_per_event_day, "Users per event day")->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--out", synth_out, "CSV output")->required();
  synth->add_option("--anomalies-out", anomalies_out, "JSONL list of injected excursions");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Build prediction instances from a raw log");
  std::string ingest_family, ingest_input, ingest_task = "trip_destination", ingest_out, index_out, test_out;
  double cell_m = 500.0;
  double test_fraction = 0.0;
  WindowConfig window;
  ingest->add_option("--family", ingest_family, "gps, checkin or afc")->required();
  ingest->add_option("--input", ingest_input, "CSV or JSONL log")->required()->check(CLI::ExistingFile);
  ingest->add_option("--task", ingest_task, "AFC only: trip_origin or trip_destination")->capture_default_str();
  ingest->add_option("--cell-m", cell_m, "GPS grid cell size in metres")->capture_default_str();
  ingest->add_option("--history", window.history_len)->capture_default_str();
  ingest->add_option("--context", window.context_len)->capture_default_str();
  ingest->add_flag("--full-history", window.require_full_history, "Only emit targets with a full history");
  ingest->add_option("--test-fraction", test_fraction, "Hold out the last fraction of each user's instances");
  ingest->add_option("--out", ingest_out, "Instances JSONL (train split when --test-fraction is set)")->required();
  ingest->add_option("--test-out", test_out, "Held-out instances JSONL");
  ingest->add_option("--index-out", index_out, "Location index JSON");

  // forge-styles
  auto* forge = app.add_subcommand("forge-styles", "Build a bank of instruction styles");
  std::string forge_task, forge_out;
  int n_styles = 1;
  EndpointOptions teacher;
  forge->add_option("--task", forge_task)->required();
  forge->add_option("--n", n_styles, "Bank size including the base style")->capture_default_str();
  forge->add_option("--out", forge_out, "Style bank JSONL")->required();
  teacher.attach(forge, 0.3);

  // assemble
  auto* assemble_cmd = app.add_subcommand("assemble", "Pair instances with sampled styles");
  std::vector<std::string> style_files;
  std::string assemble_instances, assemble_out, assemble_format = "alpaca_jsonl", assemble_tag;
  std::uint64_t assemble_seed = 0;
  std::optional<std::size_t> assemble_cap;
  assemble_cmd->add_option("--styles", style_files, "Style bank JSONL (repeatable)")->required();
  assemble_cmd->add_option("--instances", assemble_instances)->required()->check(CLI::ExistingFile);
  assemble_cmd->add_option("--seed", assemble_seed)->capture_default_str();
  assemble_cmd->add_option("--cap", assemble_cap, "Keep at most this many samples");
  assemble_cmd->add_option("--format", assemble_format, "alpaca_jsonl or chat_jsonl")->capture_default_str();
  assemble_cmd->add_option("--tag", assemble_tag, "Dataset tag stored in the meta sidecar");
  assemble_cmd->add_option("--out", assemble_out)->required();

  // mix
  auto* mix = app.add_subcommand("mix", "Mix emitted datasets into one corpus");
  std::vector<std::string> mix_inputs;
  std::vector<double> mix_weights;
  std::optional<std::size_t> mix_cap;
  std::uint64_t mix_seed = 0;
  std::string mix_format = "alpaca_jsonl", mix_out;
  mix->add_option("--dataset", mix_inputs, "Emitted dataset JSONL (repeatable, at least two)")->required();
  mix->add_option("--weight", mix_weights, "Relative share per dataset, in --dataset order");
  mix->add_option("--cap", mix_cap, "Total sample cap");
  mix->add_option("--seed", mix_seed)->capture_default_str();
  mix->add_option("--format", mix_format)->capture_default_str();
  mix->add_option("--out", mix_out)->required();

  // predict
  auto* predict = app.add_subcommand("predict", "Query an endpoint for each instance");
  std::string predict_instances, predict_out;
  EndpointOptions student;
  predict->add_option("--instances", predict_instances)->required()->check(CLI::ExistingFile);
  predict->add_option("--out", predict_out, "Outcomes JSONL")->required();
  student.attach(predict, 0.0);

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Predict with a non-LLM baseline");
  std::string baseline_kind = "markov1", baseline_instances, baseline_out;
  baseline->add_option("--kind", baseline_kind, "freq or markov1")->capture_default_str();
  baseline->add_option("--instances", baseline_instances)->required()->check(CLI::ExistingFile);
  baseline->add_option("--out", baseline_out, "Outcomes JSONL")->required();

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score outcomes against instances");
  std::string eval_outcomes, eval_instances, eval_base, eval_out, eval_table;
  evaluate_cmd->add_option("--outcomes", eval_outcomes)->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--instances", eval_instances)->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--base-report", eval_base, "Report whose ACC is the relative-change base")
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--out", eval_out, "Report JSON")->required();
  evaluate_cmd->add_option("--table", eval_table, "Also write the text table here");

  // scenario-eval
  auto* scenario = app.add_subcommand("scenario-eval", "Relative accuracy change of scenarios against a base");
  std::string scenario_base, scenario_out;
  std::vector<std::string> scenario_specs;
  scenario->add_option("--base", scenario_base, "Base report JSON")->required()->check(CLI::ExistingFile);
  scenario->add_option("--scenario", scenario_specs, "name=report.json (repeatable)")->required();
  scenario->add_option("--out", scenario_out, "Comparison JSON");

  // lora-verify
  auto* lora = app.add_subcommand("lora-verify", "Numerical checks of the low-rank adaptation math");
  bool self_test = false;
  std::uint64_t lora_seed = 11;
  std::string preset_name;
  std::vector<std::uint64_t> dims;
  lora->add_flag("--self-test", self_test, "Run the property suite");
  lora->add_option("--seed", lora_seed)->capture_default_str();
  lora->add_option("--preset", preset_name, "Print one preset");
  lora->add_option("--params", dims, "d k r: trainable parameter count")->expected(3);

  // run
  auto* run = app.add_subcommand("run", "Run the whole pipeline from a TOML config");
  std::string config_path;
  bool force = false;
  run->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  run->add_flag("--force", force, "Ignore cached stages");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto logger = spdlog::stderr_color_mt("mobkit");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::err : spdlog::level::info);

  if (synth->parsed()) {
    profile.family = parse_data_family(synth_family);
    profile.pattern = profile_from_json(json{{"pattern", synth_pattern}}).pattern;
    const auto data = generate_synthetic_users(profile, synth_seed);
    io::write_text(synth_out, synthetic_to_csv(data));
    if (!anomalies_out.empty()) {
      std::vector<json> rows;
      for (const auto& a : data.anomalies) {
        rows.push_back({{"user", a.user}, {"date", a.date}, {"location", a.location_label}});
      }
      io::write_jsonl(anomalies_out, rows);
    }
    return 0;
  }

  if (ingest->parsed()) {
    const auto family = parse_data_family(ingest_family);
    const auto ingested = ingest_file(family, ingest_input, cell_m, parse_task_kind(ingest_task));
    auto batch = make_instances(ingested.users, ingested.task, window);
    if (batch.instances.empty()) throw EmptyDataset("no prediction instances could be built");
    if (test_fraction > 0.0) {
      if (test_out.empty()) throw ConfigError("--test-fraction needs --test-out");
      const auto split = split_instances(batch.instances, test_fraction);
      write_instances(ingest_out, split.train);
      write_instances(test_out, split.test);
    } else {
      write_instances(ingest_out, batch.instances);
    }
    if (!index_out.empty()) io::write_json(index_out, ingested.index.to_json());
    spdlog::info("{} instances from {} users ({} skipped)", batch.instances.size(), ingested.users.size(),
                 batch.skipped_users.size());
    return 0;
  }

  if (forge->parsed()) {
    const auto task = parse_task_kind(forge_task);
    std::optional<Gateway> gateway;
    if (n_styles > 1) gateway.emplace(teacher.resolve());
    const auto bank = forge_styles(task, n_styles, [&](const std::string& prompt) {
      return gateway->complete(prompt).text;
    });
    std::vector<json> rows;
    for (const auto& s : bank) rows.push_back(style_to_json(s));
    io::write_jsonl(forge_out, rows);
    spdlog::info("{} styles for {}", bank.size(), to_string(task));
    return 0;
  }

  if (assemble_cmd->parsed()) {
    StyleBank bank;
    for (const auto& f : style_files) {
      for (const auto& row : io::read_jsonl(f)) {
        auto s = style_from_json(row);
        bank[s.task].push_back(std::move(s));
      }
    }
    const auto instances = read_instances(assemble_instances);
    auto samples = assemble(bank, instances, assemble_seed, assemble_tag);
    if (assemble_cap && *assemble_cap < samples.size()) samples.resize(*assemble_cap);
    emit_dataset(samples, parse_dataset_format(assemble_format), assemble_out);
    spdlog::info("{} samples written", samples.size());
    return 0;
  }

  if (mix->parsed()) {
    if (!mix_weights.empty() && mix_weights.size() != mix_inputs.size()) {
      throw ConfigError("give one --weight per --dataset");
    }
    std::vector<Corpus> corpora;
    for (std::size_t i = 0; i < mix_inputs.size(); ++i) {
      Corpus c;
      c.tag = std::filesystem::path(mix_inputs[i]).stem().string();
      c.samples = read_dataset(mix_inputs[i]);
      if (!mix_weights.empty()) c.weight = mix_weights[i];
      corpora.push_back(std::move(c));
    }
    const auto mixed = mix_corpora(corpora, mix_cap, mix_seed);
    emit_dataset(mixed, parse_dataset_format(mix_format), mix_out);
    spdlog::info("{} samples mixed", mixed.size());
    return 0;
  }

  if (predict->parsed()) {
    const auto instances = read_instances(predict_instances);
    Gateway gateway(student.resolve());
    const auto outcomes = predict_with_endpoint(gateway, instances);
    write_outcomes(predict_out, outcomes);
    const auto usage = gateway.ledger().totals();
    spdlog::info("{} requests, {} prompt / {} completion tokens", gateway.ledger().requests(), usage.prompt_tokens,
                 usage.completion_tokens);
    const auto& prices = default_price_table();
    if (prices.find(gateway.config().model) != prices.end()) {
      spdlog::info("estimated cost ${:.4f}", estimate_cost(usage, prices, gateway.config().model));
    }
    return 0;
  }

  if (baseline->parsed()) {
    const auto instances = read_instances(baseline_instances);
    write_outcomes(baseline_out, run_baseline(parse_baseline_kind(baseline_kind), instances));
    return 0;
  }

  if (evaluate_cmd->parsed()) {
    const auto outcomes = read_outcomes(eval_outcomes);
    const auto instances = read_instances(eval_instances);
    std::optional<double> base;
    if (!eval_base.empty()) base = report_from_json(io::read_json(eval_base)).acc_percent;
    const auto report = evaluate(outcomes, instances, base);
    io::write_json(eval_out, report_to_json(report));
    const auto table = report_table(report);
    if (!eval_table.empty()) io::write_text(eval_table, table);
    std::cout << table;
    return 0;
  }

  if (scenario->parsed()) {
    const auto base = report_from_json(io::read_json(scenario_base));
    std::vector<std::pair<std::string, EvaluationReport>> scenarios;
    for (const auto& spec : scenario_specs) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--scenario expects name=report.json, got " + spec);
      scenarios.emplace_back(spec.substr(0, eq), report_from_json(io::read_json(spec.substr(eq + 1))));
    }
    const auto rows = scenario_eval(base, scenarios);
    if (!scenario_out.empty()) io::write_json(scenario_out, scenario_rows_to_json(rows));
    std::cout << scenario_table(rows);
    return 0;
  }

  if (lora->parsed()) {
    bool did_something = false;
    int status = 0;
    if (!preset_name.empty()) {
      const auto& p = find_preset(preset_name);
      std::cout << fmt::format("{}: scaling factor {}, rank {}\n", p.method, p.scaling_factor, p.rank);
      did_something = true;
    }
    if (!dims.empty()) {
      const auto c = trainable_param_count(dims[0], dims[1], dims[2]);
      std::cout << fmt::format("lora {} full {} ratio {:.4f}\n", c.lora, c.full, c.ratio);
      did_something = true;
    }
    if (self_test || !did_something) {
      const auto checks = run_lora_self_test(lora_seed);
      for (const auto& c : checks) {
        std::cout << fmt::format("{:<4} {:<48} {}\n", c.passed ? "PASS" : "FAIL", c.name, c.detail);
        if (!c.passed) status = 2;
      }
    }
    return status;
  }

  if (run->parsed()) {
    const auto cfg = load_pipeline_config(config_path);
    RunOptions options;
    options.force = force;
    const auto manifest = run_pipeline(cfg, options);
    for (const auto& s : manifest.stages) std::cout << fmt::format("{:<14}{}\n", s.stage, s.status);
    std::cout << fmt::format("endpoint requests: {}\n", manifest.endpoint_requests);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const mobkit::ValidationError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const mobkit::EndpointError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}
