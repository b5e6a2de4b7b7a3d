#include <doctest.h>

#include <cmath>

#include "instances.hpp"
#include "mobkit/errors.hpp"
#include "mobkit/eval.hpp"
#include "mobkit/io.hpp"
#include "test_util.hpp"

using namespace mobkit;
using namespace mobkit::testing;

namespace {

PredictionOutcome valid(LocationId p, std::string id = {}) {
  PredictionOutcome o;
  o.instance_id = std::move(id);
  o.predicted = p;
  o.status = OutcomeStatus::valid;
  o.raw = "{prediction: " + std::to_string(p) + "}";
  return o;
}

PredictionOutcome invalid(std::string id = {}) {
  PredictionOutcome o;
  o.instance_id = std::move(id);
  o.status = OutcomeStatus::malformed;
  return o;
}

}  // namespace

TEST_CASE("reply corpus statuses") {
  const auto rows = io::read_jsonl(fixture("replies.jsonl"));
  REQUIRE(rows.size() == 30);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const auto out = parse_reply(row.at("raw").get<std::string>(), "r" + std::to_string(i));
    INFO("fixture row ", i + 1, ": ", row.at("raw").get<std::string>());
    CHECK(to_string(out.status) == row.at("status").get<std::string>());
    CHECK(out.instance_id == "r" + std::to_string(i));
    CHECK(out.predicted.has_value() == (out.status == OutcomeStatus::valid));
    if (row.contains("predicted") && !row["predicted"].is_null()) {
      CHECK(out.predicted == row["predicted"].get<LocationId>());
    }
    if (row.contains("reason") && !row["reason"].is_null()) {
      CHECK(out.reason == row["reason"].get<std::string>());
    }
    CHECK(out.raw == row.at("raw").get<std::string>());
  }
}

TEST_CASE("parse_reply spot checks") {
  auto o = parse_reply(R"({"prediction": 42, "reason": "weekday commute"})");
  CHECK(o.status == OutcomeStatus::valid);
  CHECK(o.predicted == 42);
  CHECK(o.reason == "weekday commute");
  CHECK(parse_reply("prediction: 7").predicted == 7);
  CHECK(parse_reply("Sure. {prediction: 12} because").predicted == 12);
  CHECK(parse_reply("```python\nimport pandas as pd\ndf = pd.read_csv('x.csv')\nprint(df.head())\n```").status ==
        OutcomeStatus::hallucination);
  CHECK(parse_reply("").status == OutcomeStatus::malformed);
  CHECK(parse_reply("{\"prediction\": \"home\"}").status == OutcomeStatus::malformed);
  CHECK(parse_reply("I cannot help with that.").status == OutcomeStatus::hallucination);
  CHECK(parse_reply("prediction == 5").status != OutcomeStatus::valid);
  CHECK(parse_reply("predictions: 5").status != OutcomeStatus::valid);
}

TEST_CASE("parse_reply is total") {
  std::string s;
  for (int c = 0; c < 256; ++c) s += static_cast<char>(c);
  CHECK_NOTHROW(parse_reply(s));
  CHECK_NOTHROW(parse_reply(std::string(100000, '{')));
  CHECK_NOTHROW(parse_reply("prediction:"));
  CHECK_NOTHROW(parse_reply("prediction: \""));
  CHECK_NOTHROW(parse_reply("\"reason\": \"unterminated \\"));
  CHECK_NOTHROW(parse_reply("```"));
}

TEST_CASE("outcome json round trip") {
  auto o = parse_reply(R"({"prediction": 9, "reason": "r"})", "x#1");
  CHECK(outcome_from_json(outcome_to_json(o)) == o);
  const auto t = transport_failure("x#2", "timeout");
  CHECK(t.status == OutcomeStatus::transport_error);
  CHECK_FALSE(t.predicted.has_value());
  CHECK(outcome_from_json(outcome_to_json(t)) == t);
  auto j = outcome_to_json(o);
  j["status"] = "malformed";
  CHECK_THROWS_AS(outcome_from_json(j), ValidationError);
  CHECK_THROWS_AS(parse_outcome_status("great"), ValidationError);
}

TEST_CASE("accuracy") {
  std::vector<PredictionOutcome> out;
  std::vector<LocationId> truth;
  for (int i = 0; i < 100; ++i) {
    out.push_back(i < 87 ? valid(1) : valid(2));
    truth.push_back(1);
  }
  CHECK(accuracy(out, truth) == 87.0);
  std::vector<PredictionOutcome> bad(5, invalid());
  std::vector<LocationId> t5(5, 0);
  CHECK(accuracy(bad, t5) == 0.0);
  CHECK_THROWS_AS(accuracy(bad, truth), ShapeError);
  CHECK_THROWS_AS(accuracy({}, {}), ShapeError);

  std::vector<PredictionOutcome> big;
  std::vector<LocationId> big_truth(10000, 4);
  for (int i = 0; i < 10000; ++i) big.push_back(i < 8281 ? valid(4) : invalid());
  CHECK(std::abs(accuracy(big, big_truth) - 82.81) < 0.005);
}

TEST_CASE("weighted f1") {
  std::vector<PredictionOutcome> out(10, valid(0));
  std::vector<LocationId> truth(10, 0);
  truth[9] = 1;
  const double expected = 0.9 * (18.0 / 19.0);
  CHECK(std::abs(weighted_f1(out, truth) - expected) < 1e-15);
  CHECK(std::abs(expected - 0.8526315789) < 1e-9);

  std::vector<PredictionOutcome> perfect;
  std::vector<LocationId> labels = {0, 1, 2, 1, 0};
  for (auto l : labels) perfect.push_back(valid(l));
  CHECK(weighted_f1(perfect, labels) == 1.0);

  std::vector<PredictionOutcome> single(4, valid(3));
  std::vector<LocationId> single_truth(4, 3);
  CHECK(weighted_f1(single, single_truth) == 1.0);

  std::vector<PredictionOutcome> none(4, invalid());
  CHECK(weighted_f1(none, single_truth) == 0.0);
  CHECK_THROWS_AS(weighted_f1(none, labels), ShapeError);
}

TEST_CASE("visit frequency and bins") {
  const auto two = gps_instance({1, 2, 3, 4, 5}, {6, 7, 8, 9, 9}, 9);
  CHECK(visit_frequency(two) == 0.2);
  CHECK(frequency_bin(two) == FrequencyBin::low);
  CHECK(visit_frequency(gps_instance({}, {1, 2}, 5)) == 0.0);
  CHECK(frequency_bin(gps_instance({}, {1, 2}, 5)) == FrequencyBin::unseen);
  CHECK(visit_frequency(gps_instance({4, 4}, {4}, 4)) == 1.0);
  CHECK(frequency_bin(2, 4) == FrequencyBin::mid);
  CHECK(frequency_bin(3, 6) == FrequencyBin::mid);
  CHECK(frequency_bin(4, 7) == FrequencyBin::high);
  CHECK(frequency_bin(1, 5) == FrequencyBin::low);
  CHECK(frequency_bin(1, 4) == FrequencyBin::mid);
  CHECK(frequency_bin(0, 4) == FrequencyBin::unseen);
  for (auto b : kFrequencyBins) CHECK(parse_frequency_bin(to_string(b)) == b);
  CHECK(to_string(FrequencyBin::low) == "(0,0.2]");
  PredictionInstance empty = gps_instance({}, {}, 1);
  CHECK_THROWS_AS(visit_frequency(empty), ValidationError);
}

TEST_CASE("stratified accuracy") {
  std::vector<PredictionInstance> insts = {gps_instance({}, {1, 2}, 5, "a"), gps_instance({}, {5, 2}, 5, "b"),
                                           gps_instance({}, {5, 5}, 5, "c"), gps_instance({}, {1, 2}, 1, "d")};
  std::vector<PredictionOutcome> outs = {valid(5, "a"), valid(2, "b"), valid(5, "c"), invalid("d")};
  const auto bins = stratified_accuracy(outs, insts);
  REQUIRE(bins.size() == 3);
  CHECK(bins[0].first == FrequencyBin::unseen);
  CHECK(bins[0].second.n == 1);
  CHECK(bins[0].second.acc == 100.0);
  CHECK(bins[0].second.share == 25.0);
  CHECK(bins[1].first == FrequencyBin::mid);
  CHECK(bins[1].second.n == 2);
  CHECK(bins[1].second.acc == 0.0);
  CHECK(bins[2].first == FrequencyBin::high);

  std::vector<PredictionInstance> same = {gps_instance({}, {5, 5}, 5, "x"), gps_instance({}, {5, 5}, 5, "y")};
  std::vector<PredictionOutcome> same_out = {valid(5), valid(1)};
  const auto one = stratified_accuracy(same_out, same);
  REQUIRE(one.size() == 1);
  std::vector<LocationId> truths = {5, 5};
  CHECK(one[0].second.acc == accuracy(same_out, truths));
  CHECK(one[0].second.share == 100.0);
  CHECK_THROWS_AS(stratified_accuracy(same_out, insts), ShapeError);
}

TEST_CASE("delta acc") {
  CHECK(std::abs(delta_acc(74.39, 82.81) - (-10.17)) < 0.005);
  CHECK(std::abs(delta_acc(79.92, 70.93) - 12.67) < 0.005);
  CHECK(delta_acc(60.0, 60.0) == 0.0);
  CHECK_THROWS_AS(delta_acc(10.0, 0.0), DegenerateBase);
}

TEST_CASE("evaluate joins by id") {
  std::vector<PredictionInstance> insts = {gps_instance({}, {1, 2}, 2, "a"), gps_instance({}, {1, 2}, 1, "b"),
                                           gps_instance({1}, {1, 3}, 1, "c")};
  std::vector<PredictionOutcome> outs = {valid(1, "c"), parse_reply("import os", "b"), valid(2, "a")};
  const auto r = evaluate(outs, insts, 50.0);
  CHECK(r.n_total == 3);
  CHECK(r.n_valid == 2);
  CHECK(r.n_invalid == 1);
  CHECK(r.n_hallucination == 1);
  CHECK(r.n_malformed == 0);
  CHECK(std::abs(r.acc_percent - 200.0 / 3.0) < 1e-12);
  REQUIRE(r.delta_acc_vs_base.has_value());
  CHECK(std::abs(*r.delta_acc_vs_base - delta_acc(r.acc_percent, 50.0)) < 1e-12);
  CHECK(r.weighted_f1 >= 0.0);
  CHECK(r.weighted_f1 <= 1.0);

  const auto back = report_from_json(report_to_json(r));
  CHECK(back.acc_percent == r.acc_percent);
  CHECK(back.per_bin.size() == r.per_bin.size());
  CHECK(back.n_hallucination == 1);
  CHECK(report_to_json(r).at("invalid_scoring") == "counted as incorrect");
  CHECK(report_table(r).find("66.67") != std::string::npos);

  outs.pop_back();
  CHECK_THROWS_AS(evaluate(outs, insts), ShapeError);
  outs.push_back(valid(2, "zzz"));
  CHECK_THROWS_AS(evaluate(outs, insts), ShapeError);
}
