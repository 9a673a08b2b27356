#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "disco/simharness.hpp"
#include "util.hpp"

using namespace disco;

namespace {

const std::filesystem::path kScenarios = std::filesystem::path(DISCO_SOURCE_DIR) / "scenarios";

Scenario base(TrainingScheme scheme, std::size_t clients, std::uint64_t rounds = 10) {
  Scenario s;
  s.task.task_id = "sim";
  s.task.model = {4, 8, 3, 17};
  s.task.train.batch_size = 16;
  s.task.train.epochs_per_round = 2;
  s.task.train.learning_rate = 0.2;
  s.task.train.shuffle_seed = 5;
  s.task.scheme = scheme;
  s.task.min_participants = clients;
  s.task.ready_threshold = clients;
  s.task.total_rounds = rounds;
  s.num_clients = clients;
  s.dataset.synthetic = {300, 4, 3, 0.15, 9};
  s.dataset.test_samples = 150;
  s.seed = 1;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Sim, SmokeScenarioAggregatesEveryRound) {
  const ExperimentReport r = run_scenario(load_scenario(kScenarios / "smoke-2client.json"));
  EXPECT_TRUE(r.finished);
  EXPECT_EQ(r.aggregations.size(), 10u);
  EXPECT_EQ(r.global_evals.size(), 10u);
  EXPECT_EQ(r.completed_rounds, 10u);
  for (std::size_t i = 0; i < r.global_evals.size(); ++i) EXPECT_EQ(r.global_evals[i].epoch, 2 * i + 1);
  EXPECT_GT(r.global_evals.back().accuracy, 0.9);
}

TEST(Sim, CsvRowCountAndExportMatchesMemory) {
  const Scenario s = load_scenario(kScenarios / "smoke-2client.json");
  const ExperimentReport r = run_scenario(s);
  const std::string csv = report_csv(r);
  const auto rows = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) - 1;
  EXPECT_EQ(rows, s.task.total_rounds * s.num_clients * s.task.train.epochs_per_round + s.task.total_rounds);

  disco::testing::TempDir dir("sim");
  export_report(r, dir.path());
  EXPECT_EQ(slurp(dir / "metrics.csv"), csv);
  const ExperimentReport back = report_from_json(nlohmann::json::parse(slurp(dir / "report.json")));
  EXPECT_EQ(back, r);

  // File curves against in-memory series, value by value.
  std::istringstream in(slurp(dir / "metrics.csv"));
  std::string line;
  std::getline(in, line);
  std::size_t global_row = 0;
  while (std::getline(in, line)) {
    if (line.rfind("global,", 0) != 0) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    const GlobalEval& g = r.global_evals.at(global_row++);
    EXPECT_EQ(std::stoull(cells[1]), g.round);
    EXPECT_EQ(std::stod(cells[4]), g.loss);
    EXPECT_EQ(std::stod(cells[5]), g.accuracy);
  }
  EXPECT_EQ(global_row, r.global_evals.size());
}

TEST(Sim, ReportJsonRoundTrip) {
  const ExperimentReport r = run_scenario(load_scenario(kScenarios / "churn-dropout.json"));
  EXPECT_EQ(report_from_json(nlohmann::json::parse(to_json(r).dump())), r);
}

TEST(Sim, ReplayIsByteIdentical) {
  for (const auto& entry : std::filesystem::directory_iterator(kScenarios)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("mnist", 0) == 0) continue;  // covered by the acceptance suite
    const Scenario s = load_scenario(entry.path());
    EXPECT_EQ(to_json(run_scenario(s)).dump(), to_json(run_scenario(s)).dump()) << name;
  }
}

TEST(Sim, DropoutOfOneOfThreeKeepsGoing) {
  const ExperimentReport r = run_scenario(load_scenario(kScenarios / "churn-dropout.json"));
  EXPECT_TRUE(r.finished);
  ASSERT_EQ(r.aggregations.size(), 10u);
  for (const AggregationEvent& a : r.aggregations) {
    EXPECT_EQ(a.participants.size(), a.round < 4 ? 3u : 2u) << a.round;
  }
}

TEST(Sim, PauseAndRejoin) {
  const ExperimentReport r = run_scenario(load_scenario(kScenarios / "churn-pause-rejoin.json"));
  EXPECT_TRUE(r.finished);
  EXPECT_EQ(r.completed_rounds, r.total_rounds);
  const auto has = [&](const std::string& kind) {
    return std::any_of(r.timeline.begin(), r.timeline.end(), [&](const TimelineEntry& t) { return t.kind == kind; });
  };
  EXPECT_TRUE(has("paused"));
  EXPECT_TRUE(has("resumed"));
  EXPECT_GE(r.message_counts.at("SessionPaused"), 1u);
}

TEST(Sim, DecentralizedMatchesFederatedUniform) {
  Scenario fed = base(TrainingScheme::kFederated, 3);
  fed.task.weighting = Weighting::kUniform;
  Scenario dec = fed;
  dec.task.scheme = TrainingScheme::kDecentralized;
  const RunOutput a = run_scenario_full(fed);
  const RunOutput b = run_scenario_full(dec);
  ASSERT_EQ(a.final_params.size(), b.final_params.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.final_params.size(); ++i) {
    worst = std::max(worst, std::abs(a.final_params.values[i] - b.final_params.values[i]));
  }
  EXPECT_LE(worst, 1e-12);
  EXPECT_EQ(b.report.coordinator_model_payloads, 0u);
  EXPECT_EQ(b.report.aggregations.size(), 10u);
}

TEST(Sim, SecureExchangeShareCounts) {
  Scenario s = base(TrainingScheme::kDecentralized, 4, 3);
  s.task.secure_aggregation = true;
  const RunOutput out = run_scenario_full(s);
  EXPECT_TRUE(out.report.finished);
  EXPECT_EQ(out.share_counts.size(), 4u * 3);
  for (const auto& [key, c] : out.share_counts) {
    EXPECT_EQ(c[0], 3u);
    EXPECT_EQ(c[1], 3u);
    EXPECT_EQ(c[2], 4u);
  }
}

TEST(Sim, SingleClientFederatedMatchesSolo) {
  Scenario s = base(TrainingScheme::kFederated, 1, 2);
  const RunOutput out = run_scenario_full(s);
  const auto [parts, test] = materialize_datasets(s);
  // Per-round solo training with the node's round seeds.
  ParamVector p = init_params(s.task.model);
  for (std::uint64_t r = 0; r < 2; ++r) {
    TrainConfig cfg = s.task.train;
    cfg.shuffle_seed = round_shuffle_seed(s.task, 1, r);
    p = train_local(p, parts[0], cfg).params;
  }
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(out.final_params.values[i], p.values[i], 1e-14);
}

TEST(Sim, FederatedBeatsBestSingleClient) {
  Scenario s = base(TrainingScheme::kFederated, 3);
  s.dataset.synthetic = {150, 4, 3, 0.35, 31};
  s.dataset.test_samples = 600;
  s.task.train.learning_rate = 0.05;
  const RunOutput out = run_scenario_full(s);
  const auto [parts, test] = materialize_datasets(s);
  const double global = evaluate(out.final_params, test).accuracy;
  double best_solo = 0.0;
  for (const Dataset& d : parts) best_solo = std::max(best_solo, evaluate(run_solo(s.task, d).params, test).accuracy);
  EXPECT_GT(global, best_solo);
}

TEST(Sim, FaultsMustTargetValidClients) {
  Scenario s = base(TrainingScheme::kFederated, 2);
  s.faults.push_back({FaultEvent::Kind::kDropOut, 1, std::nullopt, 3, 0});
  EXPECT_THROW(s.validate(), Error);
  s.faults.back() = {FaultEvent::Kind::kDropOut, std::nullopt, std::nullopt, 1, 0};
  EXPECT_THROW(s.validate(), Error);
  s.faults.back() = {FaultEvent::Kind::kDropOut, 1, TimeMs{5}, 1, 0};
  EXPECT_THROW(s.validate(), Error);
}

TEST(Sim, ScenarioJsonErrors) {
  nlohmann::json j = nlohmann::json::parse(slurp(kScenarios / "smoke-2client.json"));
  j["schemaVersion"] = 99;
  EXPECT_THROW(scenario_from_json(j, kScenarios), Error);
  j["schemaVersion"] = 1;
  j["faults"] = nlohmann::json::array({{{"round", 1}, {"client", 1}, {"event", "explode"}}});
  EXPECT_THROW(scenario_from_json(j, kScenarios), Error);
}

TEST(Sim, FrameObserverSeesEveryFrame) {
  Scenario s = base(TrainingScheme::kFederated, 2, 2);
  std::map<std::string, std::uint64_t> seen;
  RunOptions opts;
  opts.frame_observer = [&](const FrameRecord& f) {
    ++seen[std::string(wire::type_name(*f.msg))];
    EXPECT_EQ(wire::decode_msg(f.bytes), *f.msg);
  };
  const RunOutput out = run_scenario_full(s, opts);
  EXPECT_EQ(seen, out.report.message_counts);
}
