#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "disco/error.hpp"
#include "disco/model.hpp"
#include "disco/net.hpp"
#include "disco/node.hpp"
#include "disco/simharness.hpp"
#include "disco/store.hpp"
#include "disco/task.hpp"

namespace {

using namespace disco;

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, "'" + path + "': " + e.what());
  }
}

TaskSpec read_spec(const std::string& path) {
  TaskSpec spec = task_spec_from_json(read_json(path));
  spec.validate();
  return spec;
}

struct DataArgs {
  std::string path;
  std::string format;  // csv | idx; inferred from the extension when empty
  std::string labels;  // idx labels file
  std::string label_column = "label";
};

void add_data_flags(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--data", d.path, "Local dataset (CSV file or IDX images file)")->required();
  cmd->add_option("--format", d.format, "Dataset format; inferred from the file name when omitted")
      ->check(CLI::IsMember({"csv", "idx"}));
  cmd->add_option("--labels", d.labels, "IDX labels file (default: 'images' -> 'labels' in the data name)");
  cmd->add_option("--label-column", d.label_column, "CSV label column")->capture_default_str();
}

Dataset load_data(const DataArgs& d) {
  std::string format = d.format;
  if (format.empty()) format = d.path.find("idx") != std::string::npos ? "idx" : "csv";
  if (format == "csv") return load_csv(d.path, d.label_column);
  std::string labels = d.labels;
  if (labels.empty()) {
    labels = d.path;
    const auto pos = labels.rfind("images");
    if (pos == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "--labels is required for this IDX file");
    labels.replace(pos, 6, "labels");
    const auto idx3 = labels.rfind("idx3");
    if (idx3 != std::string::npos) labels.replace(idx3, 4, "idx1");
  }
  return load_idx(d.path, labels);
}

void print_metrics(const std::vector<LocalMetric>& metrics) {
  for (const LocalMetric& m : metrics) {
    std::printf("round %llu epoch %llu loss %.6f accuracy %.4f\n", static_cast<unsigned long long>(m.round),
                static_cast<unsigned long long>(m.epoch), m.loss, m.accuracy);
  }
}

int cmd_serve(const std::string& config_path) {
  ServerConfig cfg;
  if (!config_path.empty()) cfg = load_server_config(config_path);
  else apply_env_overrides(cfg);
  CoordinatorServer server(cfg);
  server.start();
  std::fprintf(stderr, "coordinator listening: tcp %s:%u, http %s:%u\n", cfg.bind_address.c_str(),
               server.tcp_port(), cfg.bind_address.c_str(), server.http_port());
  server.wait(true);
  return 0;
}

int cmd_create_task(const std::string& spec_path, const std::string& server, const std::string& data_dir,
                    const std::string& token) {
  const TaskSpec spec = read_spec(spec_path);
  if (!server.empty()) {
    const HostPort hp = parse_host_port(server);
    std::map<std::string, std::string> headers;
    if (!token.empty()) headers["X-Operator-Token"] = token;
    const HttpResponse res = http_request(hp.host, hp.port, "POST", "/tasks", to_json(spec).dump(), headers);
    if (res.status != 201) {
      std::fprintf(stderr, "error: server rejected task (%d): %s\n", res.status, res.body.c_str());
      return 1;
    }
  } else if (!data_dir.empty()) {
    TaskStore store(data_dir);
    for (const TaskSpec& existing : store.load_specs()) {
      if (existing.task_id == spec.task_id) {
        throw Error(ErrorCode::kDuplicateTask, "task '" + spec.task_id + "' already exists in " + data_dir);
      }
    }
    store.save_spec(spec);
  }
  std::printf("%s\n", spec.task_id.c_str());
  return 0;
}

int cmd_join(const std::string& server, const std::string& task, const DataArgs& data, const std::string& listen,
             const std::string& metrics_out, const std::string& save_model, int attempts) {
  NodeRunConfig cfg;
  cfg.server = server;
  cfg.task_id = task;
  cfg.data = load_data(data);
  cfg.listen = listen;
  cfg.connect_attempts = attempts;
  if (!metrics_out.empty()) cfg.metrics_csv = metrics_out;
  cfg.log = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };
  const NodeRunResult r = run_node(cfg);
  if (r.final_state == NodeState::kFailed) {
    std::fprintf(stderr, "error: %s\n", r.failure.c_str());
    return 1;
  }
  print_metrics(r.metrics);
  std::printf("finished %llu rounds as client %llu\n", static_cast<unsigned long long>(r.completed_rounds),
              static_cast<unsigned long long>(r.client_id));
  if (!save_model.empty() && !r.params.values.empty()) save_checkpoint(r.params, save_model);
  return 0;
}

int cmd_solo(const std::string& spec_path, const DataArgs& data, const std::string& save_model,
             const std::string& metrics_out) {
  const TaskSpec spec = read_spec(spec_path);
  const Dataset ds = load_data(data);
  const TrainResult r = run_solo(spec, ds);
  std::vector<LocalMetric> metrics;
  const std::size_t e = spec.train.epochs_per_round;
  for (const EpochMetrics& m : r.metrics) metrics.push_back({m.epoch / e, m.epoch, m.loss, m.accuracy});
  print_metrics(metrics);
  if (!metrics_out.empty()) write_metrics_csv(metrics, metrics_out);
  if (!save_model.empty()) save_checkpoint(r.params, save_model);
  return 0;
}

int cmd_simulate(const std::string& scenario, const std::string& out) {
  const ExperimentReport r = run_scenario(load_scenario(scenario));
  export_report(r, out);
  std::printf("%s: %s, %llu/%llu rounds, %zu aggregations\n", r.task_id.c_str(), r.final_phase.c_str(),
              static_cast<unsigned long long>(r.completed_rounds), static_cast<unsigned long long>(r.total_rounds),
              r.aggregations.size());
  if (!r.global_evals.empty()) {
    const GlobalEval& g = r.global_evals.back();
    std::printf("final held-out loss %.6f accuracy %.4f\n", g.loss, g.accuracy);
  }
  return 0;
}

int cmd_evaluate(const std::string& model, const DataArgs& data) {
  const ParamVector params = load_checkpoint(model);
  const EvalResult r = evaluate(params, load_data(data));
  std::printf("loss %.6f accuracy %.4f\n", r.loss, r.accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disco: collaborative training coordinator, node and simulator"};
  app.require_subcommand(1);

  std::string config;
  auto* serve = app.add_subcommand("serve", "Run the coordinator");
  serve->add_option("--config", config, "Server config JSON (bindAddress, tcpPort, httpPort, dataDir, ...)");

  std::string spec, server, data_dir, token;
  auto* create = app.add_subcommand("create-task", "Validate and register a task spec");
  create->add_option("--spec", spec, "Task spec JSON")->required();
  auto* server_opt = create->add_option("--server", server, "Coordinator HTTP address host:port");
  create->add_option("--data-dir", data_dir, "Write into a coordinator data directory instead")->excludes(server_opt);
  create->add_option("--token", token, "Operator token sent as X-Operator-Token");

  std::string join_server, task, listen, metrics_out, save_model;
  int attempts = 5;
  DataArgs join_data;
  auto* join = app.add_subcommand("join", "Run a node for a task");
  join->add_option("--server", join_server, "Coordinator TCP address host:port")->required();
  join->add_option("--task", task, "Task id")->required();
  add_data_flags(join, join_data);
  join->add_option("--listen", listen, "host:port for peer connections (decentralized tasks)");
  join->add_option("--metrics-out", metrics_out, "Write round,epoch,loss,accuracy CSV here");
  join->add_option("--save-model", save_model, "Write the final params checkpoint here");
  join->add_option("--connect-attempts", attempts, "Coordinator connection attempts")->capture_default_str()
      ->check(CLI::PositiveNumber);

  std::string solo_spec, solo_model, solo_metrics;
  DataArgs solo_data;
  auto* solo = app.add_subcommand("solo", "Train locally with a task's hyperparameters");
  solo->add_option("--spec", solo_spec, "Task spec JSON")->required();
  add_data_flags(solo, solo_data);
  solo->add_option("--save-model", solo_model, "Write the trained params checkpoint here");
  solo->add_option("--metrics-out", solo_metrics, "Write round,epoch,loss,accuracy CSV here");

  std::string scenario, out;
  auto* simulate = app.add_subcommand("simulate", "Run a scenario in the deterministic simulator");
  simulate->add_option("--scenario", scenario, "Scenario JSON")->required();
  simulate->add_option("--out", out, "Output directory for report.json and metrics.csv")->required();

  std::string model;
  DataArgs eval_data;
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  eval->add_option("--model", model, "Params checkpoint")->required();
  add_data_flags(eval, eval_data);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return cmd_serve(config);
    if (*create) return cmd_create_task(spec, server, data_dir, token);
    if (*join) return cmd_join(join_server, task, join_data, listen, metrics_out, save_model, attempts);
    if (*solo) return cmd_solo(solo_spec, solo_data, solo_model, solo_metrics);
    if (*simulate) return cmd_simulate(scenario, out);
    if (*eval) return cmd_evaluate(model, eval_data);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(error_code_name(e.code())).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
