#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disco/model.hpp"
#include "disco/task.hpp"

namespace disco {

// Single-directory write-ahead store for the coordinator:
//
//   <root>/tasks/<taskId>/spec.json       TaskSpec, written once
//   <root>/tasks/<taskId>/journal.jsonl   one JSON object per line
//   <root>/tasks/<taskId>/global-<r>.dsc  global params after round r
//
// Journal lines carry "kind": "round" (round, participants, scheme,
// weighting, checkpoint) or "metric" (client, round, epoch, loss,
// accuracy). A round line is appended only after its checkpoint file is in
// place, so the last round line always names a readable checkpoint.
class TaskStore {
 public:
  explicit TaskStore(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }

  void save_spec(const TaskSpec& spec);
  std::vector<TaskSpec> load_specs() const;

  // Writes the checkpoint, then journals the round. Returns the file name.
  std::string commit_round(const std::string& task_id, std::uint64_t round,
                           const nlohmann::ordered_json& record, const ParamVector* global);
  void append(const std::string& task_id, const nlohmann::ordered_json& line);

  std::vector<nlohmann::json> read_journal(const std::string& task_id) const;
  std::optional<ParamVector> load_global(const std::string& task_id, const std::string& file) const;

 private:
  std::filesystem::path task_dir(const std::string& task_id) const;
  std::filesystem::path root_;
};

}  // namespace disco
