#include "disco/store.hpp"

#include <fstream>
#include <sstream>

namespace disco {

namespace fs = std::filesystem;

TaskStore::TaskStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "tasks", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create store at " + root_.string() + ": " + ec.message());
}

fs::path TaskStore::task_dir(const std::string& task_id) const { return root_ / "tasks" / task_id; }

void TaskStore::save_spec(const TaskSpec& spec) {
  const fs::path dir = task_dir(spec.task_id);
  fs::create_directories(dir);
  const fs::path tmp = dir / "spec.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << to_json(spec).dump(2) << '\n';
  }
  fs::rename(tmp, dir / "spec.json");
}

std::vector<TaskSpec> TaskStore::load_specs() const {
  std::vector<TaskSpec> specs;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root_ / "tasks")) {
    if (entry.is_directory() && fs::exists(entry.path() / "spec.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::ifstream in(dir / "spec.json");
    specs.push_back(task_spec_from_json(nlohmann::json::parse(in)));
  }
  return specs;
}

std::string TaskStore::commit_round(const std::string& task_id, std::uint64_t round,
                                    const nlohmann::ordered_json& record, const ParamVector* global) {
  nlohmann::ordered_json line = record;
  std::string file;
  if (global != nullptr) {
    file = "global-" + std::to_string(round) + ".dsc";
    const fs::path tmp = task_dir(task_id) / (file + ".tmp");
    save_checkpoint(*global, tmp);
    fs::rename(tmp, task_dir(task_id) / file);
    line["checkpoint"] = file;
  }
  append(task_id, line);
  if (global != nullptr && round > 0) {
    std::error_code ec;
    fs::remove(task_dir(task_id) / ("global-" + std::to_string(round - 1) + ".dsc"), ec);
  }
  return file;
}

void TaskStore::append(const std::string& task_id, const nlohmann::ordered_json& line) {
  std::ofstream out(task_dir(task_id) / "journal.jsonl", std::ios::app);
  if (!out) throw Error(ErrorCode::kIo, "cannot append to journal of " + task_id);
  out << line.dump() << '\n';
  out.flush();
}

std::vector<nlohmann::json> TaskStore::read_journal(const std::string& task_id) const {
  std::vector<nlohmann::json> lines;
  std::ifstream in(task_dir(task_id) / "journal.jsonl");
  std::string text;
  while (std::getline(in, text)) {
    if (text.empty()) continue;
    try {
      lines.push_back(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error&) {
      break;  // torn final line from a crash mid-append
    }
  }
  return lines;
}

std::optional<ParamVector> TaskStore::load_global(const std::string& task_id,
                                                  const std::string& file) const {
  const fs::path path = task_dir(task_id) / file;
  if (!fs::exists(path)) return std::nullopt;
  return load_checkpoint(path);
}

}  // namespace disco
