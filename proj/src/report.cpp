#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "kflab/errors.hpp"
#include "kflab/harness.hpp"

namespace fs = std::filesystem;

namespace kflab::harness {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw ParseError("report: csv column missing: " + name);
  }
};

CsvTable read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("report: cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (std::getline(f, line)) t.header = split_csv_line(line);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_csv_line(line));
  }
  return t;
}

struct Cell {
  std::vector<double> seed_means;
  std::string config_digest;
  std::string dataset_digest;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

double se_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double sq = 0;
  for (double x : v) sq += (x - m) * (x - m);
  return std::sqrt(sq / (v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

}  // namespace

std::string report(const std::string& artifacts_root) {
  const fs::path root(artifacts_root);
  if (!fs::exists(root)) throw Error("report: no experiments found under " + artifacts_root);

  std::vector<fs::path> eval_files, probe_files;
  auto consider = [&](const fs::path& dir) {
    if (fs::exists(dir / "eval.csv")) eval_files.push_back(dir / "eval.csv");
    if (fs::exists(dir / "probe.csv")) probe_files.push_back(dir / "probe.csv");
  };
  consider(root);
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) consider(entry.path());
  if (eval_files.empty()) throw Error("report: no experiments found under " + artifacts_root);
  std::sort(eval_files.begin(), eval_files.end());
  std::sort(probe_files.begin(), probe_files.end());

  // key: task, method, chunk_len, exec_len, n_demos, detector
  std::map<std::vector<std::string>, Cell> cells;
  for (const auto& file : eval_files) {
    const CsvTable t = read_csv(file);
    const int c_task = t.col("task"), c_method = t.col("method"), c_chunk = t.col("chunk_len"),
              c_exec = t.col("exec_len"), c_demos = t.col("n_demos"), c_det = t.col("detector"),
              c_mean = t.col("mean_score"), c_cfg = t.col("config_digest"),
              c_ds = t.col("dataset_digest");
    for (const auto& r : t.rows) {
      std::vector<std::string> key = {r[c_task], r[c_method], r[c_chunk],
                                      r[c_exec], r[c_demos],  r[c_det]};
      Cell& cell = cells[key];
      if (!cell.config_digest.empty() && cell.config_digest != r[c_cfg])
        throw AggregationError("report: mixed config digests for cell " + r[c_task] + "/" +
                               r[c_method]);
      if (!cell.dataset_digest.empty() && cell.dataset_digest != r[c_ds])
        throw AggregationError("report: mixed dataset digests for cell " + r[c_task] + "/" +
                               r[c_method]);
      cell.config_digest = r[c_cfg];
      cell.dataset_digest = r[c_ds];
      cell.seed_means.push_back(std::stod(r[c_mean]));
    }
  }

  std::string summary =
      "task,method,chunk_len,exec_len,n_demos,detector,n_seeds,mean,se,config_digest\n";
  for (const auto& [key, cell] : cells) {
    summary += key[0] + "," + key[1] + "," + key[2] + "," + key[3] + "," + key[4] + "," +
               key[5] + "," + std::to_string(cell.seed_means.size()) + "," +
               fmt(mean_of(cell.seed_means)) + "," + fmt(se_of(cell.seed_means)) + "," +
               cell.config_digest + "\n";
  }

  std::string chunk_tbl = "task,method,chunk_len,mean,se\n";
  std::string data_tbl = "task,method,n_demos,mean,se\n";
  std::string det_tbl = "task,method,detector,mean,se\n";
  for (const auto& [key, cell] : cells) {
    chunk_tbl += key[0] + "," + key[1] + "," + key[2] + "," + fmt(mean_of(cell.seed_means)) +
                 "," + fmt(se_of(cell.seed_means)) + "\n";
    data_tbl += key[0] + "," + key[1] + "," + key[4] + "," + fmt(mean_of(cell.seed_means)) +
                "," + fmt(se_of(cell.seed_means)) + "\n";
    det_tbl += key[0] + "," + key[1] + "," + key[5] + "," + fmt(mean_of(cell.seed_means)) +
               "," + fmt(se_of(cell.seed_means)) + "\n";
  }

  // probe aggregation keyed by task, method
  std::map<std::vector<std::string>, std::pair<std::vector<double>, std::vector<double>>> probes;
  for (const auto& file : probe_files) {
    const CsvTable t = read_csv(file);
    const int c_task = t.col("task"), c_method = t.col("method"), c_iid = t.col("iid_acc"),
              c_roll = t.col("rollout_acc");
    for (const auto& r : t.rows) {
      auto& entry = probes[{r[c_task], r[c_method]}];
      entry.first.push_back(std::stod(r[c_iid]));
      entry.second.push_back(std::stod(r[c_roll]));
    }
  }
  std::string probe_tbl = "task,method,n_seeds,iid_acc,rollout_acc,gap\n";
  for (const auto& [key, acc] : probes) {
    const double iid = mean_of(acc.first), roll = mean_of(acc.second);
    probe_tbl += key[0] + "," + key[1] + "," + std::to_string(acc.first.size()) + "," +
                 fmt(iid) + "," + fmt(roll) + "," + fmt(iid - roll) + "\n";
  }

  std::ofstream(root / "summary.csv") << summary;
  std::ofstream(root / "chunk.csv") << chunk_tbl;
  std::ofstream(root / "data_size.csv") << data_tbl;
  std::ofstream(root / "detector_noise.csv") << det_tbl;
  std::ofstream(root / "probe_summary.csv") << probe_tbl;

  std::ostringstream human;
  human << "=== score by task x method ===\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-22s %-16s %6s %6s %8s %-24s %9s %9s\n", "task", "method",
                "chunk", "exec", "demos", "detector", "mean", "se");
  human << line;
  for (const auto& [key, cell] : cells) {
    std::snprintf(line, sizeof(line), "%-22s %-16s %6s %6s %8s %-24s %9.3f %9.3f\n",
                  key[0].c_str(), key[1].c_str(), key[2].c_str(), key[3].c_str(),
                  key[4].c_str(), key[5].c_str(), mean_of(cell.seed_means),
                  se_of(cell.seed_means));
    human << line;
  }
  human << "\n=== probe accuracy (iid vs rollout) ===\n";
  std::snprintf(line, sizeof(line), "%-22s %-16s %9s %9s %9s\n", "task", "method", "iid",
                "rollout", "gap");
  human << line;
  for (const auto& [key, acc] : probes) {
    const double iid = mean_of(acc.first), roll = mean_of(acc.second);
    std::snprintf(line, sizeof(line), "%-22s %-16s %9.3f %9.3f %9.3f\n", key[0].c_str(),
                  key[1].c_str(), iid, roll, iid - roll);
    human << line;
  }
  std::ofstream(root / "report.txt") << human.str();
  return human.str();
}

}  // namespace kflab::harness
