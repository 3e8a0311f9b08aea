#include "hypevents/pipeline/experiment.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "hypevents/core/error.hpp"

namespace hypevents::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.n = values.size();
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(a.n);
  if (a.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.variance = ss / static_cast<double>(a.n - 1);
  }
  return a;
}

namespace {

class ExperimentLog {
 public:
  explicit ExperimentLog(const fs::path& path) : out_(path, std::ios::app) {}

  void write(const std::string& line) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::lock_guard lock(mu_);
    out_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " " << line << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::mutex mu_;
};

json read_json(const fs::path& p) { return json::parse(read_text(p)); }

SeedReport collect(std::uint64_t seed, const fs::path& root) {
  SeedReport r;
  r.seed = seed;
  r.ok = true;
  const json m = read_json(root / files::metrics);
  r.mtl_accuracy = m["mtl_accuracy"].get<double>();
  r.mtl_ties = m["mtl_ties"].get<std::size_t>();
  r.unsupervised_accuracy = m["unsupervised_accuracy"].get<double>();
  r.unsupervised_ties = m["unsupervised_ties"].get<std::size_t>();
  r.unsupervised_degenerate = m["unsupervised_degenerate"].get<std::size_t>();
  r.unsupervised_abstained = m["unsupervised_abstained"].get<std::size_t>();
  const json s = read_json(root / files::mtl_summary);
  r.w_final = s["w_final"].get<double>();
  r.w_trajectory = s["w_trajectory"].get<std::vector<double>>();
  std::stringstream lines(read_text(root / files::mtl_metrics));
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty()) r.epochs.push_back(line);
  }
  return r;
}

SeedReport run_seed(const RunConfig& base, std::uint64_t seed, const fs::path& out, ExperimentLog& log) {
  const RunConfig config = base.for_seed(seed);
  const fs::path root = out / ("seed-" + std::to_string(seed));
  const std::string tag = "seed " + std::to_string(seed) + ": ";
  Stage current = Stage::gen_corpus;
  try {
    for (Stage s : kAllStages) {
      current = s;
      if (stage_complete(s, config, root)) {
        log.write(tag + stage_name(s) + " up to date, skipped");
        continue;
      }
      log.write(tag + stage_name(s) + " started");
      run_stage(s, config, root, [&](const std::string& msg) { log.write(tag + msg); });
    }
    return collect(seed, root);
  } catch (const std::exception& e) {
    SeedReport r;
    r.seed = seed;
    r.error = stage_name(current) + ": " + e.what();
    log.write(tag + "failed in " + r.error);
    return r;
  }
}

json aggregate_json(const Aggregate& a) {
  json j;
  j["n"] = a.n;
  j["mean"] = a.n ? json(a.mean) : json(nullptr);
  j["variance"] = a.variance ? json(*a.variance) : json(nullptr);
  return j;
}

std::string percent(double fraction) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * fraction;
  return s.str();
}

}  // namespace

ExperimentReport run_experiment(const RunConfig& config, const fs::path& out) {
  config.validate();
  fs::create_directories(out);
  write_text(out / files::run_config, config.to_text());
  ExperimentLog log(out / "experiment.log");
  log.write("experiment started, seeds " + std::to_string(config.seeds.size()));

  ExperimentReport report;
  report.seeds.resize(config.seeds.size());
  const std::size_t workers = std::min(config.jobs, config.seeds.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < config.seeds.size(); ++i) report.seeds[i] = run_seed(config, config.seeds[i], out, log);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        for (std::size_t i = w; i < config.seeds.size(); i += workers)
          report.seeds[i] = run_seed(config, config.seeds[i], out, log);
      });
    }
    for (auto& t : threads) t.join();
  }

  std::vector<double> mtl, unsup;
  for (const SeedReport& s : report.seeds) {
    if (!s.ok) {
      report.partial = true;
      continue;
    }
    mtl.push_back(s.mtl_accuracy);
    unsup.push_back(s.unsupervised_accuracy);
  }
  report.mtl = aggregate(mtl);
  report.unsupervised = aggregate(unsup);

  write_text(out / "experiment_report.jsonl", report_lines(report));
  write_text(out / "summary.txt", summary_table(report, config));
  log.write("experiment finished" + std::string(report.partial ? " (partial)" : ""));
  return report;
}

std::string report_lines(const ExperimentReport& report) {
  std::string out;
  for (const SeedReport& s : report.seeds) {
    json j;
    j["seed"] = s.seed;
    j["status"] = s.ok ? "ok" : "failed";
    if (!s.ok) {
      j["error"] = s.error;
      out += j.dump() + "\n";
      continue;
    }
    j["mtl_accuracy"] = s.mtl_accuracy;
    j["unsupervised_accuracy"] = s.unsupervised_accuracy;
    j["mtl_ties"] = s.mtl_ties;
    j["unsupervised_ties"] = s.unsupervised_ties;
    j["unsupervised_degenerate"] = s.unsupervised_degenerate;
    j["unsupervised_abstained"] = s.unsupervised_abstained;
    j["w_final"] = s.w_final;
    j["w_trajectory"] = s.w_trajectory;
    json epochs = json::array();
    for (const auto& e : s.epochs) epochs.push_back(json::parse(e));
    j["epochs"] = epochs;
    out += j.dump() + "\n";
  }
  json agg;
  agg["aggregate"] = true;
  agg["seeds"] = report.seeds.size();
  agg["mtl_accuracy"] = aggregate_json(report.mtl);
  agg["unsupervised_accuracy"] = aggregate_json(report.unsupervised);
  agg["partial"] = report.partial;
  out += agg.dump() + "\n";
  return out;
}

std::string summary_table(const ExperimentReport& report, const RunConfig& config) {
  std::ostringstream s;
  s << "hypothesis selection accuracy (%), " << report.mtl.n << " of " << report.seeds.size() << " seeds";
  if (report.partial) s << " (partial: some seeds failed)";
  s << "\ncorpus: " << config.corpus.source;
  if (config.corpus.source == "synthetic") s << " rho=" << config.corpus.rho;
  s << "\n\n";
  s << std::left << std::setw(8) << "seed" << std::setw(16) << "unsupervised" << std::setw(10) << "mtl"
    << "w\n";
  for (const SeedReport& r : report.seeds) {
    s << std::setw(8) << r.seed;
    if (!r.ok) {
      s << "failed: " << r.error << "\n";
      continue;
    }
    s << std::setw(16) << percent(r.unsupervised_accuracy) << std::setw(10) << percent(r.mtl_accuracy)
      << std::fixed << std::setprecision(4) << r.w_final << "\n";
  }
  auto line = [&](const char* name, const Aggregate& a) {
    s << std::setw(24) << name;
    if (a.n == 0) {
      s << "n/a\n";
      return;
    }
    s << percent(a.mean);
    if (a.variance) {
      s << "  variance " << std::fixed << std::setprecision(4) << 1e4 * *a.variance << " (%^2)";
    } else {
      s << "  variance undefined (one seed)";
    }
    s << "\n";
  };
  s << "\n";
  line("mean unsupervised", report.unsupervised);
  line("mean mtl", report.mtl);
  s << "\npaper reference (not reproduced), full-scale test accuracy:\n";
  s << std::fixed << std::setprecision(2);
  s << "  unsupervised selection       " << reference::unsupervised << "\n";
  s << "  multi-task model             " << reference::mtl_mean << " +- " << reference::mtl_spread << "\n";
  s << "  BERT-Large baseline          " << reference::bert_large << "\n";
  s << "  majority class (dev)         " << reference::majority << "\n";
  return s.str();
}

}  // namespace hypevents::pipeline
