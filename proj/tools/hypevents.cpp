// Command-line driver for every pipeline stage, the multi-seed experiment and
// the annotation agreement report.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hypevents/core/error.hpp"
#include "hypevents/eval/metrics.hpp"
#include "hypevents/pipeline/config.hpp"
#include "hypevents/pipeline/experiment.hpp"
#include "hypevents/pipeline/stages.hpp"

namespace fs = std::filesystem;
using namespace hypevents;
using namespace hypevents::pipeline;
using json = nlohmann::ordered_json;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seeds;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::optional<std::string> decode;
  std::optional<std::size_t> k;
  std::optional<std::string> aux_label;
  std::optional<std::string> provider;
  std::optional<std::size_t> jobs;
  std::string annotations;
  std::vector<std::string> sets;
};

enum Flag : unsigned {
  kTraining = 1,   // --epochs --lr --batch
  kDecode = 2,     // --decode --k
  kAux = 4,        // --aux-label
  kProvider = 8,   // --provider
  kSeeds = 16,     // --seeds
  kAnnotations = 32,
};

void add_common(CLI::App* sub, Options& o, unsigned flags) {
  sub->add_option("--config", o.config, "run configuration file (key = value lines)");
  sub->add_option("--out", o.out, "output directory (default $" + std::string(kOutputEnv) + " or ./runs)");
  sub->add_option("--seed", o.seed, "run seed");
  sub->add_option("--set", o.sets, "override any config key: --set key=value")->take_all();
  sub->add_option("--jobs", o.jobs, "worker threads");
  if (flags & kSeeds) sub->add_option("--seeds", o.seeds, "run seeds 1..N");
  if (flags & kTraining) {
    sub->add_option("--epochs", o.epochs, "training epochs");
    sub->add_option("--lr", o.lr, "learning rate");
    sub->add_option("--batch", o.batch, "batch size");
  }
  if (flags & kDecode) {
    sub->add_option("--decode", o.decode, "greedy or topk");
    sub->add_option("--k", o.k, "k for top-k decoding");
  }
  if (flags & kAux) sub->add_option("--aux-label", o.aux_label, "gold or bertscore");
  if (flags & kProvider) sub->add_option("--provider", o.provider, "encoder, lm or static");
  if (flags & kAnnotations) sub->add_option("--annotations", o.annotations, "annotation records")->required();
}

// Flags are applied on top of the config file; --epochs/--lr/--batch go to
// whichever model the subcommand trains (both for experiment).
RunConfig build_config(const Options& o, const std::string& command) {
  RunConfig c = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  std::vector<std::string> problems;
  auto set = [&](const std::string& key, const std::string& value) {
    try {
      c.set(key, value);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::validation) throw;
      problems.emplace_back(e.what());
    }
  };
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      problems.push_back("--set expects key=value, got '" + kv + "'");
      continue;
    }
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  const bool lm = command == "train-lm" || command == "experiment";
  const bool mtl = command == "train-mtl" || command == "experiment";
  auto both = [&](const char* suffix, const std::string& value) {
    if (lm) set(std::string("lm.") + suffix, value);
    if (mtl) set(std::string("mtl.") + suffix, value);
  };
  if (o.epochs) both("epochs", std::to_string(*o.epochs));
  if (o.lr) {
    std::ostringstream s;
    s << std::setprecision(17) << *o.lr;
    both("lr", s.str());
  }
  if (o.batch) both("batch", std::to_string(*o.batch));
  if (o.decode) set("decode.strategy", *o.decode);
  if (o.k) set("decode.k", std::to_string(*o.k));
  if (o.aux_label) set("mtl.aux_label", *o.aux_label);
  if (o.provider) set("provider", *o.provider);
  if (o.jobs) set("jobs", std::to_string(*o.jobs));
  if (o.seed) {
    set("seed", std::to_string(*o.seed));
    set("seeds", std::to_string(*o.seed));
  }
  if (o.seeds) {
    if (*o.seeds == 0) {
      problems.emplace_back("--seeds must be positive");
    } else {
      std::string list;
      for (std::size_t s = 1; s <= *o.seeds; ++s) list += (s > 1 ? "," : "") + std::to_string(s);
      set("seeds", list);
    }
  }
  if (!o.out.empty()) c.out = o.out;
  for (const auto& v : c.violations()) problems.push_back(v);
  if (!problems.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                      (problems.size() > 1 ? "s" : "") + "):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(ErrorCode::validation, msg);
  }
  return c;
}

void report_error(ErrorCode code, const std::string& message) {
  json j;
  j["error"] = std::string(to_string(code));
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

void log_line(const std::string& msg) { std::cerr << msg << "\n"; }

int run_agreement(const RunConfig& config, const Options& o, const fs::path& root) {
  const auto anns = eval::load_annotations(o.annotations);
  std::string stats, votes;
  for (const std::string& aspect : eval::aspects_of(anns)) {
    const auto it = config.agreement_scales.find(aspect);
    const eval::Scale scale = it == config.agreement_scales.end() ? eval::Scale::nominal() : eval::Scale::parse(it->second);
    const auto table = eval::table_for(anns, aspect, scale);
    auto emit = [&](eval::AgreementReport r) {
      json j = json::parse(eval::agreement_record(r));
      j["aspect"] = aspect;
      stats += j.dump() + "\n";
      std::cout << aspect << "  " << r.statistic << " = " << r.value << (r.degenerate ? " (degenerate)" : "") << "\n";
    };
    if (scale.kind == eval::Scale::Kind::ordinal) {
      emit(eval::krippendorff_alpha_ordinal(table));
    } else {
      const auto k = eval::pairwise_kappa(table);
      for (const auto& r : k.pairs) emit(r);
      if (k.pairs.size() > 1) {
        eval::AgreementReport mean = k.pairs.front();
        mean.statistic = "cohen_kappa_mean";
        mean.value = k.mean;
        mean.n_annotators = table.annotators.size();
        mean.degenerate = false;
        emit(mean);
      }
    }
    const auto mv = eval::majority_vote(table);
    json j;
    j["aspect"] = aspect;
    json labels = json::object();
    for (const auto& e : mv.labels) labels[e.item] = e.label;
    j["labels"] = labels;
    j["excluded"] = mv.excluded;
    votes += j.dump() + "\n";
  }
  write_text(root / "agreement" / "agreement.jsonl", stats);
  write_text(root / "agreement" / "majority.jsonl", votes);
  write_text(root / "agreement" / files::run_config, config.to_text());
  return 0;
}

Stage stage_for(const std::string& name) {
  for (Stage s : kAllStages) {
    if (stage_name(s) == name) return s;
  }
  throw Error(ErrorCode::usage, "unknown subcommand " + name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hypothesis selection from generated next events: corpus, LM, generation, selection, "
               "multi-task training, evaluation and agreement statistics."};
  app.require_subcommand(1, 1);
  Options o;
  const std::vector<std::pair<std::string, std::pair<std::string, unsigned>>> commands{
      {"gen-corpus", {"write the story and instance corpus and its vocabulary", 0}},
      {"train-lm", {"train the infilling language model", kTraining}},
      {"generate", {"generate a next event per hypothesis", kDecode}},
      {"select", {"unsupervised selection by generated-event similarity to O2", kProvider}},
      {"train-mtl", {"train the multi-task hypothesis classifier", kTraining | kAux | kProvider}},
      {"predict", {"predict dev-set hypotheses with the multi-task model", 0}},
      {"evaluate", {"accuracy and category breakdown of predictions and selections", 0}},
      {"agreement", {"kappa, ordinal alpha and majority vote over annotation records", kAnnotations}},
      {"experiment", {"every stage for each seed plus mean and variance",
                      kTraining | kDecode | kAux | kProvider | kSeeds}},
  };
  for (const auto& [name, info] : commands) add_common(app.add_subcommand(name, info.first), o, info.second);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(ErrorCode::usage, e.what());
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const RunConfig config = build_config(o, command);
    const fs::path root = output_root(config.out);
    if (command == "experiment") {
      const auto report = run_experiment(config, root);
      std::cout << summary_table(report, config);
      return report.partial ? 1 : 0;
    }
    if (command == "agreement") return run_agreement(config, o, root);
    const Stage stage = stage_for(command);
    run_stage(stage, config, root, log_line);
    if (stage == Stage::evaluate) std::cout << read_text(root / files::metrics);
    return 0;
  } catch (const Error& e) {
    report_error(e.code(), e.what());
    return e.code() == ErrorCode::usage ? 2 : 1;
  } catch (const std::exception& e) {
    report_error(ErrorCode::io, e.what());
    return 1;
  }
}
