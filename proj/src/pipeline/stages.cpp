#include "hypevents/pipeline/stages.hpp"

#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "hypevents/core/error.hpp"
#include "hypevents/eval/metrics.hpp"
#include "hypevents/lm/infill.hpp"
#include "hypevents/pipeline/checkpoint.hpp"
#include "hypevents/simscore/bertscore.hpp"
#include "hypevents/text/dataset.hpp"

namespace hypevents::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::gen_corpus: return "gen-corpus";
    case Stage::train_lm: return "train-lm";
    case Stage::generate: return "generate";
    case Stage::train_mtl: return "train-mtl";
    case Stage::predict: return "predict";
    case Stage::select: return "select";
    case Stage::evaluate: return "evaluate";
  }
  return "?";
}

std::string stage_dir(Stage s) {
  switch (s) {
    case Stage::gen_corpus: return "corpus";
    case Stage::train_lm: return "lm";
    case Stage::generate: return "generations";
    case Stage::train_mtl: return "mtl";
    case Stage::predict: return "predict";
    case Stage::select: return "select";
    case Stage::evaluate: return "eval";
  }
  return "?";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

// Files whose presence marks a finished stage.
std::vector<const char*> outputs_of(Stage s) {
  switch (s) {
    case Stage::gen_corpus: return {files::stories, files::train, files::dev, files::vocab};
    case Stage::train_lm: return {files::lm_checkpoint, files::lm_losses};
    case Stage::generate: return {files::train_generations, files::dev_generations, files::generation_stats};
    case Stage::train_mtl: return {files::mtl_checkpoint, files::mtl_metrics, files::mtl_summary};
    case Stage::predict: return {files::predictions};
    case Stage::select: return {files::selections, files::select_summary};
    case Stage::evaluate: return {files::metrics, files::breakdown};
  }
  return {};
}

Stage producer_of(const char* file) {
  for (Stage s : kAllStages) {
    for (const char* f : outputs_of(s)) {
      if (std::string_view(f) == file) return s;
    }
  }
  throw Error(ErrorCode::contract, std::string("no stage produces ") + file);
}

fs::path require(const fs::path& root, const char* file, Stage consumer) {
  const fs::path p = root / file;
  if (!fs::exists(p)) {
    const Stage producer = producer_of(file);
    throw Error(ErrorCode::pipeline_order, stage_name(consumer) + " needs " + p.string() + "; run the " +
                                               stage_name(producer) + " stage first");
  }
  return p;
}

std::string lines_of(const std::vector<std::string>& records) {
  std::string out;
  for (const auto& r : records) out += r + "\n";
  return out;
}

void finish(Stage s, const RunConfig& config, const fs::path& root) {
  write_text(root / stage_dir(s) / files::run_config, config.to_text());
}

void say(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

text::Vocab load_vocab(const fs::path& root, Stage consumer) {
  return text::Vocab::load(require(root, files::vocab, consumer));
}

Restored<lm::LmModel> load_lm(const fs::path& root, Stage consumer) {
  return restore_lm(load_checkpoint(require(root, files::lm_checkpoint, consumer), ModelKind::lm));
}

Restored<mtl::MtlModel> load_mtl(const fs::path& root, Stage consumer) {
  return restore_mtl(load_checkpoint(require(root, files::mtl_checkpoint, consumer), ModelKind::mtl));
}

// Owns whatever model backs an embedding provider.
struct ProviderHandle {
  std::unique_ptr<Restored<lm::LmModel>> lm;
  std::unique_ptr<Restored<mtl::MtlModel>> mtl;
  std::unique_ptr<sim::EmbeddingProvider> provider;
};

ProviderHandle make_provider(const std::string& name, const fs::path& root, Stage consumer) {
  ProviderHandle h;
  if (name == "encoder") {
    h.mtl = std::make_unique<Restored<mtl::MtlModel>>(load_mtl(root, consumer));
    h.provider = std::make_unique<mtl::EncoderEmbeddingProvider>(h.mtl->model);
    return h;
  }
  h.lm = std::make_unique<Restored<lm::LmModel>>(load_lm(root, consumer));
  if (name == "static") {
    h.provider = std::make_unique<sim::StaticEmbeddingProvider>(h.lm->model.stack().token_embedding.value);
  } else {
    h.provider = std::make_unique<sim::LmEmbeddingProvider>(h.lm->model);
  }
  return h;
}

void gen_corpus(const RunConfig& config, const fs::path& root, const Log& log) {
  std::vector<text::Story> stories;
  std::vector<text::AbductiveInstance> train, dev;
  if (config.corpus.source == "synthetic") {
    const auto corpus = text::gen_synthetic(config.synthetic_spec());
    stories = corpus.stories;
    train.assign(corpus.instances.begin(), corpus.instances.begin() + static_cast<std::ptrdiff_t>(config.corpus.n_train));
    dev.assign(corpus.instances.begin() + static_cast<std::ptrdiff_t>(config.corpus.n_train), corpus.instances.end());
  } else {
    stories = text::load_timetravel(config.corpus.stories);
    train = text::load_anli(config.corpus.train);
    dev = text::load_anli(config.corpus.dev);
  }
  const text::Vocab vocab = text::build_vocab(stories, train, config.corpus.min_count);
  fs::create_directories(root / "corpus");
  text::save_timetravel(root / files::stories, stories);
  text::save_anli(root / files::train, train);
  text::save_anli(root / files::dev, dev);
  vocab.save(root / files::vocab);
  say(log, "corpus: " + std::to_string(stories.size()) + " stories, " + std::to_string(train.size()) + " train / " +
               std::to_string(dev.size()) + " dev instances, vocabulary " + std::to_string(vocab.size()));
}

void train_lm_stage(const RunConfig& config, const fs::path& root, const Log& log) {
  const auto stories = text::load_timetravel(require(root, files::stories, Stage::train_lm));
  const text::Vocab vocab = load_vocab(root, Stage::train_lm);
  const auto examples = lm::build_infill_examples(stories, vocab);
  const lm::LmConfig lc = config.lm_config();
  lm::LmModel model(lc, vocab.size());
  std::vector<std::string> records;
  const auto result = lm::train_lm(model, examples, lc, [&](std::size_t epoch, double loss) {
    json j;
    j["epoch"] = epoch;
    j["loss"] = loss;
    records.push_back(j.dump());
    say(log, "train-lm: epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
  });
  if (result.skipped) say(log, "train-lm: skipped " + std::to_string(result.skipped) + " overlong examples");
  fs::create_directories(root / "lm");
  save_checkpoint(root / files::lm_checkpoint, make_checkpoint(model, config, vocab));
  write_text(root / files::lm_losses, lines_of(records));
}

void generate_stage(const RunConfig& config, const fs::path& root, const Log& log) {
  const auto train = text::load_anli(require(root, files::train, Stage::generate));
  const auto dev = text::load_anli(require(root, files::dev, Stage::generate));
  const auto lm = load_lm(root, Stage::generate);
  const lm::DecodeSpec spec = config.decode_spec();
  lm::GenerationStats train_stats, dev_stats;
  const auto train_out = lm::generate_for_instances(lm.model, lm.vocab, train, spec, config.jobs, &train_stats);
  const auto dev_out = lm::generate_for_instances(lm.model, lm.vocab, dev, spec, config.jobs, &dev_stats);
  fs::create_directories(root / "generations");
  text::save_anli(root / files::train_generations, train_out);
  text::save_anli(root / files::dev_generations, dev_out);
  json stats;
  stats["decode"] = lm::to_string(spec.strategy);
  stats["train_instances"] = train_out.size();
  stats["train_degenerate"] = train_stats.degenerate;
  stats["dev_instances"] = dev_out.size();
  stats["dev_degenerate"] = dev_stats.degenerate;
  write_text(root / files::generation_stats, stats.dump() + "\n");
  say(log, "generate: " + std::to_string(train_out.size() + dev_out.size()) + " instances, " +
               std::to_string(train_stats.degenerate + dev_stats.degenerate) + " degenerate generations");
}

void train_mtl_stage(const RunConfig& config, const fs::path& root, const Log& log) {
  const auto train = text::load_anli(require(root, files::train_generations, Stage::train_mtl));
  const auto dev = text::load_anli(require(root, files::dev_generations, Stage::train_mtl));
  const text::Vocab vocab = load_vocab(root, Stage::train_mtl);
  const mtl::MtlConfig mc = config.mtl_config();

  std::vector<int> aux;
  if (mc.aux_label == mtl::AuxLabel::bertscore) {
    // The encoder is what is being trained, so it cannot label its own data.
    const std::string name = config.provider == "encoder" ? "lm" : config.provider;
    const ProviderHandle h = make_provider(name, root, Stage::train_mtl);
    aux = mtl::similarity_aux_labels(train, vocab, *h.provider);
  }
  mtl::MtlModel model(mc, vocab.size());
  std::vector<std::string> records;
  const auto result = mtl::train_mtl(model, train, dev, vocab, mc, aux, [&](const mtl::EpochMetrics& m) {
    records.push_back(mtl::epoch_record(m));
    say(log, "train-mtl: " + records.back());
  });
  fs::create_directories(root / "mtl");
  save_checkpoint(root / files::mtl_checkpoint, make_checkpoint(model, config, vocab));
  write_text(root / files::mtl_metrics, lines_of(records));
  json summary;
  summary["aux_label"] = mtl::to_string(mc.aux_label);
  summary["epochs"] = result.epochs.size();
  summary["w_final"] = model.loss_weight.value.item();
  summary["w_trajectory"] = result.w_trajectory;
  write_text(root / files::mtl_summary, summary.dump() + "\n");
}

void predict_stage(const RunConfig&, const fs::path& root, const Log& log) {
  const auto dev = text::load_anli(require(root, files::dev_generations, Stage::predict));
  const auto m = load_mtl(root, Stage::predict);
  std::vector<std::string> records;
  std::size_t ties = 0;
  for (const auto& inst : dev) {
    const mtl::Prediction p = mtl::predict(m.model, inst, m.vocab);
    json j;
    j["id"] = inst.id;
    j["prediction"] = p.hypothesis;
    j["aux_prediction"] = p.aux;
    j["gold"] = inst.label ? json(*inst.label) : json(nullptr);
    j["tie"] = p.tie;
    j["aux_tie"] = p.aux_tie;
    j["logits"] = p.main_logits;
    j["aux_logits"] = p.aux_logits;
    j["category"] = inst.category;
    records.push_back(j.dump());
    ties += p.tie;
  }
  write_text(root / files::predictions, lines_of(records));
  say(log, "predict: " + std::to_string(dev.size()) + " instances, " + std::to_string(ties) + " ties");
}

void select_stage(const RunConfig& config, const fs::path& root, const Log& log) {
  const auto dev = text::load_anli(require(root, files::dev_generations, Stage::select));
  const text::Vocab vocab = load_vocab(root, Stage::select);
  const ProviderHandle h = make_provider(config.provider, root, Stage::select);
  const auto ev = sim::evaluate_selector(dev, vocab, *h.provider, config.jobs);
  std::vector<std::string> records;
  for (const auto& s : ev.records) records.push_back(sim::selection_record(s));
  write_text(root / files::selections, lines_of(records));
  json summary;
  summary["provider"] = h.provider->name();
  summary["n"] = dev.size();
  summary["accuracy"] = ev.accuracy;
  summary["correct"] = ev.correct;
  summary["ties"] = ev.ties;
  summary["degenerate"] = ev.degenerate;
  summary["abstained"] = ev.abstained;
  write_text(root / files::select_summary, summary.dump() + "\n");
  say(log, "select: accuracy " + std::to_string(ev.accuracy) + " with " + h.provider->name() + " embeddings");
}

std::vector<json> read_records(const fs::path& path) {
  std::vector<json> out;
  std::stringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

void evaluate_stage(const RunConfig&, const fs::path& root, const Log& log) {
  const auto predictions = read_records(require(root, files::predictions, Stage::evaluate));
  const auto selections = read_records(require(root, files::selections, Stage::evaluate));
  const json select_summary = json::parse(read_text(require(root, files::select_summary, Stage::evaluate)));
  const json mtl_summary = json::parse(read_text(require(root, files::mtl_summary, Stage::evaluate)));

  std::vector<int> pred, gold;
  std::vector<eval::BreakdownRecord> rows;
  std::size_t ties = 0;
  for (const json& p : predictions) {
    if (p["gold"].is_null()) throw Error(ErrorCode::schema, "evaluate: instance " + p["id"].get<std::string>() + " is unlabelled");
    pred.push_back(p["prediction"].get<int>());
    gold.push_back(p["gold"].get<int>());
    ties += p["tie"].get<bool>();
    rows.push_back({p["category"].get<std::string>(), pred.back(), gold.back()});
  }
  const double mtl_accuracy = eval::accuracy(pred, gold);

  json m;
  m["n_dev"] = predictions.size();
  m["mtl_accuracy"] = mtl_accuracy;
  m["mtl_ties"] = ties;
  m["w_final"] = mtl_summary["w_final"];
  m["unsupervised_accuracy"] = select_summary["accuracy"];
  m["unsupervised_provider"] = select_summary["provider"];
  m["unsupervised_ties"] = select_summary["ties"];
  m["unsupervised_degenerate"] = select_summary["degenerate"];
  m["unsupervised_abstained"] = select_summary["abstained"];
  m["n_selections"] = selections.size();
  write_text(root / files::metrics, m.dump() + "\n");

  std::vector<std::string> lines;
  for (const auto& row : eval::breakdown_report(rows)) lines.push_back(eval::breakdown_record(row));
  write_text(root / files::breakdown, lines_of(lines));
  say(log, "evaluate: mtl accuracy " + std::to_string(mtl_accuracy) + ", unsupervised accuracy " +
               select_summary["accuracy"].dump());
}

}  // namespace

void run_stage(Stage s, const RunConfig& config, const fs::path& root, const Log& log) {
  config.validate();
  switch (s) {
    case Stage::gen_corpus: gen_corpus(config, root, log); break;
    case Stage::train_lm: train_lm_stage(config, root, log); break;
    case Stage::generate: generate_stage(config, root, log); break;
    case Stage::train_mtl: train_mtl_stage(config, root, log); break;
    case Stage::predict: predict_stage(config, root, log); break;
    case Stage::select: select_stage(config, root, log); break;
    case Stage::evaluate: evaluate_stage(config, root, log); break;
  }
  finish(s, config, root);
}

bool stage_complete(Stage s, const RunConfig& config, const fs::path& root) {
  const fs::path marker = root / stage_dir(s) / files::run_config;
  if (!fs::exists(marker) || read_text(marker) != config.to_text()) return false;
  for (const char* f : outputs_of(s)) {
    if (!fs::exists(root / f)) return false;
  }
  return true;
}

}  // namespace hypevents::pipeline
