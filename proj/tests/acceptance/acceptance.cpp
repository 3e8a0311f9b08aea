// Acceptance run: one PASS/FAIL line per criterion. The pipeline criteria
// train the toy configuration for seeds 1-5, which takes about a quarter of an
// hour on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hypevents/core/error.hpp"
#include "hypevents/core/ops.hpp"
#include "hypevents/eval/metrics.hpp"
#include "hypevents/lm/generate.hpp"
#include "hypevents/lm/infill.hpp"
#include "hypevents/mtl/model.hpp"
#include "hypevents/pipeline/checkpoint.hpp"
#include "hypevents/pipeline/experiment.hpp"
#include "hypevents/simscore/bertscore.hpp"
#include "hypevents/text/synthetic.hpp"
#include "hypevents/text/tokenizer.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace hypevents;
using namespace hypevents::pipeline;
namespace fs = std::filesystem;
using json = nlohmann::json;
using testing::random_tensor;
using testing::read_file;

namespace {

// Tolerances and thresholds, fixed here rather than per check.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 60;
constexpr double kOracleTolerance = 1e-9;
constexpr double kLossRatio = 0.7;
constexpr double kMemorisedLoss = 0.1;
constexpr double kLmBudgetSeconds = 300;
constexpr double kMtlAccuracy = 0.9;
constexpr double kMtlBudgetSeconds = 600;
constexpr double kAlphaTolerance = 1e-12;
constexpr double kMeanTolerance = 1e-15;
constexpr double kVarianceRelTolerance = 1e-12;
constexpr std::size_t kSeeds = 5;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
    if (!ok) {
      pass = false;
      detail += " [FAILED]";
    }
  }
};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

text::Story dotty() {
  text::Story s;
  s.id = "golden";
  s.sentences = {"Dotty was being very grumpy.", "Dotty ate something bad.", "She felt sick.",
                 "She went to bed.", "She felt better later."};
  return s;
}

// ---------------------------------------------------------------- gradients

Var project(Tape& tape, Var y, RngStream rng) {
  return ops::sum(ops::mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

using Case = std::pair<testing::ScalarFn, std::vector<Tensor>>;
using Builder = std::function<Case(RngStream&)>;

std::vector<std::pair<std::string, Builder>> op_cases() {
  auto dim = [](RngStream& r) { return 1 + r.below(4); };
  std::vector<std::pair<std::string, Builder>> c;
  auto unary = [&](const std::string& name, std::function<Var(Var)> op, double scale = 1.0) {
    c.emplace_back(name, [=](RngStream& r) {
      testing::ScalarFn f = [w = r.split("w"), op](Tape& t, std::span<const Var> v) { return project(t, op(v[0]), w); };
      return Case{f, {random_tensor({dim(r), dim(r) + 1}, r, scale)}};
    });
  };
  auto binary = [&](const std::string& name, std::function<Var(Var, Var)> op) {
    c.emplace_back(name, [=](RngStream& r) {
      const Shape s{dim(r), dim(r)};
      testing::ScalarFn f = [w = r.split("w"), op](Tape& t, std::span<const Var> v) {
        return project(t, op(v[0], v[1]), w);
      };
      return Case{f, {random_tensor(s, r), random_tensor(s, r)}};
    });
  };
  binary("add", [](Var a, Var b) { return ops::add(a, b); });
  binary("sub", [](Var a, Var b) { return ops::sub(a, b); });
  binary("mul", [](Var a, Var b) { return ops::mul(a, b); });
  unary("scale", [](Var a) { return ops::scale(a, -1.7); });
  unary("gelu", [](Var a) { return ops::gelu(a); }, 2.0);
  unary("transpose", [](Var a) { return ops::transpose(a); });
  unary("softmax", [](Var a) { return ops::softmax(a, -1); }, 2.0);
  unary("softmax_axis0", [](Var a) { return ops::softmax(a, 0); }, 2.0);
  unary("row", [](Var a) { return ops::row(a, 0); });
  unary("slice_cols", [](Var a) { return ops::slice_cols(a, 1, 1); });
  unary("sum_mean", [](Var a) { return ops::add(ops::sum(ops::mul(a, a)), ops::mean(a)); });
  c.emplace_back("add_bias", [=](RngStream& r) {
    const std::size_t n = dim(r);
    testing::ScalarFn f = [w = r.split("w")](Tape& t, std::span<const Var> v) {
      return project(t, ops::add_bias(v[0], v[1]), w);
    };
    return Case{f, {random_tensor({dim(r), n}, r), random_tensor({n}, r)}};
  });
  c.emplace_back("matmul", [=](RngStream& r) {
    const std::size_t m = dim(r), k = dim(r), n = dim(r);
    testing::ScalarFn f = [w = r.split("w")](Tape& t, std::span<const Var> v) {
      return project(t, ops::matmul(v[0], v[1]), w);
    };
    return Case{f, {random_tensor({m, k}, r), random_tensor({k, n}, r)}};
  });
  c.emplace_back("concat_cols", [=](RngStream& r) {
    const std::size_t rows = dim(r);
    testing::ScalarFn f = [w = r.split("w")](Tape& t, std::span<const Var> v) {
      return project(t, ops::concat_cols(std::vector<Var>{v[0], v[1]}), w);
    };
    return Case{f, {random_tensor({rows, dim(r)}, r), random_tensor({rows, dim(r)}, r)}};
  });
  c.emplace_back("embedding", [=](RngStream& r) {
    const std::size_t vocab = 2 + r.below(5);
    std::vector<int> ids(1 + r.below(6));
    for (int& id : ids) id = static_cast<int>(r.below(vocab));
    testing::ScalarFn f = [w = r.split("w"), ids](Tape& t, std::span<const Var> v) {
      return project(t, ops::embedding(v[0], ids), w);
    };
    return Case{f, {random_tensor({vocab, dim(r)}, r)}};
  });
  c.emplace_back("layer_norm", [=](RngStream& r) {
    const std::size_t n = 2 + r.below(5);
    testing::ScalarFn f = [w = r.split("w")](Tape& t, std::span<const Var> v) {
      return project(t, ops::layer_norm(v[0], v[1], v[2]), w);
    };
    return Case{f, {random_tensor({dim(r), n}, r), random_tensor({n}, r), random_tensor({n}, r)}};
  });
  c.emplace_back("cross_entropy", [=](RngStream& r) {
    const std::size_t b = dim(r), n = dim(r) + 1;
    std::vector<int> targets(b);
    for (int& t : targets) t = static_cast<int>(r.below(n));
    testing::ScalarFn f = [targets](Tape&, std::span<const Var> v) { return ops::cross_entropy(v[0], targets); };
    return Case{f, {random_tensor({b, n}, r, 2.0)}};
  });
  c.emplace_back("dropout", [=](RngStream& r) {
    testing::ScalarFn f = [w = r.split("w"), mask = r.split("mask")](Tape& t, std::span<const Var> v) {
      RngStream m = mask;
      return project(t, ops::dropout(v[0], 0.3, m), w);
    };
    return Case{f, {random_tensor({dim(r), dim(r)}, r)}};
  });
  return c;
}

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_op = 0;
  std::string worst_name;
  std::size_t checked = 0;
  for (const auto& [name, build] : op_cases()) {
    RngStream root = RngStream(4242).split(name);
    for (std::uint64_t c = 0; c < 30; ++c) {
      RngStream rng = root.split(c);
      const auto [fn, inputs] = build(rng);
      const auto r = testing::check_inputs(fn, inputs);
      checked += r.checked;
      if (r.max_rel_error >= worst_op) {
        worst_op = r.max_rel_error;
        worst_name = name;
      }
    }
  }
  o.require(worst_op < kGradTolerance, "ops max rel err " + num(worst_op) + " (" + worst_name + ", " +
                                           std::to_string(checked) + " entries)");

  // Full language-model graph, weights moved away from the init scale.
  {
    const text::Story story = dotty();
    const auto vocab = text::build_vocab(std::span(&story, 1), {});
    lm::LmConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_seq_len = 64;
    c.dropout = 0.0;
    lm::LmModel model(c, vocab.size());
    RngStream rng(12);
    for (Parameter* p : model.parameters())
      for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] += 0.3 * rng.normal();
    const auto examples = lm::build_infill_examples(story, vocab);
    auto loss = [&](Tape& tape) {
      lm::LossReport report;
      return lm::lm_loss(model, tape, model.stack().bind(tape), examples, nn::ForwardMode::inference(), report);
    };
    const auto params = model.parameters();
    const auto r = testing::check_parameters(loss, params, 4, RngStream(13));
    o.require(r.max_rel_error < kGradTolerance, "LM graph (d16, 2 layers) " + num(r.max_rel_error) + " over " +
                                                    std::to_string(r.checked) + " weights");
  }

  // Full multi-task graph with both heads and the loss weight.
  {
    text::SyntheticSpec spec;
    spec.n_stories = 4;
    const auto corpus = text::gen_synthetic(spec);
    const auto instances = text::with_reference_generations(corpus);
    const auto vocab = text::build_vocab(corpus.stories, instances);
    mtl::MtlConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_seq_len = 40;
    c.dropout = 0.0;
    mtl::MtlModel model(c, vocab.size());
    RngStream rng(14);
    for (Parameter* p : model.parameters())
      for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] += 0.2 * rng.normal();
    std::vector<mtl::MtlInput> inputs;
    std::vector<int> gold, aux;
    for (const auto& inst : instances) {
      inputs.push_back(mtl::build_mtl_input(inst, vocab, c.max_seq_len));
      gold.push_back(*inst.label);
      aux.push_back(3 - *inst.label);
    }
    auto loss = [&](Tape& tape) {
      const auto bound = model.bind(tape);
      std::vector<Var> m, a;
      for (const auto& in : inputs) {
        const auto out = model.forward(bound, in, nn::ForwardMode::inference());
        m.push_back(ops::transpose(out.main_logits));
        a.push_back(ops::transpose(out.aux_logits));
      }
      return mtl::joint_loss(ops::transpose(ops::concat_cols(m)), ops::transpose(ops::concat_cols(a)), gold, aux,
                             bound.loss_weight)
          .total;
    };
    const auto params = model.parameters();
    const auto r = testing::check_parameters(loss, params, 4, RngStream(15));
    o.require(r.max_rel_error < kGradTolerance, "MTL graph (d16, 2 layers) " + num(r.max_rel_error) + " over " +
                                                    std::to_string(r.checked) + " weights");
  }
  const double seconds = since(t0);
  o.require(seconds < kGradBudgetSeconds, num(seconds) + " s");
  return o;
}

// ---------------------------------------------------------------- bertscore

// Pairwise-max oracle over explicitly normalised vectors.
std::array<double, 3> score_oracle(const Tensor& c, const Tensor& r) {
  auto unit = [](const Tensor& x) {
    std::vector<std::vector<double>> out(x.rows(), std::vector<double>(x.cols()));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double n = 0;
      for (std::size_t k = 0; k < x.cols(); ++k) n += x.at(i, k) * x.at(i, k);
      for (std::size_t k = 0; k < x.cols(); ++k) out[i][k] = n > 0 ? x.at(i, k) / std::sqrt(n) : 0.0;
    }
    return out;
  };
  const auto cu = unit(c), ru = unit(r);
  std::vector<double> bc(cu.size(), -2), br(ru.size(), -2);
  for (std::size_t i = 0; i < cu.size(); ++i)
    for (std::size_t j = 0; j < ru.size(); ++j) {
      double d = 0;
      for (std::size_t k = 0; k < cu[i].size(); ++k) d += cu[i][k] * ru[j][k];
      bc[i] = std::max(bc[i], d);
      br[j] = std::max(br[j], d);
    }
  double p = 0, q = 0;
  for (double b : bc) p += b;
  for (double b : br) q += b;
  p /= static_cast<double>(bc.size());
  q /= static_cast<double>(br.size());
  return {p, q, p + q == 0 ? 0.0 : 2 * p * q / (p + q)};
}

Outcome similarity() {
  Outcome o;
  RngStream root(2025);
  double worst = 0, self_worst = 0, perm_worst = 0;
  for (std::uint64_t c = 0; c < 1000; ++c) {
    RngStream rng = root.split(c);
    const std::size_t n = 1 + rng.below(8), m = 1 + rng.below(8), d = 1 + rng.below(8);
    const Tensor a = random_tensor({n, d}, rng), b = random_tensor({m, d}, rng);
    const auto got = sim::bertscore(a, b);
    const auto want = score_oracle(a, b);
    worst = std::max({worst, std::abs(got.precision - want[0]), std::abs(got.recall - want[1]),
                      std::abs(got.f1 - want[2])});
    self_worst = std::max(self_worst, std::abs(sim::bertscore(a, a).f1 - 1.0));
    Tensor pa(a.shape()), pb(b.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) pa.at(i, k) = a.at(n - 1 - i, k);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < d; ++k) pb.at(j, k) = b.at((j + 1) % m, k);
    perm_worst = std::max(perm_worst, std::abs(sim::bertscore(pa, pb).f1 - got.f1));
  }
  o.require(worst < kOracleTolerance, "1000 random cases max diff " + num(worst));
  o.require(self_worst < 1e-12, "F1(x,x)=1 within " + num(self_worst));
  o.require(perm_worst < kOracleTolerance, "permutation invariance within " + num(perm_worst));

  const Tensor x = Tensor::matrix({{1, 0, 0}, {0, 2, 0}}), y = Tensor::matrix({{0, 0, 3}, {0, 0, -1}});
  o.require(sim::bertscore(x, y).f1 == 0.0, "orthogonal F1 = 0");

  // Argmax of the selector does not move when all embeddings are scaled.
  text::Vocab v;
  for (const char* w : {"a", "b", "c", "d", "e", "f", "g", "."}) v.add(w);
  RngStream rng(2026);
  const Tensor table = random_tensor({v.size(), 6}, rng);
  std::size_t same = 0;
  const std::size_t trials = 300;
  for (std::size_t t = 0; t < trials; ++t) {
    auto sentence = [&] {
      std::string s;
      for (std::size_t i = 0, n = 1 + rng.below(5); i < n; ++i) s += std::string(1, static_cast<char>('a' + rng.below(7))) + " ";
      return s + ".";
    };
    text::AbductiveInstance inst;
    inst.id = "s";
    inst.obs1 = "a .";
    inst.obs2 = sentence();
    inst.hyp1 = "b .";
    inst.hyp2 = "c .";
    inst.label = 1;
    inst.generated = std::array<std::string, 2>{sentence(), sentence()};
    Tensor scaled = table;
    const double k = std::exp(3 * rng.normal());
    for (double& val : scaled.data()) val *= k;
    const auto s1 = sim::select_unsupervised(inst, v, sim::StaticEmbeddingProvider(table));
    const auto s2 = sim::select_unsupervised(inst, v, sim::StaticEmbeddingProvider(scaled));
    same += s1.prediction == s2.prediction;
  }
  o.require(same == trials, "scaling keeps argmax in " + std::to_string(same) + "/" + std::to_string(trials));
  return o;
}

// ---------------------------------------------------------------- infilling

Outcome infilling() {
  Outcome o;
  const text::Story story = dotty();
  const auto vocab = text::build_vocab(std::span(&story, 1), {});
  const auto ex = lm::build_infill_examples(story, vocab);
  const std::string head = "[S] dotty was being very grumpy . ";
  const std::string tail = "[E] [S] dotty was being very grumpy . dotty ate something bad .";
  const bool golden = ex.size() == 2 &&
                      text::detokenize(ex[0].condition, vocab) == head + "[M] she went to bed . she felt better later . " + tail &&
                      text::detokenize(ex[0].target, vocab) == "she felt sick . [E]" &&
                      text::detokenize(ex[1].condition, vocab) == head + "[M] she felt better later . " + tail &&
                      text::detokenize(ex[1].target, vocab) == "she felt sick . she went to bed . [E]";
  o.require(golden, "golden arrangement for i = 3 and 4");

  lm::LmConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.max_seq_len = 64;
  c.dropout = 0.0;
  const lm::LmModel model(c, vocab.size());
  RngStream rng(31);
  std::size_t unchanged = 0, trials = 0;
  bool target_moves = true;
  for (const auto& e : ex) {
    const auto p = lm::pack(e);
    auto loss_of = [&](const std::vector<int>& labels) {
      Tape tape;
      return lm::sequence_loss(model, tape, model.stack().bind_frozen(tape), p.tokens, labels, p.loss_mask,
                               nn::ForwardMode::inference())
          .total.value()
          .item();
    };
    const double base = loss_of(p.labels);
    for (int t = 0; t < 50; ++t, ++trials) {
      auto labels = p.labels;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (!p.loss_mask[i]) labels[i] = static_cast<int>(rng.below(vocab.size()));
      unchanged += loss_of(labels) == base;
    }
    auto labels = p.labels;
    labels.back() = labels.back() == 7 ? 8 : 7;
    target_moves = target_moves && loss_of(labels) != base;
  }
  o.require(unchanged == trials, "condition-label perturbation leaves loss bit-identical in " +
                                     std::to_string(unchanged) + "/" + std::to_string(trials));
  o.require(target_moves, "target-label change moves the loss");
  return o;
}

// ---------------------------------------------------------------- toy runs

struct ToyRun {
  fs::path root;
  std::map<std::pair<std::uint64_t, Stage>, double> seconds;
  int cli_status = -1;
  std::string error;
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HYPEVENTS_CLI) + " " + args;
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

ToyRun toy_run(const fs::path& work) {
  ToyRun run;
  run.root = work / "toy";
  fs::remove_all(run.root);
  RunConfig base;
  try {
    for (std::uint64_t s = 1; s <= kSeeds; ++s) {
      const RunConfig c = base.for_seed(s);
      const fs::path root = run.root / ("seed-" + std::to_string(s));
      for (Stage stage : kAllStages) {
        const auto t0 = Clock::now();
        run_stage(stage, c, root);
        run.seconds[{s, stage}] = since(t0);
        std::cerr << "  seed " << s << " " << stage_name(stage) << " " << num(run.seconds[{s, stage}]) << " s\n";
      }
    }
  } catch (const std::exception& e) {
    run.error = e.what();
    return run;
  }
  // The command-line experiment finds every stage complete and only reports.
  run.cli_status = run_cli("experiment --seeds " + std::to_string(kSeeds) + " --out " + run.root.string() +
                           " > " + (run.root / "cli_stdout.txt").string());
  return run;
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::stringstream in(read_file(p));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

Outcome lm_training(const ToyRun& run) {
  Outcome o;
  if (!run.error.empty()) {
    o.require(false, "toy run failed: " + run.error);
    return o;
  }
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    const auto losses = jsonl(run.root / ("seed-" + std::to_string(s)) / files::lm_losses);
    const double first = losses.front()["loss"], last = losses.back()["loss"];
    const double secs = run.seconds.at({s, Stage::train_lm});
    o.require(last <= kLossRatio * first && secs < kLmBudgetSeconds,
              "seed " + std::to_string(s) + " loss " + num(first) + " -> " + num(last) + " (ratio " +
                  num(last / first) + ") in " + num(secs) + " s");
  }

  // One story memorised by a larger model, then decoded greedily.
  const auto t0 = Clock::now();
  const text::Story story = dotty();
  const auto vocab = text::build_vocab(std::span(&story, 1), {});
  lm::LmConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.max_seq_len = 64;
  c.dropout = 0.0;
  c.learning_rate = 3e-3;
  c.batch_size = 4;
  c.epochs = 150;
  c.seed = 5;
  lm::LmModel model(c, vocab.size());
  const auto r = lm::train_lm(model, lm::build_infill_examples(story, vocab), c);
  const auto g = lm::generate_next_event(model, vocab, story.sentences[0], story.sentences[1], story.sentences[4], {});
  const double secs = since(t0);
  o.require(r.epoch_losses.back() < kMemorisedLoss && g.text == text::canonical(story.sentences[2]) &&
                secs < kLmBudgetSeconds,
            "memorisation loss " + num(r.epoch_losses.back()) + ", greedy '" + g.text + "' in " + num(secs) + " s");
  return o;
}

Outcome selector(const ToyRun& run) {
  Outcome o;
  if (!run.error.empty()) {
    o.require(false, "toy run failed: " + run.error);
    return o;
  }
  // The seed-1 language model generates for fresh instance sets.
  const auto lm = restore_lm(load_checkpoint(run.root / "seed-1" / files::lm_checkpoint, ModelKind::lm));
  const sim::LmEmbeddingProvider provider(lm.model);
  auto accuracy_at = [&](double rho, std::uint64_t seed, std::size_t* ties) {
    text::SyntheticSpec spec;
    spec.n_stories = 100;
    spec.n_instances = 100;
    spec.rho = rho;
    spec.seed = seed;
    const auto corpus = text::gen_synthetic(spec);
    const auto generated = lm::generate_for_instances(lm.model, lm.vocab, corpus.instances, {}, 1);
    const auto ev = sim::evaluate_selector(generated, lm.vocab, provider);
    if (ties) *ties = ev.ties;
    return ev.accuracy;
  };
  std::size_t ties = 0;
  const double sharp = accuracy_at(1.0, 1001, &ties);
  o.require(sharp == 1.0, "rho=1 n=100 accuracy " + num(sharp, 4) + " (" + std::to_string(ties) + " ties)");

  double total = 0;
  std::string each;
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    const double a = accuracy_at(0.5, 2000 + s, nullptr);
    total += a;
    each += (s > 1 ? "," : "") + num(a, 3);
  }
  const double mean = total / kSeeds;
  o.require(mean > 0.5, "rho=0.5 mean over 5 sets " + num(mean, 4) + " (" + each + ")");

  return o;
}

Outcome mtl_training(const ToyRun& run) {
  Outcome o;
  // Loss decomposition and the loss-weight gradient on random batches.
  RngStream root(77);
  std::size_t exact = 0, grad_ok = 0;
  const std::size_t trials = 200;
  for (std::uint64_t c = 0; c < trials; ++c) {
    RngStream rng = root.split(c);
    const std::size_t b = 1 + rng.below(8);
    std::vector<int> gold(b), aux(b);
    for (std::size_t i = 0; i < b; ++i) {
      gold[i] = 1 + static_cast<int>(rng.below(2));
      aux[i] = 1 + static_cast<int>(rng.below(2));
    }
    Tape tape;
    const Var m = tape.leaf(random_tensor({b, 2}, rng, 3.0));
    const Var a = tape.leaf(random_tensor({b, 2}, rng, 3.0));
    Parameter w("w", Tensor::scalar(rng.normal()));
    const Var wv = tape.param(w);
    const auto l = mtl::joint_loss(m, a, gold, aux, wv);
    const double total = l.total.value().item(), main = l.l_anli.value().item(), simv = l.l_sim.value().item();
    exact += total == main + w.value.item() * simv;
    tape.backward(l.total);
    grad_ok += std::abs(w.grad.item() - simv) <= 1e-15 * std::max(1.0, simv);
  }
  o.require(exact == trials, "L = L_anli + w*L_sim exact in " + std::to_string(exact) + "/" + std::to_string(trials));
  o.require(grad_ok == trials, "dL/dw = L_sim in " + std::to_string(grad_ok) + "/" + std::to_string(trials));

  if (!run.error.empty()) {
    o.require(false, "toy run failed: " + run.error);
    return o;
  }
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    const fs::path seed_root = run.root / ("seed-" + std::to_string(s));
    const json m = json::parse(read_file(seed_root / files::metrics));
    const json summary = json::parse(read_file(seed_root / files::mtl_summary));
    const double acc = m["mtl_accuracy"], w = summary["w_final"];
    const std::size_t steps = summary["w_trajectory"].size();
    const double secs = run.seconds.at({s, Stage::train_mtl});
    o.require(acc >= kMtlAccuracy && w != 1.0 && steps > 0 && secs < kMtlBudgetSeconds,
              "seed " + std::to_string(s) + " dev " + num(acc, 3) + " w " + num(w, 4) + " (" + std::to_string(steps) +
                  " logged steps) " + num(secs) + " s");
  }
  return o;
}

// ---------------------------------------------------------------- agreement

// Coincidence matrix built directly from value pairs, then the ordinal
// metric from the matrix marginals.
double alpha_oracle(const std::vector<std::vector<int>>& units, std::size_t categories) {
  std::vector<std::vector<double>> o(categories, std::vector<double>(categories, 0.0));
  for (const auto& u : units) {
    if (u.size() < 2) continue;
    for (std::size_t i = 0; i < u.size(); ++i)
      for (std::size_t j = 0; j < u.size(); ++j)
        if (i != j) o[u[i]][u[j]] += 1.0 / static_cast<double>(u.size() - 1);
  }
  std::vector<double> n(categories, 0.0);
  double total = 0;
  for (std::size_t c = 0; c < categories; ++c)
    for (std::size_t k = 0; k < categories; ++k) n[c] += o[c][k];
  for (double v : n) total += v;
  auto delta = [&](std::size_t c, std::size_t k) {
    double s = 0;
    for (std::size_t g = std::min(c, k); g <= std::max(c, k); ++g) s += n[g];
    s -= (n[c] + n[k]) / 2;
    return s * s;
  };
  double observed = 0, expected = 0;
  for (std::size_t c = 0; c < categories; ++c)
    for (std::size_t k = 0; k < categories; ++k) {
      observed += o[c][k] * delta(c, k);
      expected += n[c] * n[k] * delta(c, k);
    }
  return 1.0 - (total - 1) * observed / expected;
}

eval::AnnotationTable ordinal_table(const std::vector<std::vector<int>>& units) {
  const std::vector<std::string> order{"low", "mid", "high"};
  eval::AnnotationTable t;
  t.scale = eval::Scale::ordinal(order);
  t.annotators = {"a", "b"};
  for (std::size_t u = 0; u < units.size(); ++u) {
    t.items.push_back("u" + std::to_string(u));
    t.values.push_back({order[units[u][0]], order[units[u][1]]});
  }
  return t;
}

Outcome agreement() {
  Outcome o;
  // [[20,5],[10,15]]: rows are annotator A, columns annotator B.
  std::vector<std::string> a, b;
  const int cells[2][2] = {{20, 5}, {10, 15}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int n = 0; n < cells[i][j]; ++n) {
        a.push_back(i ? "no" : "yes");
        b.push_back(j ? "no" : "yes");
      }
  const double kappa = eval::cohen_kappa(a, b).value;
  o.require(kappa == 0.4, "kappa worked example " + num(kappa, 17));
  o.require(eval::cohen_kappa(a, a).value == 1.0, "kappa perfect agreement 1.0");

  const std::vector<std::vector<int>> worked{{0, 0}, {1, 2}, {2, 2}, {0, 1}};
  const double alpha = eval::krippendorff_alpha_ordinal(ordinal_table(worked)).value;
  const double oracle = alpha_oracle(worked, 3);
  o.require(std::abs(alpha - oracle) < kAlphaTolerance,
            "alpha worked table " + num(alpha, 15) + " vs oracle " + num(oracle, 15));
  const double perfect = eval::krippendorff_alpha_ordinal(ordinal_table({{0, 0}, {1, 1}, {2, 2}, {1, 1}})).value;
  o.require(perfect == 1.0, "alpha perfect agreement " + num(perfect));
  return o;
}

// ---------------------------------------------------------------- pipeline

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "experiment.log")
      out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

const char* kSmallConfig = R"(seeds = 1,2
corpus.n_stories = 40
corpus.n_train = 24
corpus.n_dev = 12
lm.d_model = 16
lm.layers = 1
lm.epochs = 2
lm.max_seq_len = 96
mtl.d_model = 16
mtl.layers = 1
mtl.epochs = 3
)";

Outcome persistence(const fs::path& work, const ToyRun& run) {
  Outcome o;
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  testing::write_file(dir / "small.cfg", kSmallConfig);
  const std::string cfg = " --config " + (dir / "small.cfg").string() + " --jobs 2";
  const int s1 = run_cli("experiment" + cfg + " --out " + (dir / "a").string() + " > /dev/null");
  const int s2 = run_cli("experiment" + cfg + " --out " + (dir / "b").string() + " > /dev/null");
  const auto ta = tree(dir / "a"), tb = tree(dir / "b");
  o.require(s1 == 0 && s2 == 0 && ta == tb && ta.size() > 20,
            "two experiment runs byte-identical over " + std::to_string(ta.size()) + " files");

  if (!run.error.empty()) {
    o.require(false, "toy run failed: " + run.error);
    return o;
  }
  const fs::path seed1 = run.root / "seed-1";
  bool exact = true;
  for (const char* name : {files::lm_checkpoint, files::mtl_checkpoint}) {
    const std::string bytes = read_file(seed1 / name);
    const Checkpoint ck = load_checkpoint(seed1 / name);
    save_checkpoint(dir / "resaved.ckpt", ck);
    exact = exact && read_file(dir / "resaved.ckpt") == bytes && encode_checkpoint(ck) == bytes;
  }
  o.require(exact, "save(load(x)) == x for the trained LM and MTL checkpoints");

  // A model in memory against its reloaded copy on a probe batch.
  const auto trained = restore_mtl(load_checkpoint(seed1 / files::mtl_checkpoint, ModelKind::mtl));
  const Checkpoint again = decode_checkpoint(encode_checkpoint(make_checkpoint(trained.model, trained.config,
                                                                                trained.vocab)));
  const auto copy = restore_mtl(again);
  const auto probe = text::load_anli(seed1 / files::dev_generations);
  std::size_t same = 0;
  for (const auto& inst : probe) {
    const auto p = mtl::predict(trained.model, inst, trained.vocab);
    const auto q = mtl::predict(copy.model, inst, copy.vocab);
    same += p.main_logits == q.main_logits && p.aux_logits == q.aux_logits && p.hypothesis == q.hypothesis;
  }
  const auto lm = restore_lm(load_checkpoint(seed1 / files::lm_checkpoint, ModelKind::lm));
  const auto lm_copy = restore_lm(decode_checkpoint(encode_checkpoint(make_checkpoint(lm.model, lm.config, lm.vocab))));
  std::size_t lm_same = 0;
  for (const auto& inst : probe) {
    const auto cond = lm::next_event_condition(inst.obs1, inst.hyp1, inst.obs2, lm.vocab);
    lm_same += lm.model.next_token_logits(cond) == lm_copy.model.next_token_logits(cond);
  }
  o.require(same == probe.size() && lm_same == probe.size(),
            "probe batch of " + std::to_string(probe.size()) + " instances: MTL " + std::to_string(same) +
                " and LM " + std::to_string(lm_same) + " bit-identical");
  return o;
}

Outcome protocol(const fs::path& work, const ToyRun& run) {
  Outcome o;
  if (!run.error.empty() || run.cli_status != 0) {
    o.require(false, "toy experiment failed (status " + std::to_string(run.cli_status) + ") " + run.error);
    return o;
  }
  const auto lines = jsonl(run.root / "experiment_report.jsonl");
  std::vector<double> mtl, unsup;
  for (const auto& l : lines)
    if (l.contains("seed") && l["status"] == "ok") {
      mtl.push_back(l["mtl_accuracy"]);
      unsup.push_back(l["unsupervised_accuracy"]);
    }
  const json& agg = lines.back();
  o.require(mtl.size() == kSeeds && agg["aggregate"] == true && agg["mtl_accuracy"]["n"] == kSeeds,
            std::to_string(mtl.size()) + " seed entries plus aggregate");
  auto check = [&](const std::string& key, const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double var = ss / static_cast<double>(v.size() - 1);
    const double rm = agg[key]["mean"], rv = agg[key]["variance"];
    const bool ok = std::abs(rm - mean) <= kMeanTolerance &&
                    std::abs(rv - var) <= kVarianceRelTolerance * std::max(var, 1e-300);
    o.require(ok || (var == 0 && rv == 0), key + " mean " + num(rm, 6) + " variance " + num(rv, 6) +
                                               " recomputed " + num(mean, 6) + "/" + num(var, 6));
  };
  check("mtl_accuracy", mtl);
  check("unsupervised_accuracy", unsup);
  const std::string summary = read_file(run.root / "summary.txt");
  o.require(summary.find("paper reference (not reproduced)") != std::string::npos &&
                read_file(run.root / "cli_stdout.txt") == summary,
            "summary table with labelled reference numbers");

  // One seed: the variance is absent rather than zero.
  const fs::path single = work / "single";
  fs::remove_all(single);
  fs::create_directories(single);
  testing::write_file(single / "small.cfg", kSmallConfig);
  const int status = run_cli("experiment --config " + (single / "small.cfg").string() + " --seeds 1 --out " +
                             (single / "run").string() + " > /dev/null");
  const auto one = jsonl(single / "run" / "experiment_report.jsonl");
  o.require(status == 0 && one.back()["mtl_accuracy"]["variance"].is_null(), "single seed variance null");
  return o;
}

// The composed toy expectation: every seed's dev set fully solved by the
// selector and at least 0.9 for the multi-task model. Reported separately
// from the numbered criteria.
Outcome toy_experiment(const ToyRun& run) {
  Outcome o;
  if (!run.error.empty()) {
    o.require(false, "toy run failed: " + run.error);
    return o;
  }
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    const json m = json::parse(read_file(run.root / ("seed-" + std::to_string(s)) / files::metrics));
    const double unsup = m["unsupervised_accuracy"], mtl = m["mtl_accuracy"];
    o.require(unsup == 1.0 && mtl >= kMtlAccuracy,
              "seed " + std::to_string(s) + " unsupervised " + num(unsup, 3) + " (" +
                  std::to_string(m["unsupervised_ties"].get<int>()) + " ties), multi-task " + num(mtl, 3));
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  fs::path work = fs::temp_directory_path() / "hypevents-acceptance";
  bool keep = false;
  fs::path report_path;
  app.add_option("--work", work, "scratch directory for the pipeline runs");
  app.add_option("--report", report_path, "also write the result lines to this file");
  app.add_flag("--keep", keep, "keep the scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  std::vector<std::pair<std::string, Outcome>> results;
  std::string report;
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    report += line + "\n";
  };
  auto record = [&](const std::string& name, const std::function<Outcome()>& f) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.require(false, std::string("threw: ") + e.what());
    }
    emit("criterion " + name + ": " + (o.pass ? "PASS" : "FAIL") + "  (" + num(since(t0)) + " s) " + o.detail);
    results.emplace_back(name, o);
  };

  record("1 gradient correctness", gradients);
  record("2 bertscore oracle", similarity);
  record("3 infilling arrangement", infilling);
  std::cerr << "toy pipeline, seeds 1-" << kSeeds << ":\n";
  const ToyRun run = toy_run(work);
  record("4 language model training", [&] { return lm_training(run); });
  record("5 unsupervised selector", [&] { return selector(run); });
  record("6 multi-task training", [&] { return mtl_training(run); });
  record("7 agreement statistics", agreement);
  record("8 determinism and persistence", [&] { return persistence(work, run); });
  record("9 five-seed protocol", [&] { return protocol(work, run); });

  std::size_t failed = 0;
  for (const auto& [name, o] : results) failed += !o.pass;

  // Not one of the numbered criteria; its status is printed but does not
  // decide the exit code.
  const Outcome extra = toy_experiment(run);
  emit(std::string("toy experiment rho=1 seeds 1-5 (unsupervised 1.0, multi-task >= 0.9 per seed): ") +
       (extra.pass ? "PASS" : "FAIL") + "  " + extra.detail);
  emit((failed ? std::to_string(failed) + " of 9 criteria failed" : std::string("all 9 criteria passed")) +
       (extra.pass ? "" : "; toy experiment expectation not met (see line above)"));
  if (!report_path.empty()) testing::write_file(report_path, report);
  if (!keep) fs::remove_all(work);
  return failed ? 1 : 0;
}
