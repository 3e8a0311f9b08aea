#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "hypevents/core/adam.hpp"
#include "hypevents/core/error.hpp"
#include "hypevents/mtl/model.hpp"
#include "hypevents/text/synthetic.hpp"
#include "hypevents/text/tokenizer.hpp"
#include "support/errors.hpp"
#include "support/gradcheck.hpp"

using namespace hypevents;
using namespace hypevents::mtl;
namespace sp = hypevents::text::special;

namespace {

text::AbductiveInstance sample_instance() {
  text::AbductiveInstance inst;
  inst.id = "x";
  inst.obs1 = "ann went to the park .";
  inst.obs2 = "the fish made her sick .";
  inst.hyp1 = "ann ate some fish .";
  inst.hyp2 = "ann saw a dog .";
  inst.label = 1;
  inst.generated = std::array<std::string, 2>{"the fish made her sick .", "the dog barked ."};
  return inst;
}

text::Vocab sample_vocab() {
  text::Vocab v;
  for (const auto& inst : {sample_instance()}) {
    for (const std::string* s : {&inst.obs1, &inst.obs2, &inst.hyp1, &inst.hyp2, &(*inst.generated)[0],
                                 &(*inst.generated)[1]}) {
      for (const auto& w : text::split_words(*s)) v.add(w);
    }
  }
  return v;
}

MtlConfig tiny_config() {
  MtlConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.max_seq_len = 24;
  c.dropout = 0.0;
  c.seed = 3;
  return c;
}

// Mean over rows of -log softmax(row)[label], computed with log-sum-exp.
double oracle_ce(const std::vector<std::array<double, 2>>& rows, const std::vector<int>& labels) {
  double total = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double m = std::max(rows[i][0], rows[i][1]);
    const double lse = m + std::log(std::exp(rows[i][0] - m) + std::exp(rows[i][1] - m));
    total += lse - rows[i][static_cast<std::size_t>(labels[i] - 1)];
  }
  return total / static_cast<double>(rows.size());
}

Var matrix_of(Tape& tape, const std::vector<std::array<double, 2>>& rows) {
  Tensor t({rows.size(), 2});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    t.at(i, 0) = rows[i][0];
    t.at(i, 1) = rows[i][1];
  }
  return tape.leaf(t);
}

std::size_t count_of(const std::vector<int>& seq, int id) {
  return static_cast<std::size_t>(std::count(seq.begin(), seq.end(), id));
}

}  // namespace

TEST_CASE("segment packing keeps every delimiter") {
  const auto p = pack_segments({{10, 11}, {12}, {13, 14, 15}}, 64);
  CHECK(p == std::vector<int>{sp::cls, 10, 11, sp::sep, 12, sp::sep, 13, 14, 15, sp::sep});

  // Longest segment is trimmed from its end first.
  const auto t = pack_segments({{10, 11}, {20, 21, 22, 23, 24}, {30, 31}}, 9);
  CHECK(t == std::vector<int>{sp::cls, 10, 11, sp::sep, 20, 21, sp::sep, 30, sp::sep});

  RngStream rng(9);
  for (int c = 0; c < 300; ++c) {
    std::vector<std::vector<int>> segs(3);
    std::size_t total = 0;
    for (auto& s : segs) {
      s.resize(1 + rng.below(30));
      for (int& x : s) x = 7 + static_cast<int>(rng.below(50));
      total += s.size();
    }
    const std::size_t max_len = 7 + rng.below(60);
    const auto out = pack_segments(segs, max_len);
    CHECK(out.size() == std::min(max_len, total + 4));
    CHECK(out.front() == sp::cls);
    CHECK(out.back() == sp::sep);
    CHECK(count_of(out, sp::sep) == 3);
    CHECK(count_of(out, sp::cls) == 1);
  }
  CHECK(testing::code_of([] { pack_segments({{1}, {2}, {3}}, 3); }) == ErrorCode::contract);
}

TEST_CASE("input layout and contract errors") {
  const auto v = sample_vocab();
  const auto inst = sample_instance();
  const auto in = build_mtl_input(inst, v, 64);
  const auto expect = [&](std::initializer_list<const std::string*> parts) {
    std::vector<int> seq{sp::cls};
    for (const std::string* s : parts) {
      const auto ids = text::tokenize(*s, v);
      seq.insert(seq.end(), ids.begin(), ids.end());
      seq.push_back(sp::sep);
    }
    return seq;
  };
  CHECK(in.main[0] == expect({&inst.obs1, &inst.hyp1, &inst.obs2}));
  CHECK(in.main[1] == expect({&inst.obs1, &inst.hyp2, &inst.obs2}));
  CHECK(in.aux[0] == expect({&inst.hyp1, &(*inst.generated)[0], &inst.obs2}));
  CHECK(in.aux[1] == expect({&inst.hyp2, &(*inst.generated)[1], &inst.obs2}));

  auto missing = inst;
  missing.generated.reset();
  CHECK(testing::code_of([&] { build_mtl_input(missing, v, 64); }) == ErrorCode::pipeline_order);
  CHECK(testing::error_message([&] { build_mtl_input(missing, v, 64); }).find("generate") != std::string::npos);
  auto empty_h = inst;
  empty_h.hyp2 = "  ";
  CHECK(testing::code_of([&] { build_mtl_input(empty_h, v, 64); }) == ErrorCode::schema);

  // An overlong generation is cut, delimiters survive.
  auto longgen = inst;
  std::string g;
  for (int i = 0; i < 100; ++i) g += "fish ";
  (*longgen.generated)[0] = g;
  const auto cut = build_mtl_input(longgen, v, 24);
  CHECK(cut.aux[0].size() == 24);
  CHECK(count_of(cut.aux[0], sp::sep) == 3);
  CHECK(cut.aux[1] == build_mtl_input(inst, v, 24).aux[1]);
}

TEST_CASE("zero-weight heads tie and predict hypothesis 1") {
  const auto v = sample_vocab();
  MtlModel model(tiny_config(), v.size());
  model.head_main_w.value.fill(0);
  model.head_aux_w.value.fill(0);
  const auto p = predict(model, sample_instance(), v);
  CHECK(p.main_logits[0] == 0.0);
  CHECK(p.main_logits[1] == 0.0);
  CHECK(p.tie);
  CHECK(p.aux_tie);
  CHECK(p.hypothesis == 1);
}

TEST_CASE("swapping the hypotheses swaps the logits exactly") {
  const auto v = sample_vocab();
  const MtlModel model(tiny_config(), v.size());
  const auto inst = sample_instance();
  auto swapped = inst;
  std::swap(swapped.hyp1, swapped.hyp2);
  std::swap((*swapped.generated)[0], (*swapped.generated)[1]);
  swapped.label = 2;
  const auto a = predict(model, inst, v);
  const auto b = predict(model, swapped, v);
  CHECK(a.main_logits[0] == b.main_logits[1]);
  CHECK(a.main_logits[1] == b.main_logits[0]);
  CHECK(a.aux_logits[0] == b.aux_logits[1]);
  CHECK(a.aux_logits[1] == b.aux_logits[0]);
  if (!a.tie) CHECK(a.hypothesis == 3 - b.hypothesis);
}

TEST_CASE("main input of the worked instance") {
  text::AbductiveInstance inst;
  inst.id = "dotty";
  inst.obs1 = "Dotty was being very grumpy.";
  inst.hyp1 = "Dotty ate something bad.";
  inst.hyp2 = "Dotty call some close friends to chat.";
  inst.obs2 = "She felt much better afterwards";
  inst.generated = std::array<std::string, 2>{"she felt sick .", "they talked ."};
  text::Vocab v;
  for (const std::string* s : {&inst.obs1, &inst.hyp1, &inst.hyp2, &inst.obs2})
    for (const auto& w : text::split_words(*s)) v.add(w);
  const auto in = build_mtl_input(inst, v, 64);
  CHECK(text::detokenize(in.main[0], v) ==
        "[CLS] dotty was being very grumpy . [SEP] dotty ate something bad . [SEP] she felt much better afterwards [SEP]");
}

TEST_CASE("joint loss decomposes and matches the cross-entropy oracle") {
  RngStream rng(12);
  for (int c = 0; c < 200; ++c) {
    RngStream r = rng.split(static_cast<std::uint64_t>(c));
    const std::size_t b = 1 + r.below(6);
    std::vector<std::array<double, 2>> m(b), a(b);
    std::vector<int> g(b), x(b);
    for (std::size_t i = 0; i < b; ++i) {
      m[i] = {3 * r.normal(), 3 * r.normal()};
      a[i] = {3 * r.normal(), 3 * r.normal()};
      g[i] = 1 + static_cast<int>(r.below(2));
      x[i] = 1 + static_cast<int>(r.below(2));
    }
    const double w = 2 * r.normal();
    Tape tape;
    const Var wv = tape.leaf(Tensor::scalar(w));
    const JointLoss loss = joint_loss(matrix_of(tape, m), matrix_of(tape, a), g, x, wv);
    const LossBreakdown parts = breakdown(loss, wv);
    CHECK(parts.total == parts.l_anli + w * parts.l_sim);
    CHECK(std::abs(parts.l_anli - oracle_ce(m, g)) < 1e-12);
    CHECK(std::abs(parts.l_sim - oracle_ce(a, x)) < 1e-12);

    // dL/dw equals L_sim.
    tape.backward(loss.total);
    CHECK(std::abs(wv.grad().item() - parts.l_sim) < 1e-12);

    // Relabelling 1 <-> 2 together with swapping logit columns changes nothing.
    auto flip_rows = m, flip_aux = a;
    for (auto& row : flip_rows) std::swap(row[0], row[1]);
    for (auto& row : flip_aux) std::swap(row[0], row[1]);
    std::vector<int> fg(b), fx(b);
    for (std::size_t i = 0; i < b; ++i) {
      fg[i] = 3 - g[i];
      fx[i] = 3 - x[i];
    }
    Tape t2;
    const Var w2 = t2.leaf(Tensor::scalar(w));
    const auto flipped = breakdown(joint_loss(matrix_of(t2, flip_rows), matrix_of(t2, flip_aux), fg, fx, w2), w2);
    CHECK(std::abs(flipped.total - parts.total) < 1e-12);
  }

  Tape tape;
  const Var w = tape.leaf(Tensor::scalar(1));
  const Var l = matrix_of(tape, {{0, 0}});
  CHECK(testing::code_of([&] { joint_loss(l, l, std::vector<int>{3}, std::vector<int>{1}, w); }) ==
        ErrorCode::contract);
  CHECK(testing::code_of([&] { joint_loss(l, l, std::vector<int>{1, 2}, std::vector<int>{1}, w); }) ==
        ErrorCode::dimension);
}

TEST_CASE("finite-difference check of the full multi-task graph") {
  const auto v = sample_vocab();
  MtlModel model(tiny_config(), v.size());
  auto second = sample_instance();
  second.label = 2;
  std::swap((*second.generated)[0], (*second.generated)[1]);
  const std::vector<MtlInput> inputs{build_mtl_input(sample_instance(), v, 24), build_mtl_input(second, v, 24)};
  const std::vector<int> gold{1, 2}, aux{1, 1};
  model.loss_weight.value = Tensor::scalar(0.7);

  auto loss = [&](Tape& tape) {
    const auto bound = model.bind(tape);
    std::vector<Var> m, a;
    for (const auto& in : inputs) {
      const auto out = model.forward(bound, in, nn::ForwardMode::inference());
      m.push_back(ops::transpose(out.main_logits));
      a.push_back(ops::transpose(out.aux_logits));
    }
    return joint_loss(ops::transpose(ops::concat_cols(m)), ops::transpose(ops::concat_cols(a)), gold, aux,
                      bound.loss_weight)
        .total;
  };
  const auto params = model.parameters();
  const auto check = testing::check_parameters(loss, params, 6, RngStream(5));
  CHECK(check.checked > 50);
  CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("adam lowers w while the auxiliary loss is positive") {
  const auto v = sample_vocab();
  MtlModel model(tiny_config(), v.size());
  const auto in = build_mtl_input(sample_instance(), v, 24);
  const auto params = model.parameters();
  AdamState adam = AdamState::for_parameters(params, {.learning_rate = 1e-2});
  zero_grads(params);
  Tape tape;
  const auto bound = model.bind(tape);
  const auto out = model.forward(bound, in, nn::ForwardMode::inference());
  const auto loss = joint_loss(out.main_logits, out.aux_logits, std::vector<int>{1}, std::vector<int>{1},
                               bound.loss_weight);
  const double l_sim = loss.l_sim.value().item();
  CHECK(l_sim > 0);
  tape.backward(loss.total);
  CHECK(model.loss_weight.grad.item() == doctest::Approx(l_sim).epsilon(1e-12));
  adam_step(params, adam);
  CHECK(model.loss_weight.value.item() < 1.0);
}

TEST_CASE("training is deterministic and zero epochs is a no-op") {
  text::SyntheticSpec spec;
  spec.n_stories = 16;
  const auto corpus = text::gen_synthetic(spec);
  const auto instances = text::with_reference_generations(corpus);
  const auto vocab = text::build_vocab(corpus.stories, instances);
  MtlConfig c = tiny_config();
  c.max_seq_len = 40;
  c.dropout = 0.1;
  c.epochs = 2;
  c.batch_size = 4;
  const std::span<const text::AbductiveInstance> train(instances.data(), 12), dev(instances.data() + 12, 4);

  MtlModel a(c, vocab.size()), b(c, vocab.size());
  const auto ra = train_mtl(a, train, dev, vocab, c);
  const auto rb = train_mtl(b, train, dev, vocab, c);
  REQUIRE(ra.epochs.size() == 2);
  CHECK(ra.w_trajectory.size() == 6);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) CHECK(a.parameters()[i]->value == b.parameters()[i]->value);
  CHECK(epoch_record(ra.epochs[1]) == epoch_record(rb.epochs[1]));
  CHECK(ra.epochs[0].dev_accuracy.has_value());

  MtlConfig zero = c;
  zero.epochs = 0;
  MtlModel z(zero, vocab.size());
  const MtlModel fresh(zero, vocab.size());
  CHECK(train_mtl(z, train, dev, vocab, zero).epochs.empty());
  CHECK(z.loss_weight.value.item() == 1.0);
  for (std::size_t i = 0; i < z.parameters().size(); ++i) CHECK(z.parameters()[i]->value == fresh.parameters()[i]->value);

  auto ungenerated = instances;
  ungenerated[3].generated.reset();
  CHECK(testing::code_of([&] { train_mtl(z, std::span(ungenerated).first(12), {}, vocab, c); }) ==
        ErrorCode::pipeline_order);
  CHECK(testing::code_of([&] { train_mtl(z, {}, {}, vocab, c); }) == ErrorCode::contract);
}

TEST_CASE("training on an easy split reduces the main loss") {
  text::SyntheticSpec spec;
  spec.n_stories = 40;
  const auto corpus = text::gen_synthetic(spec);
  const auto instances = text::with_reference_generations(corpus);
  const auto vocab = text::build_vocab(corpus.stories, instances);
  MtlConfig c;
  c.d_model = 16;
  c.max_seq_len = 40;
  c.epochs = 6;
  c.learning_rate = 3e-3;
  MtlModel model(c, vocab.size());
  const auto r = train_mtl(model, instances, {}, vocab, c);
  CHECK(r.epochs.back().l_anli < r.epochs.front().l_anli);
  CHECK(r.epochs.back().l_sim < r.epochs.front().l_sim);
  CHECK(!r.epochs.back().dev_accuracy);
}

TEST_CASE("similarity auxiliary labels and encoder embeddings") {
  text::SyntheticSpec spec;
  spec.n_stories = 30;
  const auto corpus = text::gen_synthetic(spec);
  const auto instances = text::with_reference_generations(corpus);
  const auto vocab = text::build_vocab(corpus.stories, instances);
  MtlConfig c = tiny_config();
  const MtlModel model(c, vocab.size());
  const EncoderEmbeddingProvider provider(model);
  const std::vector<int> ids{10, 11, 12};
  const Tensor e = provider.embed(ids);
  CHECK(e.shape() == Shape{3, 8});
  CHECK(provider.embed(ids) == e);

  // With rho = 1 the reference continuation of the gold hypothesis equals O2.
  RngStream rng(2);
  const sim::StaticEmbeddingProvider table(testing::random_tensor({vocab.size(), 12}, rng));
  const auto labels = similarity_aux_labels(instances, vocab, table);
  for (std::size_t i = 0; i < instances.size(); ++i) CHECK(labels[i] == *instances[i].label);
}

TEST_CASE("config validation") {
  MtlConfig c;
  CHECK(c.violations().empty());
  c.n_heads = 3;
  c.batch_size = 0;
  c.max_seq_len = 4;
  const auto v = c.violations();
  CHECK(v.size() >= 3);
  CHECK(parse_aux_label("bertscore") == AuxLabel::bertscore);
  CHECK(testing::code_of([] { parse_aux_label("x"); }) == ErrorCode::validation);
}
