#include "hypevents/mtl/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "hypevents/core/adam.hpp"
#include "hypevents/core/error.hpp"
#include "hypevents/text/tokenizer.hpp"

namespace hypevents::mtl {

namespace sp = text::special;

std::string to_string(AuxLabel mode) { return mode == AuxLabel::gold ? "gold" : "bertscore"; }

AuxLabel parse_aux_label(const std::string& name) {
  if (name == "gold") return AuxLabel::gold;
  if (name == "bertscore") return AuxLabel::bertscore;
  throw Error(ErrorCode::validation, "unknown aux-label '" + name + "' (expected gold or bertscore)");
}

std::vector<std::string> MtlConfig::violations() const {
  std::vector<std::string> out;
  for (auto& v : stack(1).violations()) out.push_back("mtl." + v);
  // [CLS] + three one-token segments + three [SEP]
  if (max_seq_len < 7) out.emplace_back("mtl.max_seq_len must be at least 7");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) out.emplace_back("mtl.lr must be positive");
  if (batch_size == 0) out.emplace_back("mtl.batch must be positive");
  return out;
}

nn::StackConfig MtlConfig::stack(std::size_t vocab_size) const {
  nn::StackConfig c;
  c.vocab_size = vocab_size;
  c.d_model = d_model;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.max_seq_len = max_seq_len;
  c.dropout = dropout;
  c.causal = false;
  return c;
}

std::vector<text::TokenId> pack_segments(std::vector<std::vector<text::TokenId>> segments, std::size_t max_len) {
  const std::size_t overhead = 1 + segments.size();
  auto length = [&] {
    std::size_t n = overhead;
    for (const auto& s : segments) n += s.size();
    return n;
  };
  if (max_len < overhead) throw Error(ErrorCode::contract, "pack_segments: max_len below delimiter count");
  for (std::size_t n = length(); n > max_len; --n) {
    // Longest segment loses its last token; ties go to the later segment.
    std::size_t victim = 0;
    for (std::size_t k = 1; k < segments.size(); ++k) {
      if (segments[k].size() >= segments[victim].size()) victim = k;
    }
    segments[victim].pop_back();
  }
  std::vector<text::TokenId> out{sp::cls};
  for (const auto& s : segments) {
    out.insert(out.end(), s.begin(), s.end());
    out.push_back(sp::sep);
  }
  return out;
}

MtlInput build_mtl_input(const text::AbductiveInstance& instance, const text::Vocab& vocab,
                         std::size_t max_seq_len) {
  instance.validate();
  if (!instance.generated) {
    throw Error(ErrorCode::pipeline_order,
                "instance " + instance.id + " has no generated next events; run the generate stage first");
  }
  const auto o1 = text::tokenize(instance.obs1, vocab);
  const auto o2 = text::tokenize(instance.obs2, vocab);
  const std::array<std::vector<text::TokenId>, 2> h{text::tokenize(instance.hyp1, vocab),
                                                     text::tokenize(instance.hyp2, vocab)};
  MtlInput in;
  for (std::size_t j = 0; j < 2; ++j) {
    in.main[j] = pack_segments({o1, h[j], o2}, max_seq_len);
    in.aux[j] = pack_segments({h[j], text::tokenize((*instance.generated)[j], vocab), o2}, max_seq_len);
  }
  return in;
}

MtlModel::MtlModel(const MtlConfig& config, std::size_t vocab_size)
    : config_(config), vocab_size_(vocab_size) {
  const RngStream root = RngStream(config.seed).split("mtl-init");
  encoder_ = nn::TransformerStack(config.stack(vocab_size), root.split("encoder"));
  RngStream heads = root.split("heads");
  const std::size_t d = config.d_model;
  const double std = 0.02;
  head_main_w = Parameter("head.main.w", nn::normal_tensor({d, 1}, std, heads));
  head_main_b = Parameter("head.main.b", Tensor({1}));
  head_aux_w = Parameter("head.aux.w", nn::normal_tensor({d, 1}, std, heads));
  head_aux_b = Parameter("head.aux.b", Tensor({1}));
  loss_weight = Parameter("loss_weight", Tensor::scalar(1.0));
}

MtlModel::Bound MtlModel::bind(Tape& tape) {
  return {encoder_.bind(tape), tape.param(head_main_w), tape.param(head_main_b),
          tape.param(head_aux_w), tape.param(head_aux_b), tape.param(loss_weight)};
}

MtlModel::Bound MtlModel::bind_frozen(Tape& tape) const {
  return {encoder_.bind_frozen(tape), tape.constant(head_main_w.value), tape.constant(head_main_b.value),
          tape.constant(head_aux_w.value), tape.constant(head_aux_b.value), tape.constant(loss_weight.value)};
}

MtlModel::Outputs MtlModel::forward(const Bound& bound, const MtlInput& input, nn::ForwardMode mode) const {
  Outputs out;
  const std::array<const std::vector<text::TokenId>*, 4> seqs{&input.main[0], &input.main[1], &input.aux[0],
                                                               &input.aux[1]};
  for (std::size_t k = 0; k < 4; ++k) out.cls[k] = ops::row(encoder_.forward(bound.encoder, *seqs[k], mode), 0);
  auto score = [](Var cls, Var w, Var b) { return ops::add_bias(ops::matmul(cls, w), b); };
  const std::array<Var, 2> main{score(out.cls[0], bound.main_w, bound.main_b),
                                score(out.cls[1], bound.main_w, bound.main_b)};
  const std::array<Var, 2> aux{score(out.cls[2], bound.aux_w, bound.aux_b),
                               score(out.cls[3], bound.aux_w, bound.aux_b)};
  out.main_logits = ops::concat_cols(main);
  out.aux_logits = ops::concat_cols(aux);
  return out;
}

Tensor MtlModel::encode(std::span<const text::TokenId> ids) const {
  Tape tape;
  const auto bound = encoder_.bind_frozen(tape);
  return encoder_.forward(bound, ids, nn::ForwardMode::inference()).value();
}

std::vector<Parameter*> MtlModel::parameters() {
  std::vector<Parameter*> out = encoder_.parameters();
  for (Parameter* p : {&head_main_w, &head_main_b, &head_aux_w, &head_aux_b, &loss_weight}) out.push_back(p);
  return out;
}

std::vector<const Parameter*> MtlModel::parameters() const {
  std::vector<const Parameter*> out = encoder_.parameters();
  for (const Parameter* p : {&head_main_w, &head_main_b, &head_aux_w, &head_aux_b, &loss_weight}) out.push_back(p);
  return out;
}

namespace {

std::vector<int> zero_based(std::span<const int> labels) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    if (l != 1 && l != 2) throw Error(ErrorCode::contract, "labels must be 1 or 2, got " + std::to_string(l));
    out.push_back(l - 1);
  }
  return out;
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.size() == 1) return rows.front();
  std::vector<Var> cols;
  cols.reserve(rows.size());
  for (const Var& r : rows) cols.push_back(ops::transpose(r));
  return ops::transpose(ops::concat_cols(cols));
}

}  // namespace

JointLoss joint_loss(Var main_logits, Var aux_logits, std::span<const int> gold, std::span<const int> aux, Var w) {
  const std::size_t b = main_logits.shape().at(0);
  if (gold.size() != b || aux.size() != b || aux_logits.shape().at(0) != b) {
    throw Error(ErrorCode::dimension, "joint_loss: batch size mismatch");
  }
  const auto g = zero_based(gold);
  const auto a = zero_based(aux);
  JointLoss loss;
  loss.l_anli = ops::cross_entropy(main_logits, g);
  loss.l_sim = ops::cross_entropy(aux_logits, a);
  loss.total = ops::add(loss.l_anli, ops::mul(w, loss.l_sim));
  return loss;
}

LossBreakdown breakdown(const JointLoss& loss, Var w) {
  return {loss.l_anli.value().item(), loss.l_sim.value().item(), w.value().item(), loss.total.value().item()};
}

Prediction predict(const MtlModel& model, const MtlInput& input) {
  Tape tape;
  const auto bound = model.bind_frozen(tape);
  const auto out = model.forward(bound, input, nn::ForwardMode::inference());
  Prediction p;
  for (std::size_t j = 0; j < 2; ++j) {
    p.main_logits[j] = out.main_logits.value()[j];
    p.aux_logits[j] = out.aux_logits.value()[j];
  }
  p.tie = p.main_logits[0] == p.main_logits[1];
  p.aux_tie = p.aux_logits[0] == p.aux_logits[1];
  p.hypothesis = p.main_logits[1] > p.main_logits[0] ? 2 : 1;
  p.aux = p.aux_logits[1] > p.aux_logits[0] ? 2 : 1;
  return p;
}

Prediction predict(const MtlModel& model, const text::AbductiveInstance& instance, const text::Vocab& vocab) {
  return predict(model, build_mtl_input(instance, vocab, model.config().max_seq_len));
}

std::string epoch_record(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["l_anli"] = m.l_anli;
  j["l_sim"] = m.l_sim;
  j["w"] = m.w;
  j["train_acc"] = m.train_accuracy;
  j["dev_acc"] = m.dev_accuracy ? nlohmann::ordered_json(*m.dev_accuracy) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

double accuracy_on(const MtlModel& model, std::span<const text::AbductiveInstance> instances,
                   const text::Vocab& vocab) {
  if (instances.empty()) throw Error(ErrorCode::contract, "accuracy_on: empty instance set");
  std::size_t correct = 0;
  for (const auto& inst : instances) {
    if (!inst.label) throw Error(ErrorCode::schema, "instance " + inst.id + " is unlabelled");
    correct += predict(model, inst, vocab).hypothesis == *inst.label;
  }
  return static_cast<double>(correct) / static_cast<double>(instances.size());
}

namespace {

bool all_finite(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    for (double v : p->value.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

MtlTrainResult train_mtl(MtlModel& model, std::span<const text::AbductiveInstance> train,
                         std::span<const text::AbductiveInstance> dev, const text::Vocab& vocab,
                         const MtlConfig& config, std::span<const int> aux_labels,
                         const MtlEpochCallback& on_epoch) {
  if (train.empty()) throw Error(ErrorCode::contract, "train_mtl: empty training set");
  if (!aux_labels.empty() && aux_labels.size() != train.size()) {
    throw Error(ErrorCode::dimension, "train_mtl: one auxiliary label per training instance required");
  }
  std::vector<MtlInput> inputs;
  std::vector<int> gold, aux;
  inputs.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i].label) throw Error(ErrorCode::schema, "train_mtl: instance " + train[i].id + " is unlabelled");
    inputs.push_back(build_mtl_input(train[i], vocab, model.config().max_seq_len));
    gold.push_back(*train[i].label);
    aux.push_back(aux_labels.empty() ? *train[i].label : aux_labels[i]);
  }
  // Fail before training rather than after the first epoch.
  for (const auto& inst : dev) build_mtl_input(inst, vocab, model.config().max_seq_len);

  MtlTrainResult result;
  if (config.epochs == 0) return result;

  const std::vector<Parameter*> params = model.parameters();
  AdamState adam = AdamState::for_parameters(params, {.learning_rate = config.learning_rate});
  const std::size_t batches = (train.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  const RngStream root = RngStream(config.seed).split("mtl-train");

  std::vector<std::size_t> order(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle = root.split("shuffle").split(epoch);
    shuffle.shuffle(std::span<std::size_t>(order));

    double sum_anli = 0.0, sum_sim = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * config.batch_size, hi = std::min(order.size(), lo + config.batch_size);
      zero_grads(params);
      RngStream dropout = root.split("dropout").split(step);
      Tape tape;
      const auto bound = model.bind(tape);
      std::vector<Var> main_rows, aux_rows;
      std::vector<int> g, a;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = order[k];
        const auto out = model.forward(bound, inputs[i], nn::ForwardMode::training(dropout));
        main_rows.push_back(out.main_logits);
        aux_rows.push_back(out.aux_logits);
        g.push_back(gold[i]);
        a.push_back(aux[i]);
        const Tensor& l = out.main_logits.value();
        correct += (l[1] > l[0] ? 2 : 1) == gold[i];
      }
      const JointLoss loss = joint_loss(stack_rows(main_rows), stack_rows(aux_rows), g, a, bound.loss_weight);
      const LossBreakdown parts = breakdown(loss, bound.loss_weight);
      if (!std::isfinite(parts.total)) {
        throw Error(ErrorCode::divergence, "train_mtl: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                               ", step " + std::to_string(step + 1));
      }
      tape.backward(loss.total);
      const double lr =
          config.learning_rate * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
      adam_step(params, adam, lr);
      ++step;
      if (!all_finite(params)) {
        throw Error(ErrorCode::divergence, "train_mtl: non-finite parameters after step " + std::to_string(step));
      }
      const auto n = static_cast<double>(hi - lo);
      sum_anli += parts.l_anli * n;
      sum_sim += parts.l_sim * n;
      result.w_trajectory.push_back(model.loss_weight.value.item());
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.l_anli = sum_anli / static_cast<double>(train.size());
    m.l_sim = sum_sim / static_cast<double>(train.size());
    m.w = model.loss_weight.value.item();
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (!dev.empty()) m.dev_accuracy = accuracy_on(model, dev, vocab);
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

std::vector<int> similarity_aux_labels(std::span<const text::AbductiveInstance> instances,
                                       const text::Vocab& vocab, const sim::EmbeddingProvider& provider) {
  std::vector<int> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    const sim::Selection s = sim::select_unsupervised(inst, vocab, provider);
    // Abstentions fall back to hypothesis 1, like ties.
    out.push_back(s.abstain ? 1 : s.prediction);
  }
  return out;
}

Tensor EncoderEmbeddingProvider::embed(std::span<const text::TokenId> ids) const {
  const std::size_t room = model_->config().max_seq_len - 2;
  const std::size_t n = std::min(room, ids.size());
  std::vector<text::TokenId> seq{sp::cls};
  seq.insert(seq.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  seq.push_back(sp::sep);
  const Tensor h = model_->encode(seq);
  Tensor out({n, h.cols()});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c < h.cols(); ++c) out.at(t, c) = h.at(t + 1, c);
  return out;
}

}  // namespace hypevents::mtl
