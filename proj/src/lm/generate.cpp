#include "hypevents/lm/generate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "hypevents/core/error.hpp"
#include "hypevents/text/tokenizer.hpp"

namespace hypevents::lm {

namespace {

bool sentence_final(const std::string& token) { return token == "." || token == "!" || token == "?"; }

text::TokenId pick_token(const Tensor& logits, const text::Vocab& vocab, const DecodeSpec& spec,
                         RngStream& rng) {
  const std::size_t v = logits.numel();
  std::vector<std::size_t> allowed;
  allowed.reserve(v);
  for (std::size_t i = 0; i < v; ++i) {
    const auto id = static_cast<text::TokenId>(i);
    if (id == text::special::end || !vocab.is_special(id)) allowed.push_back(i);
  }
  // Highest logit first; ties resolve to the lower id.
  auto better = [&](std::size_t a, std::size_t b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  };
  if (spec.strategy == Strategy::greedy) {
    return static_cast<text::TokenId>(*std::min_element(allowed.begin(), allowed.end(), better));
  }
  const std::size_t k = std::min(std::max<std::size_t>(spec.k, 1), allowed.size());
  std::partial_sort(allowed.begin(), allowed.begin() + static_cast<std::ptrdiff_t>(k), allowed.end(), better);
  const double top = logits[allowed[0]];
  std::vector<double> weights(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += weights[i] = std::exp(logits[allowed[i]] - top);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < k; ++i) {
    u -= weights[i];
    if (u < 0.0) return static_cast<text::TokenId>(allowed[i]);
  }
  return static_cast<text::TokenId>(allowed[k - 1]);
}

}  // namespace

std::string to_string(Strategy s) { return s == Strategy::greedy ? "greedy" : "topk"; }

Strategy parse_strategy(const std::string& name) {
  if (name == "greedy") return Strategy::greedy;
  if (name == "topk") return Strategy::topk;
  throw Error(ErrorCode::validation, "decode strategy must be greedy or topk, got '" + name + "'");
}

Generation decode(const LmModel& model, const text::Vocab& vocab, std::vector<text::TokenId> condition,
                  const DecodeSpec& spec, std::uint64_t sample_key) {
  const std::size_t limit = model.config().max_seq_len;
  if (condition.empty() || condition.size() > limit) {
    throw Error(ErrorCode::contract, "generation condition of " + std::to_string(condition.size()) +
                                         " tokens does not fit max_seq_len " + std::to_string(limit));
  }
  RngStream rng = RngStream(spec.seed).split("decode").split(sample_key);
  Tape tape;
  const auto bound = model.stack().bind_frozen(tape);
  const Var out_proj = ops::transpose(bound.token_embedding);

  Generation g;
  std::vector<text::TokenId> context = std::move(condition);
  std::size_t sentences = 0;
  while (g.ids.size() < spec.max_new_tokens && context.size() < limit) {
    const Var h = model.stack().forward(bound, context, nn::ForwardMode::inference());
    const Tensor logits = ops::matmul(ops::row(h, context.size() - 1), out_proj).value();
    const text::TokenId next = pick_token(logits, vocab, spec, rng);
    if (next == text::special::end) break;
    g.ids.push_back(next);
    context.push_back(next);
    if (sentence_final(vocab.token(next)) && ++sentences >= spec.max_sentences) break;
  }
  g.text = text::detokenize(g.ids, vocab);
  g.degenerate = g.ids.empty();
  return g;
}

Generation generate_next_event(const LmModel& model, const text::Vocab& vocab, const std::string& obs1,
                               const std::string& hypothesis, const std::string& obs2,
                               const DecodeSpec& spec, std::uint64_t sample_key) {
  return decode(model, vocab, next_event_condition(obs1, hypothesis, obs2, vocab), spec, sample_key);
}

std::vector<text::AbductiveInstance> generate_for_instances(const LmModel& model, const text::Vocab& vocab,
                                                            std::span<const text::AbductiveInstance> instances,
                                                            const DecodeSpec& spec, std::size_t jobs,
                                                            GenerationStats* stats) {
  std::vector<text::AbductiveInstance> out(instances.begin(), instances.end());
  std::vector<std::size_t> degenerate(out.size(), 0);
  auto work = [&](std::size_t i) {
    auto& inst = out[i];
    std::array<std::string, 2> gens;
    for (int j = 1; j <= 2; ++j) {
      const std::uint64_t key = hash_name(inst.id) ^ mix64(static_cast<std::uint64_t>(j));
      Generation g = generate_next_event(model, vocab, inst.obs1, inst.hypothesis(j), inst.obs2, spec, key);
      degenerate[i] += g.degenerate;
      gens[static_cast<std::size_t>(j - 1)] = std::move(g.text);
    }
    inst.generated = std::move(gens);
  };

  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(out.size(), 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) work(i);
  } else {
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < jobs; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < out.size(); i += jobs) work(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  if (stats) stats->degenerate = std::accumulate(degenerate.begin(), degenerate.end(), std::size_t{0});
  return out;
}

}  // namespace hypevents::lm
