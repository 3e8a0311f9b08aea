#include "hypevents/simscore/bertscore.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "hypevents/core/error.hpp"
#include "hypevents/text/tokenizer.hpp"

namespace hypevents::sim {

namespace {

std::vector<double> row_norms(const Tensor& x) {
  std::vector<double> n(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += x.at(r, c) * x.at(r, c);
    n[r] = std::sqrt(s);
  }
  return n;
}

}  // namespace

SimilarityReport bertscore(const Tensor& candidate, const Tensor& reference) {
  if (candidate.rank() != 2 || reference.rank() != 2) {
    throw Error(ErrorCode::dimension, "bertscore expects [tokens, d] matrices");
  }
  if (candidate.rows() == 0 || reference.rows() == 0) {
    throw Error(ErrorCode::degenerate, "bertscore on an empty sentence");
  }
  if (candidate.cols() != reference.cols()) {
    throw Error(ErrorCode::dimension, "bertscore: embedding widths " + std::to_string(candidate.cols()) +
                                          " and " + std::to_string(reference.cols()) + " differ");
  }
  const std::size_t n = candidate.rows(), m = reference.rows(), d = candidate.cols();
  const auto cn = row_norms(candidate);
  const auto rn = row_norms(reference);

  SimilarityReport r;
  r.match = Tensor({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (cn[i] == 0.0 || rn[j] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += candidate.at(i, k) * reference.at(j, k);
      r.match.at(i, j) = dot / (cn[i] * rn[j]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double best = r.match.at(i, 0);
    for (std::size_t j = 1; j < m; ++j) best = std::max(best, r.match.at(i, j));
    r.precision += best;
  }
  r.precision /= static_cast<double>(n);
  for (std::size_t j = 0; j < m; ++j) {
    double best = r.match.at(0, j);
    for (std::size_t i = 1; i < n; ++i) best = std::max(best, r.match.at(i, j));
    r.recall += best;
  }
  r.recall /= static_cast<double>(m);
  const double s = r.precision + r.recall;
  r.f1 = s == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / s;
  return r;
}

StaticEmbeddingProvider::StaticEmbeddingProvider(Tensor table) : table_(std::move(table)) {
  if (table_.rank() != 2) throw Error(ErrorCode::dimension, "embedding table must be a matrix");
}

Tensor StaticEmbeddingProvider::embed(std::span<const text::TokenId> ids) const {
  Tensor out({ids.size(), table_.cols()});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto id = static_cast<std::size_t>(ids[t]);
    if (ids[t] < 0 || id >= table_.rows()) {
      throw Error(ErrorCode::contract, "token id " + std::to_string(ids[t]) + " outside embedding table");
    }
    for (std::size_t c = 0; c < table_.cols(); ++c) out.at(t, c) = table_.at(id, c);
  }
  return out;
}

Tensor LmEmbeddingProvider::embed(std::span<const text::TokenId> ids) const {
  std::vector<int> seq{text::special::start};
  const std::size_t room = model_->config().max_seq_len - 1;
  seq.insert(seq.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(room, ids.size())));
  const Tensor h = model_->hidden_states(seq);
  const std::size_t d = h.cols();
  Tensor out({seq.size() - 1, d});
  for (std::size_t t = 1; t < seq.size(); ++t)
    for (std::size_t c = 0; c < d; ++c) out.at(t - 1, c) = h.at(t, c);
  return out;
}

Selection select_unsupervised(const text::AbductiveInstance& instance, const text::Vocab& vocab,
                              const EmbeddingProvider& provider) {
  if (!instance.generated) {
    throw Error(ErrorCode::pipeline_order,
                "instance " + instance.id + " has no generated next events; run the generate stage first");
  }
  Selection s;
  s.id = instance.id;
  s.gold = instance.label;
  const auto reference_ids = text::tokenize(instance.obs2, vocab);
  const Tensor reference = provider.embed(reference_ids);
  for (int j = 0; j < 2; ++j) {
    const auto ids = text::tokenize((*instance.generated)[static_cast<std::size_t>(j)], vocab);
    if (ids.empty()) {
      s.degenerate[j] = true;
      continue;
    }
    s.f1[j] = bertscore(provider.embed(ids), reference).f1;
  }
  if (s.degenerate[0] && s.degenerate[1]) {
    s.abstain = true;
  } else if (s.degenerate[0]) {
    s.prediction = 2;
  } else if (s.degenerate[1]) {
    s.prediction = 1;
  } else {
    s.tie = s.f1[0] == s.f1[1];
    s.prediction = s.f1[1] > s.f1[0] ? 2 : 1;
  }
  return s;
}

SelectorEvaluation evaluate_selector(std::span<const text::AbductiveInstance> instances,
                                     const text::Vocab& vocab, const EmbeddingProvider& provider,
                                     std::size_t jobs) {
  if (instances.empty()) throw Error(ErrorCode::contract, "evaluate_selector: empty instance set");
  for (const auto& inst : instances) {
    if (!inst.label) throw Error(ErrorCode::schema, "evaluate_selector: instance " + inst.id + " is unlabelled");
  }
  SelectorEvaluation ev;
  ev.records.resize(instances.size());
  jobs = std::clamp<std::size_t>(jobs, 1, instances.size());
  if (jobs == 1) {
    for (std::size_t i = 0; i < instances.size(); ++i) ev.records[i] = select_unsupervised(instances[i], vocab, provider);
  } else {
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < jobs; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < instances.size(); i += jobs)
            ev.records[i] = select_unsupervised(instances[i], vocab, provider);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  for (const Selection& s : ev.records) {
    ev.correct += s.correct();
    ev.ties += s.tie;
    ev.degenerate += s.degenerate[0] || s.degenerate[1];
    ev.abstained += s.abstain;
  }
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(instances.size());
  return ev;
}

std::string selection_record(const Selection& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["f1_1"] = s.f1[0];
  j["f1_2"] = s.f1[1];
  j["prediction"] = s.abstain ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(s.prediction);
  j["gold"] = s.gold ? nlohmann::ordered_json(*s.gold) : nlohmann::ordered_json(nullptr);
  j["correct"] = s.correct();
  j["tie"] = s.tie;
  j["degenerate_1"] = s.degenerate[0];
  j["degenerate_2"] = s.degenerate[1];
  j["abstain"] = s.abstain;
  return j.dump();
}

}  // namespace hypevents::sim
