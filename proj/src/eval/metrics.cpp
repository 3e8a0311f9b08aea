#include "hypevents/eval/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "hypevents/core/error.hpp"

namespace hypevents::eval {

using json = nlohmann::ordered_json;

double accuracy(std::span<const int> predictions, std::span<const int> golds) {
  if (predictions.size() != golds.size()) {
    throw Error(ErrorCode::dimension, "accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                                          std::to_string(golds.size()) + " golds");
  }
  if (predictions.empty()) throw Error(ErrorCode::contract, "accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) correct += predictions[i] == golds[i];
  return static_cast<double>(correct) / static_cast<double>(golds.size());
}

Scale Scale::ordinal(std::vector<std::string> order) {
  if (order.size() < 2) throw Error(ErrorCode::validation, "an ordinal scale needs at least two values");
  auto sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(ErrorCode::validation, "ordinal scale lists a value twice");
  }
  return {Kind::ordinal, std::move(order)};
}

Scale Scale::parse(const std::string& text) {
  if (text == "nominal") return nominal();
  const std::string prefix = "ordinal:";
  if (text.rfind(prefix, 0) != 0) {
    throw Error(ErrorCode::validation, "scale '" + text + "' is neither 'nominal' nor 'ordinal:a,b,...'");
  }
  std::vector<std::string> order;
  std::size_t pos = prefix.size();
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    order.push_back(text.substr(pos, comma - pos));
    pos = comma + 1;
  }
  for (const auto& v : order) {
    if (v.empty()) throw Error(ErrorCode::validation, "empty value in scale '" + text + "'");
  }
  return ordinal(std::move(order));
}

std::string Scale::to_string() const {
  if (kind == Kind::nominal) return "nominal";
  std::string s = "ordinal:";
  for (std::size_t i = 0; i < order.size(); ++i) s += (i ? "," : "") + order[i];
  return s;
}

void AnnotationTable::validate() const {
  if (annotators.size() < 2) throw Error(ErrorCode::contract, "annotation table needs at least two annotators");
  if (values.size() != items.size()) throw Error(ErrorCode::dimension, "annotation table: row count mismatch");
  for (const auto& row : values) {
    if (row.size() != annotators.size()) throw Error(ErrorCode::dimension, "annotation table: ragged row");
    if (scale.kind != Scale::Kind::ordinal) continue;
    for (const auto& v : row) {
      if (v && std::find(scale.order.begin(), scale.order.end(), *v) == scale.order.end()) {
        throw Error(ErrorCode::validation, "value '" + *v + "' is not on the scale " + scale.to_string());
      }
    }
  }
}

std::vector<std::optional<std::string>> AnnotationTable::column(std::size_t annotator) const {
  std::vector<std::optional<std::string>> out;
  out.reserve(values.size());
  for (const auto& row : values) out.push_back(row.at(annotator));
  return out;
}

AgreementReport cohen_kappa(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension, "cohen_kappa: label vectors differ in length");
  if (a.empty()) throw Error(ErrorCode::contract, "cohen_kappa: no items");
  std::map<std::string, long long> count_a, count_b;
  long long agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++count_a[a[i]];
    ++count_b[b[i]];
    agree += a[i] == b[i];
  }
  // kappa = (n * agree - sum_c a_c b_c) / (n^2 - sum_c a_c b_c), all in integers
  // until the final division.
  const auto n = static_cast<long long>(a.size());
  long long chance = 0;
  for (const auto& [label, ca] : count_a) {
    const auto it = count_b.find(label);
    if (it != count_b.end()) chance += ca * it->second;
  }
  AgreementReport r;
  r.statistic = "cohen_kappa";
  r.n_items = a.size();
  r.n_annotators = 2;
  r.scale = "nominal";
  if (n * n == chance) {
    r.value = 1.0;
    r.degenerate = true;
  } else {
    r.value = static_cast<double>(n * agree - chance) / static_cast<double>(n * n - chance);
  }
  return r;
}

PairwiseKappa pairwise_kappa(const AnnotationTable& table) {
  table.validate();
  PairwiseKappa out;
  for (std::size_t i = 0; i < table.annotators.size(); ++i) {
    for (std::size_t j = i + 1; j < table.annotators.size(); ++j) {
      std::vector<std::string> a, b;
      for (std::size_t u = 0; u < table.items.size(); ++u) {
        const auto& x = table.values[u][i];
        const auto& y = table.values[u][j];
        if (!x || !y) {
          throw Error(ErrorCode::contract, "cohen_kappa: item " + table.items[u] + " lacks a value from " +
                                               table.annotators[!x ? i : j]);
        }
        a.push_back(*x);
        b.push_back(*y);
      }
      AgreementReport r = cohen_kappa(a, b);
      r.statistic = "cohen_kappa:" + table.annotators[i] + "," + table.annotators[j];
      out.mean += r.value;
      out.pairs.push_back(std::move(r));
    }
  }
  out.mean /= static_cast<double>(out.pairs.size());
  return out;
}

double ordinal_delta2(std::size_t c, std::size_t k, std::span<const double> counts) {
  const std::size_t lo = std::min(c, k), hi = std::max(c, k);
  double s = 0.0;
  for (std::size_t g = lo; g <= hi; ++g) s += counts[g];
  s -= (counts[c] + counts[k]) / 2.0;
  return s * s;
}

AgreementReport krippendorff_alpha_ordinal(const AnnotationTable& table) {
  table.validate();
  if (table.scale.kind != Scale::Kind::ordinal) {
    throw Error(ErrorCode::contract, "ordinal alpha needs an ordinal scale");
  }
  const std::size_t k = table.scale.order.size();
  auto rank = [&](const std::string& v) {
    return static_cast<std::size_t>(std::find(table.scale.order.begin(), table.scale.order.end(), v) -
                                    table.scale.order.begin());
  };

  // Coincidence matrix: each unit with m >= 2 values contributes its ordered
  // value pairs with weight 1 / (m - 1).
  std::vector<double> o(k * k, 0.0);
  for (const auto& row : table.values) {
    std::vector<std::size_t> ranks;
    for (const auto& v : row) {
      if (v) ranks.push_back(rank(*v));
    }
    if (ranks.size() < 2) continue;
    const double w = 1.0 / static_cast<double>(ranks.size() - 1);
    for (std::size_t i = 0; i < ranks.size(); ++i)
      for (std::size_t j = 0; j < ranks.size(); ++j)
        if (i != j) o[ranks[i] * k + ranks[j]] += w;
  }
  std::vector<double> n_c(k, 0.0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t d = 0; d < k; ++d) n_c[c] += o[c * k + d];
  double n = 0.0;
  for (double x : n_c) n += x;
  if (n == 0.0) throw Error(ErrorCode::degenerate, "ordinal alpha: no unit has two or more values");

  double observed = 0.0, expected = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < k; ++d) {
      const double delta = ordinal_delta2(c, d, n_c);
      observed += o[c * k + d] * delta;
      expected += n_c[c] * n_c[d] * delta;
    }
  }
  AgreementReport r;
  r.statistic = "krippendorff_alpha_ordinal";
  r.n_items = table.items.size();
  r.n_annotators = table.annotators.size();
  r.scale = table.scale.to_string();
  if (expected == 0.0) {
    r.value = 1.0;
    r.degenerate = true;
  } else {
    r.value = 1.0 - (n - 1.0) * observed / expected;
  }
  return r;
}

MajorityResult majority_vote(const AnnotationTable& table) {
  table.validate();
  MajorityResult out;
  for (std::size_t u = 0; u < table.items.size(); ++u) {
    std::map<std::string, std::size_t> votes;
    std::size_t present = 0;
    for (const auto& v : table.values[u]) {
      if (!v) continue;
      ++votes[*v];
      ++present;
    }
    const auto best = std::max_element(votes.begin(), votes.end(),
                                       [](const auto& x, const auto& y) { return x.second < y.second; });
    if (best != votes.end() && 2 * best->second > present) {
      out.labels.push_back({table.items[u], best->first});
    } else {
      out.excluded.push_back(table.items[u]);
    }
  }
  return out;
}

std::vector<BreakdownRow> breakdown_report(std::span<const BreakdownRecord> records,
                                           std::span<const std::string> known) {
  std::vector<BreakdownRow> rows;
  for (const BreakdownRecord& r : records) {
    std::string cat = r.category;
    if (cat.empty() || (!known.empty() && std::find(known.begin(), known.end(), cat) == known.end())) cat = "other";
    auto it = std::find_if(rows.begin(), rows.end(), [&](const BreakdownRow& x) { return x.category == cat; });
    if (it == rows.end()) {
      rows.push_back({cat});
      it = rows.end() - 1;
    }
    ++it->n;
    it->correct += r.prediction == r.gold;
    it->contradictions += r.contradiction;
  }
  for (BreakdownRow& row : rows) {
    row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.n);
    row.contradiction_rate = static_cast<double>(row.contradictions) / static_cast<double>(row.n);
  }
  return rows;
}

std::string breakdown_record(const BreakdownRow& row) {
  json j;
  j["category"] = row.category;
  j["n"] = row.n;
  j["correct"] = row.correct;
  j["accuracy"] = row.accuracy;
  j["contradictions"] = row.contradictions;
  j["contradiction_rate"] = row.contradiction_rate;
  return j.dump();
}

std::vector<Annotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::vector<Annotation> out;
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return path.string() + ": line " + std::to_string(line_no) + ": "; };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::parse, where() + "malformed record (" + e.what() + ")");
    }
    if (!j.is_object()) throw Error(ErrorCode::parse, where() + "record is not an object");
    auto text = [&](const char* name) {
      const auto it = j.find(name);
      if (it == j.end() || it->is_null()) throw Error(ErrorCode::schema, where() + "missing field '" + name + "'");
      if (it->is_string()) return it->get<std::string>();
      if (it->is_number_integer()) return it->dump();
      throw Error(ErrorCode::schema, where() + "field '" + name + "' must be a string or integer");
    };
    out.push_back({text("item"), text("annotator"), text("aspect"), text("value")});
  }
  return out;
}

AnnotationTable table_for(std::span<const Annotation> annotations, const std::string& aspect, Scale scale) {
  AnnotationTable t;
  t.scale = std::move(scale);
  std::map<std::string, std::size_t> item_index, annotator_index;
  for (const Annotation& a : annotations) {
    if (a.aspect != aspect) continue;
    if (item_index.emplace(a.item, t.items.size()).second) t.items.push_back(a.item);
    if (annotator_index.emplace(a.annotator, t.annotators.size()).second) t.annotators.push_back(a.annotator);
  }
  t.values.assign(t.items.size(), std::vector<std::optional<std::string>>(t.annotators.size()));
  for (const Annotation& a : annotations) {
    if (a.aspect != aspect) continue;
    auto& cell = t.values[item_index[a.item]][annotator_index[a.annotator]];
    if (cell) {
      throw Error(ErrorCode::schema, "aspect " + aspect + ": annotator " + a.annotator + " labels item " + a.item +
                                         " twice");
    }
    cell = a.value;
  }
  t.validate();
  return t;
}

std::vector<std::string> aspects_of(std::span<const Annotation> annotations) {
  std::vector<std::string> out;
  for (const Annotation& a : annotations) {
    if (std::find(out.begin(), out.end(), a.aspect) == out.end()) out.push_back(a.aspect);
  }
  return out;
}

std::string agreement_record(const AgreementReport& r) {
  json j;
  j["statistic"] = r.statistic;
  j["value"] = r.value;
  j["n_items"] = r.n_items;
  j["n_annotators"] = r.n_annotators;
  j["scale"] = r.scale;
  j["degenerate"] = r.degenerate;
  return j.dump();
}

}  // namespace hypevents::eval
