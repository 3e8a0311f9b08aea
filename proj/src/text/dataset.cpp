#include "hypevents/text/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "hypevents/core/error.hpp"
#include "hypevents/text/tokenizer.hpp"

namespace hypevents::text {

using json = nlohmann::ordered_json;

namespace {

std::string where(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

json parse_line(std::string_view line, std::size_t line_no) {
  json record;
  try {
    record = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, where(line_no) + "malformed record (" + e.what() + ")");
  }
  if (!record.is_object()) throw Error(ErrorCode::parse, where(line_no) + "record is not an object");
  return record;
}

const json& field(const json& record, const char* name, std::size_t line_no) {
  const auto it = record.find(name);
  if (it == record.end() || it->is_null()) {
    throw Error(ErrorCode::schema, where(line_no) + "missing field '" + name + "'");
  }
  return *it;
}

std::string string_field(const json& record, const char* name, std::size_t line_no) {
  const json& v = field(record, name, line_no);
  if (!v.is_string()) throw Error(ErrorCode::schema, where(line_no) + "field '" + name + "' must be a string");
  return v.get<std::string>();
}

// An ending is either one string of sentences or an array of sentence
// strings; edited endings may also be a list of alternative edits, of which
// the first is used.
std::array<std::string, 3> ending_field(const json& record, const char* name, std::size_t line_no) {
  const json* v = &field(record, name, line_no);
  if (v->is_array() && !v->empty() && v->front().is_array()) v = &v->front();
  std::vector<std::string> sentences;
  if (v->is_string()) {
    sentences = split_sentences(v->get<std::string>());
  } else if (v->is_array()) {
    for (const json& s : *v) {
      if (!s.is_string()) {
        throw Error(ErrorCode::schema, where(line_no) + "field '" + name + "' must hold strings");
      }
      for (auto& part : split_sentences(s.get<std::string>())) sentences.push_back(std::move(part));
    }
  } else {
    throw Error(ErrorCode::schema, where(line_no) + "field '" + name + "' must be a string or array");
  }
  if (sentences.size() != 3) {
    throw Error(ErrorCode::schema, where(line_no) + "field '" + name + "' has " +
                                       std::to_string(sentences.size()) + " sentences, expected 3");
  }
  return {sentences[0], sentences[1], sentences[2]};
}

std::string record_id(const json& record, std::size_t line_no) {
  for (const char* key : {"id", "story_id"}) {
    const auto it = record.find(key);
    if (it != record.end() && it->is_string()) return it->get<std::string>();
    if (it != record.end() && it->is_number_integer()) return std::to_string(it->get<long long>());
  }
  return "line-" + std::to_string(line_no);
}

template <typename T, typename Parse>
std::vector<T> load_lines(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(parse(line, line_no));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void require_text(const std::string& value, const char* name, const std::string& id) {
  if (split_words(value).empty()) {
    throw Error(ErrorCode::schema, "instance " + id + ": field '" + name + "' is empty");
  }
}

}  // namespace

std::array<std::string, 5> Story::counterfactual_story() const {
  if (!counterfactual) throw Error(ErrorCode::contract, "story " + id + " has no counterfactual branch");
  const auto& cf = *counterfactual;
  return {sentences[0], cf[0], cf[1], cf[2], cf[3]};
}

void AbductiveInstance::validate() const {
  require_text(obs1, "obs1", id);
  require_text(obs2, "obs2", id);
  require_text(hyp1, "hyp1", id);
  require_text(hyp2, "hyp2", id);
  if (label && *label != 1 && *label != 2) {
    throw Error(ErrorCode::schema, "instance " + id + ": label " + std::to_string(*label) +
                                       " outside {1, 2}");
  }
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    const auto first = current.find_first_not_of(" \t\n");
    if (first != std::string::npos) {
      const auto last = current.find_last_not_of(" \t\n");
      out.push_back(current.substr(first, last - first + 1));
    }
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    current += text[i];
    const char c = text[i];
    const bool final_mark = c == '.' || c == '!' || c == '?';
    const bool at_break = i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\t' ||
                          text[i + 1] == '\n';
    if (final_mark && at_break) flush();
  }
  flush();
  return out;
}

Story parse_timetravel_record(std::string_view line, std::size_t line_no) {
  const json record = parse_line(line, line_no);
  Story story;
  story.id = record_id(record, line_no);
  story.sentences[0] = string_field(record, "premise", line_no);
  story.sentences[1] = string_field(record, "initial", line_no);
  const auto original = ending_field(record, "original_ending", line_no);
  std::copy(original.begin(), original.end(), story.sentences.begin() + 2);
  std::array<std::string, 4> cf;
  cf[0] = string_field(record, "counterfactual", line_no);
  const auto edited = ending_field(record, "edited_ending", line_no);
  std::copy(edited.begin(), edited.end(), cf.begin() + 1);
  story.counterfactual = cf;
  for (const auto& s : story.sentences) {
    if (split_words(s).empty()) throw Error(ErrorCode::schema, where(line_no) + "empty sentence");
  }
  for (const auto& s : cf) {
    if (split_words(s).empty()) throw Error(ErrorCode::schema, where(line_no) + "empty sentence");
  }
  return story;
}

AbductiveInstance parse_anli_record(std::string_view line, std::size_t line_no) {
  const json record = parse_line(line, line_no);
  AbductiveInstance inst;
  inst.id = record_id(record, line_no);
  inst.obs1 = string_field(record, "obs1", line_no);
  inst.obs2 = string_field(record, "obs2", line_no);
  inst.hyp1 = string_field(record, "hyp1", line_no);
  inst.hyp2 = string_field(record, "hyp2", line_no);
  if (const auto it = record.find("label"); it != record.end() && !it->is_null()) {
    int label = 0;
    if (it->is_number_integer()) {
      label = it->get<int>();
    } else if (it->is_string() && (it->get<std::string>() == "1" || it->get<std::string>() == "2")) {
      label = std::stoi(it->get<std::string>());
    } else if (!it->is_string()) {
      throw Error(ErrorCode::schema, where(line_no) + "label must be 1 or 2");
    }
    if (label != 1 && label != 2) {
      throw Error(ErrorCode::schema, where(line_no) + "label " + it->dump() + " outside {1, 2}");
    }
    inst.label = label;
  }
  const auto g1 = record.find("gen1");
  const auto g2 = record.find("gen2");
  const bool has1 = g1 != record.end() && !g1->is_null();
  const bool has2 = g2 != record.end() && !g2->is_null();
  if (has1 != has2) throw Error(ErrorCode::schema, where(line_no) + "gen1 and gen2 must appear together");
  if (has1) {
    if (!g1->is_string() || !g2->is_string()) {
      throw Error(ErrorCode::schema, where(line_no) + "gen1/gen2 must be strings");
    }
    inst.generated = std::array<std::string, 2>{g1->get<std::string>(), g2->get<std::string>()};
  }
  if (const auto it = record.find("category"); it != record.end() && it->is_string()) {
    inst.category = it->get<std::string>();
  }
  try {
    inst.validate();
  } catch (const Error& e) {
    throw Error(e.code(), where(line_no) + e.what());
  }
  return inst;
}

std::vector<Story> load_timetravel(const std::filesystem::path& path) {
  return load_lines<Story>(path, parse_timetravel_record);
}

std::vector<AbductiveInstance> load_anli(const std::filesystem::path& path) {
  return load_lines<AbductiveInstance>(path, parse_anli_record);
}

std::string timetravel_record(const Story& story) {
  json r;
  r["story_id"] = story.id;
  r["premise"] = story.sentences[0];
  r["initial"] = story.sentences[1];
  r["original_ending"] = json::array({story.sentences[2], story.sentences[3], story.sentences[4]});
  if (story.counterfactual) {
    const auto& cf = *story.counterfactual;
    r["counterfactual"] = cf[0];
    r["edited_ending"] = json::array({cf[1], cf[2], cf[3]});
  }
  return r.dump();
}

std::string anli_record(const AbductiveInstance& inst) {
  json r;
  r["id"] = inst.id;
  r["obs1"] = inst.obs1;
  r["obs2"] = inst.obs2;
  r["hyp1"] = inst.hyp1;
  r["hyp2"] = inst.hyp2;
  if (inst.label) r["label"] = *inst.label;
  if (inst.generated) {
    r["gen1"] = (*inst.generated)[0];
    r["gen2"] = (*inst.generated)[1];
  }
  if (!inst.category.empty()) r["category"] = inst.category;
  return r.dump();
}

void save_timetravel(const std::filesystem::path& path, std::span<const Story> stories) {
  std::vector<std::string> lines;
  for (const auto& s : stories) lines.push_back(timetravel_record(s));
  write_lines(path, lines);
}

void save_anli(const std::filesystem::path& path, std::span<const AbductiveInstance> instances) {
  std::vector<std::string> lines;
  for (const auto& i : instances) lines.push_back(anli_record(i));
  write_lines(path, lines);
}

Vocab build_vocab(std::span<const Story> stories, std::span<const AbductiveInstance> instances,
                  std::size_t min_count) {
  if (stories.empty() && instances.empty()) {
    throw Error(ErrorCode::contract, "build_vocab: empty corpus");
  }
  std::map<std::string, std::size_t> counts;
  auto count = [&counts](const std::string& sentence) {
    for (auto& w : split_words(sentence)) ++counts[w];
  };
  for (const Story& s : stories) {
    for (const auto& sentence : s.sentences) count(sentence);
    if (s.counterfactual) {
      for (const auto& sentence : *s.counterfactual) count(sentence);
    }
  }
  for (const AbductiveInstance& inst : instances) {
    for (const std::string* f : {&inst.obs1, &inst.obs2, &inst.hyp1, &inst.hyp2}) count(*f);
    if (inst.generated) {
      count((*inst.generated)[0]);
      count((*inst.generated)[1]);
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [word, n] : counts) {
    const bool is_special =
        std::find(kSpecialTokens.begin(), kSpecialTokens.end(), word) != kSpecialTokens.end();
    if (!is_special && n >= min_count) ranked.emplace_back(word, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab vocab;
  for (const auto& [word, n] : ranked) vocab.add(word);
  return vocab;
}

}  // namespace hypevents::text
