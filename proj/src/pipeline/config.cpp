#include "hypevents/pipeline/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "hypevents/core/error.hpp"
#include "hypevents/eval/metrics.hpp"

namespace hypevents::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw Error(ErrorCode::validation, key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw Error(ErrorCode::validation, key + ": '" + v + "' is not a finite number");
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_u64(key, trim(part)));
  if (out.empty()) throw Error(ErrorCode::validation, key + ": empty seed list");
  return out;
}

struct Field {
  const char* key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

Field size_field(const char* key, std::size_t& v) {
  return {key, [&v] { return std::to_string(v); },
          [&v, key](const std::string& s) { v = static_cast<std::size_t>(parse_u64(key, s)); }};
}

Field u64_field(const char* key, std::uint64_t& v) {
  return {key, [&v] { return std::to_string(v); }, [&v, key](const std::string& s) { v = parse_u64(key, s); }};
}

Field double_field(const char* key, double& v) {
  return {key, [&v] { return format_double(v); }, [&v, key](const std::string& s) { v = parse_double(key, s); }};
}

Field string_field(const char* key, std::string& v) {
  return {key, [&v] { return v; }, [&v](const std::string& s) { v = s; }};
}

std::vector<Field> fields(RunConfig& c) {
  return {
      u64_field("seed", c.seed),
      {"seeds",
       [&c] {
         std::string s;
         for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
         return s;
       },
       [&c](const std::string& s) { c.seeds = parse_seed_list("seeds", s); }},
      string_field("corpus.source", c.corpus.source),
      string_field("corpus.stories", c.corpus.stories),
      string_field("corpus.train", c.corpus.train),
      string_field("corpus.dev", c.corpus.dev),
      size_field("corpus.n_stories", c.corpus.n_stories),
      size_field("corpus.n_train", c.corpus.n_train),
      size_field("corpus.n_dev", c.corpus.n_dev),
      double_field("corpus.rho", c.corpus.rho),
      double_field("corpus.distractor_overlap", c.corpus.distractor_overlap),
      size_field("corpus.vocab_budget", c.corpus.vocab_budget),
      {"corpus.template_set", [&c] { return std::to_string(c.corpus.template_set); },
       [&c](const std::string& s) { c.corpus.template_set = static_cast<int>(parse_u64("corpus.template_set", s)); }},
      {"corpus.seed", [&c] { return c.corpus.seed ? std::to_string(*c.corpus.seed) : std::string("auto"); },
       [&c](const std::string& s) {
         if (s == "auto") {
           c.corpus.seed.reset();
         } else {
           c.corpus.seed = parse_u64("corpus.seed", s);
         }
       }},
      size_field("data.min_count", c.corpus.min_count),
      size_field("lm.d_model", c.lm.d_model),
      size_field("lm.layers", c.lm.n_layers),
      size_field("lm.heads", c.lm.n_heads),
      size_field("lm.max_seq_len", c.lm.max_seq_len),
      double_field("lm.dropout", c.lm.dropout),
      double_field("lm.lr", c.lm.learning_rate),
      size_field("lm.batch", c.lm.batch_size),
      size_field("lm.epochs", c.lm.epochs),
      {"decode.strategy", [&c] { return lm::to_string(c.decode.strategy); },
       [&c](const std::string& s) { c.decode.strategy = lm::parse_strategy(s); }},
      size_field("decode.k", c.decode.k),
      size_field("decode.max_new_tokens", c.decode.max_new_tokens),
      size_field("decode.max_sentences", c.decode.max_sentences),
      size_field("mtl.d_model", c.mtl.d_model),
      size_field("mtl.layers", c.mtl.n_layers),
      size_field("mtl.heads", c.mtl.n_heads),
      size_field("mtl.max_seq_len", c.mtl.max_seq_len),
      double_field("mtl.dropout", c.mtl.dropout),
      double_field("mtl.lr", c.mtl.learning_rate),
      size_field("mtl.batch", c.mtl.batch_size),
      size_field("mtl.epochs", c.mtl.epochs),
      {"mtl.aux_label", [&c] { return mtl::to_string(c.mtl.aux_label); },
       [&c](const std::string& s) { c.mtl.aux_label = mtl::parse_aux_label(s); }},
      string_field("provider", c.provider),
      size_field("jobs", c.jobs),
      string_field("out", c.out),
  };
}

constexpr const char* kAgreementPrefix = "agreement.";

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key.rfind(kAgreementPrefix, 0) == 0 && key.size() > std::string(kAgreementPrefix).size()) {
    eval::Scale::parse(value);
    agreement_scales[key.substr(std::string(kAgreementPrefix).size())] = value;
    return;
  }
  for (Field& f : fields(*this)) {
    if (key == f.key) {
      f.set(value);
      return;
    }
  }
  throw Error(ErrorCode::validation, "unknown config key '" + key + "'");
}

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> out = lm.violations();
  for (auto& v : mtl.violations()) out.push_back(std::move(v));
  if (seeds.empty()) out.emplace_back("seeds must list at least one seed");
  if (corpus.source == "synthetic") {
    text::SyntheticSpec spec = synthetic_spec();
    for (auto& v : spec.violations()) out.push_back("corpus." + v);
    if (corpus.n_train == 0) out.emplace_back("corpus.n_train must be positive");
  } else if (corpus.source == "files") {
    if (corpus.stories.empty()) out.emplace_back("corpus.stories is required when corpus.source = files");
    if (corpus.train.empty()) out.emplace_back("corpus.train is required when corpus.source = files");
    if (corpus.dev.empty()) out.emplace_back("corpus.dev is required when corpus.source = files");
  } else {
    out.push_back("corpus.source must be synthetic or files, got '" + corpus.source + "'");
  }
  if (corpus.min_count == 0) out.emplace_back("data.min_count must be positive");
  if (decode.strategy == lm::Strategy::topk && decode.k == 0) out.emplace_back("decode.k must be positive for topk");
  if (decode.max_sentences == 0) out.emplace_back("decode.max_sentences must be positive");
  if (provider != "static" && provider != "lm" && provider != "encoder") {
    out.push_back("provider must be static, lm or encoder, got '" + provider + "'");
  }
  if (jobs == 0) out.emplace_back("jobs must be positive");
  return out;
}

void RunConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid configuration (" + std::to_string(v.size()) + " problem" + (v.size() > 1 ? "s" : "") + "):";
  for (const auto& s : v) msg += "\n  " + s;
  throw Error(ErrorCode::validation, msg);
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::string out;
  for (const Field& f : fields(copy)) {
    // The output location is where a run goes, not what it computes.
    if (std::string_view(f.key) == "out") continue;
    out += std::string(f.key) + " = " + f.get() + "\n";
  }
  for (const auto& [aspect, scale] : agreement_scales) out += kAgreementPrefix + aspect + " = " + scale + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::vector<std::string> problems;
  std::stringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::parse, "config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::validation) throw;
      problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (auto& v : c.violations()) problems.push_back(std::move(v));
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(ErrorCode::validation, msg);
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

RunConfig RunConfig::for_seed(std::uint64_t s) const {
  RunConfig c = *this;
  c.seed = s;
  c.seeds = {s};
  return c;
}

lm::LmConfig RunConfig::lm_config() const {
  lm::LmConfig c = lm;
  c.seed = seed;
  return c;
}

mtl::MtlConfig RunConfig::mtl_config() const {
  mtl::MtlConfig c = mtl;
  c.seed = seed;
  return c;
}

lm::DecodeSpec RunConfig::decode_spec() const {
  lm::DecodeSpec d = decode;
  d.seed = seed;
  return d;
}

text::SyntheticSpec RunConfig::synthetic_spec() const {
  text::SyntheticSpec spec;
  spec.n_stories = corpus.n_stories;
  spec.n_instances = corpus.n_train + corpus.n_dev;
  spec.vocab_budget = corpus.vocab_budget;
  spec.template_set = corpus.template_set;
  spec.seed = corpus_seed();
  spec.rho = corpus.rho;
  spec.distractor_overlap = corpus.distractor_overlap;
  return spec;
}

std::filesystem::path output_root(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  return "runs";
}

}  // namespace hypevents::pipeline
