#include "hypevents/text/vocab.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "hypevents/core/error.hpp"

namespace hypevents::text {

Vocab::Vocab() {
  for (std::string_view s : kSpecialTokens) add(s);
}

TokenId Vocab::add(std::string_view token) {
  if (auto found = find(token)) return *found;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  ids_.emplace(tokens_.back(), id);
  return id;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const { return find(token).value_or(special::unk); }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorCode::contract, "token id " + std::to_string(id) + " outside vocabulary of " +
                                         std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::serialize() const {
  std::string out(kVocabHeader);
  out += '\n';
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\t';
    out += std::to_string(i);
    out += '\n';
  }
  return out;
}

Vocab Vocab::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kVocabHeader) {
    throw Error(ErrorCode::parse, "vocab: missing header '" + std::string(kVocabHeader) + "'");
  }
  Vocab vocab;
  vocab.tokens_.clear();
  vocab.ids_.clear();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0) {
      throw Error(ErrorCode::parse, "vocab line " + std::to_string(line_no) + ": expected token<TAB>id");
    }
    std::size_t id = 0;
    const char* first = line.data() + tab + 1;
    const char* last = line.data() + line.size();
    const auto [ptr, ec] = std::from_chars(first, last, id);
    if (ec != std::errc() || ptr != last) {
      throw Error(ErrorCode::parse, "vocab line " + std::to_string(line_no) + ": bad id");
    }
    const std::string token = line.substr(0, tab);
    if (id != vocab.tokens_.size()) {
      throw Error(ErrorCode::parse, "vocab line " + std::to_string(line_no) + ": id " +
                                        std::to_string(id) + " breaks the dense id range");
    }
    if (vocab.ids_.count(token)) {
      throw Error(ErrorCode::parse, "vocab line " + std::to_string(line_no) + ": duplicate token '" +
                                        token + "'");
    }
    vocab.tokens_.push_back(token);
    vocab.ids_.emplace(token, static_cast<TokenId>(id));
  }
  for (std::size_t i = 0; i < special::count; ++i) {
    if (vocab.tokens_.size() <= i || vocab.tokens_[i] != kSpecialTokens[i]) {
      throw Error(ErrorCode::parse, "vocab: special token " + std::string(kSpecialTokens[i]) +
                                        " must have id " + std::to_string(i));
    }
  }
  return vocab;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << serialize();
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

}  // namespace hypevents::text
