#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hypevents::text {

using TokenId = int;

// Reserved ids, stable across save/load.
namespace special {
inline constexpr TokenId start = 0;  // [S]
inline constexpr TokenId end = 1;    // [E]
inline constexpr TokenId mask = 2;   // [M]
inline constexpr TokenId cls = 3;    // [CLS]
inline constexpr TokenId sep = 4;    // [SEP]
inline constexpr TokenId pad = 5;    // [PAD]
inline constexpr TokenId unk = 6;    // [UNK]
inline constexpr std::size_t count = 7;
}  // namespace special

inline constexpr std::array<std::string_view, special::count> kSpecialTokens = {
    "[S]", "[E]", "[M]", "[CLS]", "[SEP]", "[PAD]", "[UNK]"};

inline constexpr std::string_view kVocabHeader = "HYPEVENTS-VOCAB v1";

/// Dense token <-> id bijection whose first ids are the special tokens.
class Vocab {
 public:
  Vocab();

  /// Adds a token if absent; returns its id.
  TokenId add(std::string_view token);

  std::optional<TokenId> find(std::string_view token) const;
  /// Id of `token`, or [UNK].
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  bool is_special(TokenId id) const noexcept { return id >= 0 && id < TokenId(special::count); }

  std::span<const std::string> tokens() const noexcept { return tokens_; }

  /// Versioned text form: header line, then `token<TAB>id` per line.
  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace hypevents::text
