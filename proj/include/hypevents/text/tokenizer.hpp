#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hypevents/text/vocab.hpp"

namespace hypevents::text {

// Normalisation convention: Unicode NFC, full lowercase, whitespace-delimited
// words with every punctuation character split off as its own token. The
// special-token literals ([S], [CLS], ...) are recognised verbatim before
// normalisation and survive as single tokens.

/// NFC + lowercase of `text`. Invalid UTF-8 raises a parse error.
std::string normalize(std::string_view text);

/// Normalised surface tokens of `text`.
std::vector<std::string> split_words(std::string_view text);

/// Ids of split_words(text); out-of-vocabulary words map to [UNK].
std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab);

/// Single-space join of the token strings.
std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab);

/// Normal form of `text`: split_words joined by single spaces.
std::string canonical(std::string_view text);

}  // namespace hypevents::text
