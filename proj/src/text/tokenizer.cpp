#include "hypevents/text/tokenizer.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "hypevents/core/error.hpp"

namespace hypevents::text {

namespace {

icu::UnicodeString decode_utf8(std::string_view text) {
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  // fromUTF8 substitutes U+FFFD for ill-formed input.
  if (s.indexOf(static_cast<UChar32>(0xFFFD)) >= 0 &&
      text.find("\xEF\xBF\xBD") == std::string_view::npos) {
    throw Error(ErrorCode::parse, "text is not valid UTF-8");
  }
  return s;
}

std::string encode_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

void split_plain(std::string_view segment, std::vector<std::string>& out) {
  const std::string norm = normalize(segment);
  const icu::UnicodeString s = icu::UnicodeString::fromUTF8(norm);
  icu::UnicodeString word;
  auto flush = [&] {
    if (!word.isEmpty()) {
      out.push_back(encode_utf8(word));
      word.remove();
    }
  };
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      flush();
    } else if (u_ispunct(c)) {
      flush();
      out.push_back(encode_utf8(icu::UnicodeString(c)));
    } else {
      word.append(c);
    }
  }
  flush();
}

}  // namespace

std::string normalize(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorCode::io, "ICU NFC normaliser unavailable");
  icu::UnicodeString s = nfc->normalize(decode_utf8(text), status);
  if (U_FAILURE(status)) throw Error(ErrorCode::parse, "NFC normalisation failed");
  s.toLower(icu::Locale::getRoot());
  // Lowercasing can produce decomposed sequences; renormalise.
  s = nfc->normalize(s, status);
  if (U_FAILURE(status)) throw Error(ErrorCode::parse, "NFC normalisation failed");
  return encode_utf8(s);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    // Find the earliest special literal at or after pos.
    std::size_t best = std::string_view::npos;
    std::size_t best_len = 0;
    for (std::string_view sp : kSpecialTokens) {
      const auto at = text.find(sp, pos);
      if (at < best) {
        best = at;
        best_len = sp.size();
      }
    }
    if (best == std::string_view::npos) {
      split_plain(text.substr(pos), out);
      break;
    }
    split_plain(text.substr(pos, best - pos), out);
    out.emplace_back(text.substr(best, best_len));
    pos = best + best_len;
  }
  return out;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const std::string& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

std::string canonical(std::string_view text) {
  std::string out;
  for (const std::string& w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace hypevents::text
