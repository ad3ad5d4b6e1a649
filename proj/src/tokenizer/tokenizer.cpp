#include "xmatch/tokenizer.hpp"

#include <fstream>
#include <sstream>

#include "xmatch/error.hpp"

namespace xmatch {
namespace {

// Decodes UTF-8 leniently: malformed bytes are passed through as U+FFFD.
std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len != 0 && i + len <= s.size();
    for (std::size_t j = 1; ok && j < len; ++j) {
      const auto cc = static_cast<unsigned char>(s[i + j]);
      if ((cc & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode_utf8(std::u32string_view cps) {
  std::string out;
  for (char32_t cp : cps) append_utf8(out, cp);
  return out;
}

// Unicode White_Space property.
bool is_whitespace(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

// ASCII symbols (as BERT's basic tokenizer treats them) plus the common
// Unicode punctuation blocks.
bool is_punctuation(char32_t c) {
  if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
      (c >= 123 && c <= 126)) {
    return true;
  }
  switch (c) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
      return true;
    default:
      break;
  }
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
         (c >= 0x3014 && c <= 0x301F) || (c >= 0xFF01 && c <= 0xFF0F) ||
         (c >= 0xFF1A && c <= 0xFF20) || (c >= 0xFF3B && c <= 0xFF40) ||
         (c >= 0xFF5B && c <= 0xFF65);
}

// Simple case mapping for ASCII, Latin-1, Greek and basic Cyrillic.
char32_t to_lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 32;
  if ((c >= 0xC0 && c <= 0xDE) && c != 0xD7) return c + 32;
  if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return c + 32;
  if (c >= 0x410 && c <= 0x42F) return c + 32;
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const std::string& tok = tokens_[i];
    if (tok.empty()) throw LoadError("vocabulary: empty token at line " + std::to_string(i + 1));
    if (!ids_.emplace(tok, static_cast<std::int32_t>(i)).second) {
      throw LoadError("vocabulary: duplicate token \"" + tok + "\" at line " +
                      std::to_string(i + 1));
    }
  }
  for (std::string_view special : {kPadToken, kUnkToken, kClsToken, kSepToken}) {
    if (!contains(special)) {
      throw LoadError("vocabulary: missing special token " + std::string(special));
    }
  }
  if (id(kPadToken) != 0) {
    throw LoadError("vocabulary: " + std::string(kPadToken) + " must be the first token (id 0)");
  }
  unk_ = id(kUnkToken);
  cls_ = id(kClsToken);
  sep_ = id(kSepToken);
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? -1 : it->second;
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write vocabulary file " + path.string());
  for (const auto& tok : vocab.tokens()) out << tok << '\n';
}

std::vector<double> TokenSequence::mask_values() const {
  return std::vector<double>(mask.begin(), mask.end());
}

TokenSequence TokenSequence::without_padding() const {
  const auto n = static_cast<std::ptrdiff_t>(true_length);
  return TokenSequence{{ids.begin(), ids.begin() + n}, {mask.begin(), mask.begin() + n}, true_length};
}

std::vector<std::string> pre_tokenize(std::string_view text, bool lowercase) {
  std::vector<std::string> words;
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) {
      words.push_back(encode_utf8(current));
      current.clear();
    }
  };
  for (char32_t c : decode_utf8(text)) {
    if (is_whitespace(c)) {
      flush();
    } else if (is_punctuation(c)) {
      flush();
      words.push_back(encode_utf8(std::u32string_view(&c, 1)));
    } else {
      current.push_back(lowercase ? to_lower(c) : c);
    }
  }
  flush();
  return words;
}

std::vector<std::string> wordpiece(std::string_view word, const Vocabulary& vocab) {
  const std::u32string chars = decode_utf8(word);
  if (chars.empty()) return {};
  if (chars.size() > kMaxWordChars) return {std::string(kUnkToken)};
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < chars.size()) {
    std::string match;
    std::size_t end = chars.size();
    for (; end > start; --end) {
      std::string candidate = start > 0 ? "##" : "";
      candidate += encode_utf8(std::u32string_view(chars).substr(start, end - start));
      if (vocab.contains(candidate)) {
        match = std::move(candidate);
        break;
      }
    }
    if (match.empty()) return {std::string(kUnkToken)};
    pieces.push_back(std::move(match));
    start = end;
  }
  return pieces;
}

TokenSequence encode(std::string_view phrase, const Vocabulary& vocab, std::size_t max_len,
                     bool lowercase) {
  if (max_len < 2) throw ConfigError("encode: max_len must be at least 2");
  std::vector<std::int32_t> body;
  for (const std::string& word : pre_tokenize(phrase, lowercase)) {
    for (const std::string& piece : wordpiece(word, vocab)) body.push_back(vocab.id(piece));
  }
  if (body.size() > max_len - 2) body.resize(max_len - 2);
  TokenSequence seq;
  seq.ids.assign(max_len, vocab.pad_id());
  seq.mask.assign(max_len, 0);
  seq.ids[0] = vocab.cls_id();
  std::copy(body.begin(), body.end(), seq.ids.begin() + 1);
  seq.true_length = body.size() + 2;
  seq.ids[seq.true_length - 1] = vocab.sep_id();
  std::fill_n(seq.mask.begin(), seq.true_length, std::uint8_t{1});
  return seq;
}

std::vector<std::string> Tokenizer::tokenize(std::string_view phrase) const {
  std::vector<std::string> out;
  for (const std::string& word : pre_tokenize(phrase, lowercase_)) {
    for (std::string& piece : wordpiece(word, vocab_)) out.push_back(std::move(piece));
  }
  return out;
}

}  // namespace xmatch
