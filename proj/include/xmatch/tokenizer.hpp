#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xmatch {

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";

// Ordered token list with dense ids. [PAD] must be id 0 and [UNK], [CLS],
// [SEP] must be present.
class Vocabulary {
 public:
  // Throws LoadError naming the offending token on duplicates, empty
  // tokens or missing specials.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(std::string_view token) const;
  // -1 when absent.
  std::int32_t id(std::string_view token) const;

  std::int32_t pad_id() const { return 0; }
  std::int32_t unk_id() const { return unk_; }
  std::int32_t cls_id() const { return cls_; }
  std::int32_t sep_id() const { return sep_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::int32_t unk_ = -1;
  std::int32_t cls_ = -1;
  std::int32_t sep_ = -1;
};

// UTF-8, LF-separated, one token per line; line index is the id.
Vocabulary load_vocab(const std::filesystem::path& path);
void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab);

struct TokenSequence {
  std::vector<std::int32_t> ids;  // length max_len
  std::vector<std::uint8_t> mask;  // 1 for the first true_length positions
  std::size_t true_length = 0;

  std::size_t max_len() const { return ids.size(); }
  std::vector<double> mask_values() const;
  // The first true_length positions only.
  TokenSequence without_padding() const;
};

// Lowercases (when asked), splits on Unicode whitespace and makes every
// punctuation character its own word.
std::vector<std::string> pre_tokenize(std::string_view text, bool lowercase = true);

inline constexpr std::size_t kMaxWordChars = 100;

// Greedy longest-match-first WordPiece over code points. Continuation
// pieces carry a "##" prefix. Any unmatched position, or a word longer than
// kMaxWordChars code points, yields a single [UNK].
std::vector<std::string> wordpiece(std::string_view word, const Vocabulary& vocab);

// [CLS] + pieces (truncated to max_len - 2) + [SEP], padded with [PAD].
TokenSequence encode(std::string_view phrase, const Vocabulary& vocab, std::size_t max_len,
                     bool lowercase = true);

class Tokenizer {
 public:
  Tokenizer(Vocabulary vocab, bool lowercase = true) : vocab_(std::move(vocab)), lowercase_(lowercase) {}

  const Vocabulary& vocab() const { return vocab_; }
  bool lowercase() const { return lowercase_; }

  std::vector<std::string> tokenize(std::string_view phrase) const;
  TokenSequence encode(std::string_view phrase, std::size_t max_len) const {
    return xmatch::encode(phrase, vocab_, max_len, lowercase_);
  }

 private:
  Vocabulary vocab_;
  bool lowercase_;
};

}  // namespace xmatch
