#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "crossmap/util.hpp"

namespace crossmap {

// Fixed instruction slot budget: 40 content tokens plus CLS and EOS.
constexpr int kMaxInstructionSlots = 42;
constexpr int kMaxContentTokens = 40;

// Lowercase tokens split on whitespace and punctuation.
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  // Dedicated mask id used by the speaker's bidirectional objective; sits
  // right after the reserved range and is never produced by encode().
  static constexpr int kMask = 4;
  static constexpr int kFirstRegularId = 5;

  // Tokens with frequency >= min_count, ids assigned by descending frequency
  // then lexicographic order.
  static Vocabulary build(const std::vector<std::string>& corpus, int min_count = 1);

  int id(const std::string& token) const;          // kUnk when absent
  const std::string& token(int id) const;          // throws on unknown id
  bool is_special(int id) const { return id < kFirstRegularId; }
  int size() const { return static_cast<int>(id_to_token_.size()); }

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // Reserved and mask tokens only.
  Vocabulary();

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct EncodedInstruction {
  std::vector<int> ids;               // length exactly kMaxInstructionSlots
  std::vector<double> attention_mask; // 0 on real tokens, kMaskOff on PAD slots
  int length = 0;                     // real tokens including CLS and EOS
};

// Truncates to 40 content tokens, wraps with CLS/EOS, pads to 42. Total.
EncodedInstruction encode(const Vocabulary& vocab, const std::string& text);

// Strips special tokens and joins with single spaces; UNK renders as a fixed
// placeholder. Throws on ids outside the vocabulary.
std::string decode(const Vocabulary& vocab, const std::vector<int>& ids);

}  // namespace crossmap
