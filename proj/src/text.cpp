#include "crossmap/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

#include "crossmap/tensor.hpp"

namespace crossmap {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const unsigned char uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() {
  id_to_token_ = {"<pad>", "<cls>", "<eos>", "<unk>", "<mask>"};
  for (int i = 0; i < static_cast<int>(id_to_token_.size()); ++i)
    token_to_id_[id_to_token_[static_cast<size_t>(i)]] = i;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int min_count) {
  if (corpus.empty()) throw std::invalid_argument("Vocabulary::build: empty corpus");
  std::map<std::string, int> counts;
  for (const std::string& text : corpus)
    for (const std::string& tok : tokenize(text)) counts[tok] += 1;

  std::vector<std::pair<std::string, int>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  for (const auto& [tok, count] : ranked) {
    if (count < min_count) continue;
    if (v.token_to_id_.count(tok)) continue;  // collision with a special literal
    v.token_to_id_[tok] = static_cast<int>(v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw std::invalid_argument("Vocabulary::token: unknown id " + std::to_string(id));
  return id_to_token_[static_cast<size_t>(id)];
}

std::string Vocabulary::to_json() const {
  OrderedJson j;
  j["format_version"] = 1;
  OrderedJson toks = OrderedJson::object();
  for (int i = kFirstRegularId; i < size(); ++i) toks[id_to_token_[static_cast<size_t>(i)]] = i;
  j["tokens"] = std::move(toks);
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  Json j = Json::parse(text);
  if (j.at("format_version").get<int>() != 1)
    throw std::runtime_error("vocab file: unsupported format version");
  std::vector<std::pair<int, std::string>> by_id;
  for (const auto& [tok, id] : j.at("tokens").items())
    by_id.push_back({id.get<int>(), tok});
  std::sort(by_id.begin(), by_id.end());
  Vocabulary v;
  for (const auto& [id, tok] : by_id) {
    if (id != static_cast<int>(v.id_to_token_.size()))
      throw std::runtime_error("vocab file: non-contiguous id " + std::to_string(id));
    v.token_to_id_[tok] = id;
    v.id_to_token_.push_back(tok);
  }
  return v;
}

void Vocabulary::save(const std::string& path) const { write_file(path, to_json()); }

Vocabulary Vocabulary::load(const std::string& path) { return from_json(read_file(path)); }

EncodedInstruction encode(const Vocabulary& vocab, const std::string& text) {
  std::vector<std::string> toks = tokenize(text);
  if (toks.size() > kMaxContentTokens) toks.resize(kMaxContentTokens);

  EncodedInstruction enc;
  enc.ids.reserve(kMaxInstructionSlots);
  enc.ids.push_back(Vocabulary::kCls);
  for (const std::string& tok : toks) enc.ids.push_back(vocab.id(tok));
  enc.ids.push_back(Vocabulary::kEos);
  enc.length = static_cast<int>(enc.ids.size());
  enc.ids.resize(kMaxInstructionSlots, Vocabulary::kPad);
  enc.attention_mask.assign(kMaxInstructionSlots, 0.0);
  for (int i = enc.length; i < kMaxInstructionSlots; ++i)
    enc.attention_mask[static_cast<size_t>(i)] = kMaskOff;
  return enc;
}

std::string decode(const Vocabulary& vocab, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);  // validates the id
    if (id == Vocabulary::kUnk) {
      if (!out.empty()) out += ' ';
      out += tok;  // fixed placeholder
      continue;
    }
    if (vocab.is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

}  // namespace crossmap
