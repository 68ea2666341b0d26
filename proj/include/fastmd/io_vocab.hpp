#pragma once

#include <fstream>
#include <unordered_map>

#include "fastmd/common.hpp"

namespace fastmd {

inline const std::vector<std::string>& reserved_token_strings() {
  static const std::vector<std::string> kReserved = {"<blank>", "<unk>", "<sos/eos>", "<mask>"};
  return kReserved;
}

// Ordered token table with the fixed reserved layout
// 0 = blank, 1 = unk, 2 = sos/eos, 3 = mask.
class Vocabulary {
 public:
  Vocabulary() = default;

  // Builds from the non-reserved tokens; reserved entries are prepended.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    v.tokens_ = reserved_token_strings();
    for (const auto& t : tokens) v.tokens_.push_back(t);
    v.rebuild_index();
    if (v.size() < kNumReserved + 1) throw FormatError("vocabulary needs at least one non-reserved token");
    return v;
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open vocabulary file " + path);
    Vocabulary v;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line_no <= kNumReserved) {
        const std::string& want = reserved_token_strings()[static_cast<size_t>(line_no - 1)];
        if (line != want) {
          throw FormatError(path + ":" + std::to_string(line_no) + ": expected reserved token '" + want +
                            "', got '" + line + "'");
        }
      } else if (line.empty()) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": empty token line");
      }
      v.tokens_.push_back(line);
    }
    if (static_cast<int>(v.tokens_.size()) < kNumReserved + 1) {
      throw FormatError(path + ": vocabulary must list the four reserved tokens plus at least one token");
    }
    v.rebuild_index();
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) out << t << "\n";
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  const std::string& str(int id) const {
    if (id < 0 || id >= size()) throw TokenError("vocabulary id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
  }

  // Unknown strings map to unk.
  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  std::vector<int> ids(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  std::vector<std::string> strs(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(str(i));
    return out;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < tokens_.size(); ++i) {
      auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
      if (!inserted) throw FormatError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace fastmd
