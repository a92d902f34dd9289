#ifndef PMST_VOCAB_HPP
#define PMST_VOCAB_HPP

#include <string>
#include <utility>
#include <vector>

#include "pmst/tensor.hpp"

namespace pmst {

// Token-id space: [pad, bos, eos, unk] specials, one tag per language, then
// one contiguous content range per language. A filtered vocab keeps all
// specials and tags but only the content ranges of the selected languages;
// `to_base` maps ids of this vocab back to the unfiltered id space.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  Vocab() = default;
  Vocab(std::vector<std::string> languages, int tokens_per_lang);

  int size() const { return total_; }
  int num_languages() const { return static_cast<int>(languages_.size()); }
  const std::vector<std::string>& languages() const { return languages_; }
  int tokens_per_lang() const { return tokens_per_lang_; }

  int lang_index(const std::string& lang) const;  // throws on unknown tag
  bool has_language(const std::string& lang) const;
  int lang_tag(const std::string& lang) const { return kNumSpecials + lang_index(lang); }

  // [begin, end) of the language's content tokens; empty if filtered out
  std::pair<int, int> content_range(const std::string& lang) const;
  bool covers(const std::string& lang) const;

  // local id (0..tokens_per_lang) <-> token id in this vocab
  int content_token(const std::string& lang, int local) const;
  int content_local(int token) const;

  // language index owning this content token, or -1 for specials/tags
  int classify(int token) const;
  bool is_content(int token) const { return classify(token) >= 0; }

  // this-vocab id -> unfiltered-vocab id (identity when not filtered)
  int to_base(int token) const { return filtered_ ? to_base_[token] : token; }
  // unfiltered-vocab id -> this-vocab id, -1 if dropped
  int from_base(int base_token) const;
  bool is_filtered() const { return filtered_; }

  // Restrict content ranges to `keep` (throws if empty or unknown);
  // specials and every language tag are always retained.
  Vocab filter(const std::vector<std::string>& keep) const;

  bool operator==(const Vocab& o) const;

  // serialization helpers (used by the checkpoint header)
  std::vector<std::pair<int, int>> ranges() const { return content_; }
  static Vocab from_parts(std::vector<std::string> languages, int tokens_per_lang,
                          std::vector<std::pair<int, int>> ranges,
                          std::vector<int> to_base, int total, bool filtered);

 private:
  std::vector<std::string> languages_;
  int tokens_per_lang_ = 0;
  std::vector<std::pair<int, int>> content_;  // per language, in this id space
  std::vector<int> to_base_;                  // only when filtered
  std::vector<int> from_base_;                // only when filtered; -1 = dropped
  int total_ = 0;
  bool filtered_ = false;
};

}  // namespace pmst

#endif
