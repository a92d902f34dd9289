#include "pmst/vocab.hpp"

#include <algorithm>

namespace pmst {

Vocab::Vocab(std::vector<std::string> languages, int tokens_per_lang)
    : languages_(std::move(languages)), tokens_per_lang_(tokens_per_lang) {
  PMST_CHECK(!languages_.empty(), "vocab: need at least one language");
  PMST_CHECK(tokens_per_lang_ >= 1, "vocab: tokens_per_lang must be positive");
  for (size_t i = 0; i < languages_.size(); ++i)
    for (size_t j = i + 1; j < languages_.size(); ++j)
      PMST_CHECK(languages_[i] != languages_[j], "vocab: duplicate language " + languages_[i]);
  int cursor = kNumSpecials + static_cast<int>(languages_.size());
  for (size_t i = 0; i < languages_.size(); ++i) {
    content_.emplace_back(cursor, cursor + tokens_per_lang_);
    cursor += tokens_per_lang_;
  }
  total_ = cursor;
}

int Vocab::lang_index(const std::string& lang) const {
  for (size_t i = 0; i < languages_.size(); ++i)
    if (languages_[i] == lang) return static_cast<int>(i);
  throw Error("unknown language tag: " + lang);
}

bool Vocab::has_language(const std::string& lang) const {
  return std::find(languages_.begin(), languages_.end(), lang) != languages_.end();
}

std::pair<int, int> Vocab::content_range(const std::string& lang) const {
  return content_[lang_index(lang)];
}

bool Vocab::covers(const std::string& lang) const {
  auto [b, e] = content_range(lang);
  return e > b;
}

int Vocab::content_token(const std::string& lang, int local) const {
  auto [b, e] = content_range(lang);
  PMST_CHECK(b + local < e, "content token out of range for " + lang);
  return b + local;
}

int Vocab::content_local(int token) const {
  int li = classify(token);
  PMST_CHECK(li >= 0, "token is not a content token");
  return token - content_[li].first;
}

int Vocab::classify(int token) const {
  for (size_t i = 0; i < content_.size(); ++i)
    if (token >= content_[i].first && token < content_[i].second)
      return static_cast<int>(i);
  return -1;
}

int Vocab::from_base(int base_token) const {
  if (!filtered_) return base_token;
  if (base_token < 0 || base_token >= static_cast<int>(from_base_.size())) return -1;
  return from_base_[base_token];
}

Vocab Vocab::filter(const std::vector<std::string>& keep) const {
  PMST_CHECK(!keep.empty(), "vocab filter: empty language set");
  PMST_CHECK(!filtered_, "vocab filter: already filtered");
  std::vector<bool> keep_lang(languages_.size(), false);
  for (const auto& k : keep) keep_lang[lang_index(k)] = true;

  Vocab out;
  out.languages_ = languages_;
  out.tokens_per_lang_ = tokens_per_lang_;
  out.filtered_ = true;
  // specials and all tags keep their ids
  int head = kNumSpecials + static_cast<int>(languages_.size());
  for (int t = 0; t < head; ++t) out.to_base_.push_back(t);
  int cursor = head;
  for (size_t i = 0; i < languages_.size(); ++i) {
    if (!keep_lang[i]) {
      out.content_.emplace_back(cursor, cursor);  // empty range
      continue;
    }
    out.content_.emplace_back(cursor, cursor + tokens_per_lang_);
    for (int t = content_[i].first; t < content_[i].second; ++t) out.to_base_.push_back(t);
    cursor += tokens_per_lang_;
  }
  out.total_ = cursor;
  out.from_base_.assign(total_, -1);
  for (size_t n = 0; n < out.to_base_.size(); ++n) out.from_base_[out.to_base_[n]] = static_cast<int>(n);
  return out;
}

bool Vocab::operator==(const Vocab& o) const {
  return languages_ == o.languages_ && tokens_per_lang_ == o.tokens_per_lang_ &&
         content_ == o.content_ && total_ == o.total_ && filtered_ == o.filtered_ &&
         to_base_ == o.to_base_;
}

Vocab Vocab::from_parts(std::vector<std::string> languages, int tokens_per_lang,
                        std::vector<std::pair<int, int>> ranges, std::vector<int> to_base,
                        int total, bool filtered) {
  Vocab v;
  v.languages_ = std::move(languages);
  v.tokens_per_lang_ = tokens_per_lang;
  v.content_ = std::move(ranges);
  v.to_base_ = std::move(to_base);
  v.total_ = total;
  v.filtered_ = filtered;
  if (filtered) {
    int base_total = Vocab(v.languages_, tokens_per_lang).size();
    v.from_base_.assign(base_total, -1);
    for (size_t n = 0; n < v.to_base_.size(); ++n) v.from_base_[v.to_base_[n]] = static_cast<int>(n);
  }
  return v;
}

}  // namespace pmst
