#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dwrec/corpus.hpp"
#include "dwrec/error.hpp"

namespace dwrec {

// Model-side item ids: id k+1 is items[k]; id 0 is padding. Domain ids index
// `domains`, which follows the training corpus catalog.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary from_corpus(const Corpus& corpus) {
    Vocabulary v;
    v.domains_ = corpus.domain_catalog();
    v.items_ = corpus.items();
    for (Corpus::Index i = 0; i < corpus.num_items(); ++i) {
      const auto ds = corpus.item_domains(i);
      v.item_domains_.emplace_back(ds.begin(), ds.end());
    }
    v.reindex();
    return v;
  }

  int vocab_size() const { return static_cast<int>(items_.size()) + 1; }
  std::size_t num_items() const { return items_.size(); }
  const std::vector<std::string>& domains() const { return domains_; }
  const std::vector<std::string>& items() const { return items_; }

  std::optional<std::int32_t> id(const std::string& token) const {
    const auto it = lookup_.find(token);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& token(std::int32_t id) const { return items_.at(static_cast<std::size_t>(id - 1)); }

  const std::vector<std::uint32_t>& domains_of(std::int32_t id) const {
    return item_domains_.at(static_cast<std::size_t>(id - 1));
  }

  std::vector<std::string> domain_names_of(std::int32_t id) const {
    std::vector<std::string> out;
    for (auto d : domains_of(id)) out.push_back(domains_.at(d));
    return out;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.items_ == b.items_ && a.domains_ == b.domains_ && a.item_domains_ == b.item_domains_;
  }

  nlohmann::json to_json() const {
    return {{"items", items_}, {"domains", domains_}, {"item_domains", item_domains_}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.items_ = j.at("items").get<std::vector<std::string>>();
    v.domains_ = j.at("domains").get<std::vector<std::string>>();
    v.item_domains_ = j.at("item_domains").get<std::vector<std::vector<std::uint32_t>>>();
    if (v.item_domains_.size() != v.items_.size()) throw CheckpointError("vocabulary: item/domain length mismatch");
    for (const auto& ds : v.item_domains_)
      for (auto d : ds)
        if (d >= v.domains_.size()) throw CheckpointError("vocabulary: domain index out of range");
    v.reindex();
    return v;
  }

 private:
  void reindex() {
    lookup_.clear();
    for (std::size_t k = 0; k < items_.size(); ++k) lookup_.emplace(items_[k], static_cast<std::int32_t>(k + 1));
  }

  std::vector<std::string> items_;
  std::vector<std::string> domains_;
  std::vector<std::vector<std::uint32_t>> item_domains_;
  std::unordered_map<std::string, std::int32_t> lookup_;
};

}  // namespace dwrec
