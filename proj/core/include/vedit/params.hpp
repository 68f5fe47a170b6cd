#pragma once

#include "vedit/autodiff.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vedit {

enum class Sublayer { kMsa, kFc1, kFc2, kOther };
enum class TensorRole { kWeight, kBias };

const char* to_string(Sublayer s);

struct ParamInfo {
  std::string name;
  int block = 0;  // 1-based transformer block, 0 for tensors outside any block
  Sublayer sublayer = Sublayer::kOther;
  TensorRole role = TensorRole::kWeight;
};

// Named, ordered parameter tensors. Entries are held as immutable graph
// values, so copying a store is a cheap snapshot: copies share storage until
// an entry is replaced through set(). Trainable copies own fresh leaves that
// optimizers may update in place.
class ParamStore {
 public:
  std::size_t add(ParamInfo info, ad::Matrix value);

  std::size_t size() const { return vars_.size(); }
  const ParamInfo& info(std::size_t i) const { return info_.at(i); }
  const ad::Matrix& value(std::size_t i) const { return vars_.at(i).value(); }
  const ad::Var& var(std::size_t i) const { return vars_.at(i); }
  ad::Var& mutable_var(std::size_t i) { return vars_.at(i); }
  const std::vector<ad::Var>& vars() const { return vars_; }

  /// Replaces entry i with a new constant; other snapshots are unaffected.
  void set(std::size_t i, ad::Matrix value);

  std::size_t index_of(std::string_view name) const;
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t scalar_count() const;

  /// Deep copy whose entries are gradient leaves.
  ParamStore trainable_copy() const;
  /// Deep copy whose entries are constants.
  ParamStore frozen_copy() const;

  bool bit_equal(const ParamStore& other) const;
  /// FNV-1a over names, shapes and raw bytes.
  std::uint64_t hash() const;

 private:
  std::vector<ParamInfo> info_;
  std::vector<ad::Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace vedit
