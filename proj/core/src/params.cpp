#include "vedit/params.hpp"

#include <cstring>
#include <stdexcept>

namespace vedit {

const char* to_string(Sublayer s) {
  switch (s) {
    case Sublayer::kMsa: return "msa";
    case Sublayer::kFc1: return "fc1";
    case Sublayer::kFc2: return "fc2";
    case Sublayer::kOther: return "other";
  }
  return "?";
}

std::size_t ParamStore::add(ParamInfo info, ad::Matrix value) {
  if (index_.count(info.name)) throw std::invalid_argument("duplicate parameter: " + info.name);
  const std::size_t i = vars_.size();
  index_.emplace(info.name, i);
  info_.push_back(std::move(info));
  vars_.push_back(ad::Var::constant(std::move(value)));
  return i;
}

void ParamStore::set(std::size_t i, ad::Matrix value) {
  const ad::Matrix& cur = vars_.at(i).value();
  if (value.rows() != cur.rows() || value.cols() != cur.cols()) {
    throw std::invalid_argument("shape mismatch setting parameter " + info_[i].name);
  }
  vars_[i] = ad::Var::constant(std::move(value));
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto i = find(name);
  if (!i) throw std::out_of_range("unknown parameter: " + std::string(name));
  return *i;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += static_cast<std::size_t>(v.size());
  return n;
}

ParamStore ParamStore::trainable_copy() const {
  ParamStore out = *this;
  for (auto& v : out.vars_) v = ad::Var::leaf(v.value());
  return out;
}

ParamStore ParamStore::frozen_copy() const {
  ParamStore out = *this;
  for (auto& v : out.vars_) v = ad::Var::constant(v.value());
  return out;
}

bool ParamStore::bit_equal(const ParamStore& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (info_[i].name != other.info_[i].name) return false;
    const auto& a = value(i);
    const auto& b = other.value(i);
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0) return false;
  }
  return true;
}

std::uint64_t ParamStore::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t i = 0; i < size(); ++i) {
    mix(info_[i].name.data(), info_[i].name.size());
    const auto& m = value(i);
    const std::int64_t shape[2] = {m.rows(), m.cols()};
    mix(shape, sizeof(shape));
    mix(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  return h;
}

}  // namespace vedit
