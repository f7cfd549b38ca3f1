#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace slapforge {

// Insertion-ordered string-keyed map. Lookups are linear; profile sections
// and option lists stay small.
template <typename V>
class OrderedMap {
 public:
  using value_type = std::pair<std::string, V>;
  using iterator = typename std::vector<value_type>::iterator;
  using const_iterator = typename std::vector<value_type>::const_iterator;

  OrderedMap() = default;
  OrderedMap(std::initializer_list<value_type> init) {
    for (auto& kv : init) set(kv.first, kv.second);
  }

  iterator begin() { return items_.begin(); }
  iterator end() { return items_.end(); }
  const_iterator begin() const { return items_.begin(); }
  const_iterator end() const { return items_.end(); }

  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

  const_iterator find(const std::string& key) const {
    return std::find_if(items_.begin(), items_.end(),
                        [&](const value_type& kv) { return kv.first == key; });
  }
  iterator find(const std::string& key) {
    return std::find_if(items_.begin(), items_.end(),
                        [&](const value_type& kv) { return kv.first == key; });
  }
  bool contains(const std::string& key) const { return find(key) != end(); }

  const V* get(const std::string& key) const {
    auto it = find(key);
    return it == end() ? nullptr : &it->second;
  }
  V* get(const std::string& key) {
    auto it = find(key);
    return it == end() ? nullptr : &it->second;
  }

  // Overwrites in place (keeping position) or appends.
  V& set(const std::string& key, V value) {
    if (auto* v = get(key)) {
      *v = std::move(value);
      return *v;
    }
    items_.emplace_back(key, std::move(value));
    return items_.back().second;
  }

  // Appends only when absent; returns false on duplicates.
  bool insert(const std::string& key, V value) {
    if (contains(key)) return false;
    items_.emplace_back(key, std::move(value));
    return true;
  }

  V& operator[](const std::string& key) {
    if (auto* v = get(key)) return *v;
    items_.emplace_back(key, V{});
    return items_.back().second;
  }

  bool erase(const std::string& key) {
    auto it = find(key);
    if (it == end()) return false;
    items_.erase(it);
    return true;
  }

  bool operator==(const OrderedMap&) const = default;

 private:
  std::vector<value_type> items_;
};

}  // namespace slapforge
