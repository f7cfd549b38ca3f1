#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace slapforge::node {

struct FileEntry {
  std::string content;
  std::string owner;             // user label, or "root" for system files
  bool world_readable = false;   // r-x for everyone, as installed software
  bool operator==(const FileEntry&) const = default;
};

// In-memory filesystem; paths are absolute strings.
class SimFs {
 public:
  // Returns true when the file was created or its content/owner changed.
  bool write(const std::string& path, std::string content, std::string owner, bool world_readable = false) {
    FileEntry e{std::move(content), std::move(owner), world_readable};
    auto it = files_.find(path);
    if (it != files_.end() && it->second == e) return false;
    files_[path] = std::move(e);
    return true;
  }

  void append(const std::string& path, std::string_view text, const std::string& owner) {
    auto& e = files_[path];
    if (e.owner.empty()) e.owner = owner;
    e.content += text;
  }

  const FileEntry* find(const std::string& path) const {
    auto it = files_.find(path);
    return it == files_.end() ? nullptr : &it->second;
  }

  bool exists(const std::string& path) const { return files_.count(path) != 0; }

  std::vector<std::string> list(const std::string& prefix) const {
    std::vector<std::string> out;
    const auto dir = prefix.ends_with("/") ? prefix : prefix + "/";
    for (auto it = files_.lower_bound(dir); it != files_.end() && it->first.starts_with(dir); ++it)
      out.push_back(it->first);
    return out;
  }

  std::size_t remove_tree(const std::string& prefix) {
    auto paths = list(prefix);
    for (const auto& p : paths) files_.erase(p);
    return paths.size();
  }

  const std::map<std::string, FileEntry>& files() const noexcept { return files_; }

  // Writes the tree below `dir`, mirroring absolute paths.
  void export_to(const std::filesystem::path& dir) const {
    for (const auto& [path, e] : files_) {
      auto target = dir / std::filesystem::path(path).relative_path();
      std::filesystem::create_directories(target.parent_path());
      std::ofstream(target, std::ios::binary) << e.content;
    }
  }

 private:
  std::map<std::string, FileEntry> files_;
};

inline bool path_under(std::string_view path, std::string_view root) {
  return path.size() > root.size() && path.starts_with(root) && path[root.size()] == '/';
}

}  // namespace slapforge::node
