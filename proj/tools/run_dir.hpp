#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace rtgf::cli {

/// One command's output directory: <parent>/<command>-YYYYmmdd-HHMMSS, with a
/// numeric suffix when that name is taken. finish() writes MANIFEST with the
/// SHA-256 of every output file and of every declared input, after checking
/// that no input changed while the command ran.
class RunDir {
 public:
  RunDir(const std::filesystem::path& parent, const std::string& command);

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }

  void add_input(const std::filesystem::path& input);
  void write_text(const std::string& name, const std::string& text) const;
  void finish() const;

 private:
  std::filesystem::path path_;
  std::vector<std::pair<std::filesystem::path, std::string>> inputs_;
};

/// Writes via a temporary file and a rename, so readers never see half a file.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace rtgf::cli
