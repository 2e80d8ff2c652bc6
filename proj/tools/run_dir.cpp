#include "run_dir.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include "rtgformer/io/digest.hpp"

namespace rtgf::cli {

namespace fs = std::filesystem;

RunDir::RunDir(const fs::path& parent, const std::string& command) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  fs::create_directories(parent);
  const std::string base = command + "-" + stamp;
  for (int n = 1;; ++n) {
    path_ = parent / (n == 1 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(path_)) break;
  }
}

void RunDir::add_input(const fs::path& input) { inputs_.emplace_back(input, io::sha256_file(input)); }

void RunDir::write_text(const std::string& name, const std::string& text) const { write_atomic(file(name), text); }

void RunDir::finish() const {
  std::string manifest;
  for (const auto& [p, digest] : inputs_) {
    if (io::sha256_file(p) != digest) throw std::runtime_error("input " + p.string() + " changed during the run");
    manifest += digest + "  input:" + p.string() + "\n";
  }
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(path_)) {
    if (e.is_regular_file() && e.path().filename() != "MANIFEST") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  for (const auto& n : names) manifest += io::sha256_file(path_ / n) + "  " + n + "\n";
  write_atomic(file("MANIFEST"), manifest);
}

void write_atomic(const fs::path& path, const std::string& bytes) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << bytes;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace rtgf::cli
