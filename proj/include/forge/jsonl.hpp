#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace forge {

using json = nlohmann::json;

/// Calls `on_line(line_number, text)` for every line of a file, 1-based.
/// Blank lines are skipped. Throws IoError when the file is unreadable.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(size_t, const std::string&)>& on_line);

/// Parses a whole line-delimited file. Throws ValidationError naming the line
/// on the first malformed entry.
std::vector<json> read_jsonl(const std::filesystem::path& path);

/// One compact JSON object per line, keys in sorted order so the output is
/// byte-stable.
std::string to_jsonl_line(const json& value);

/// Output file that only becomes visible under its final name on commit().
/// Content goes to a sibling temporary which is renamed into place; if the
/// object is destroyed uncommitted the temporary is removed.
class AtomicFile {
 public:
  explicit AtomicFile(std::filesystem::path target);
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;
  ~AtomicFile();

  std::ostream& stream() { return out_; }
  void write_line(const json& value) { out_ << to_jsonl_line(value) << '\n'; }
  void commit();

 private:
  std::filesystem::path target_;
  std::filesystem::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

/// Writes `content` atomically to `target`.
void write_file_atomic(const std::filesystem::path& target, const std::string& content);

std::string read_file(const std::filesystem::path& path);

}  // namespace forge
