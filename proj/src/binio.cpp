#include "ordl/binio.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

namespace ordl::binio {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  // Write-then-rename so an interrupted run never leaves a truncated artifact
  // that a resume would mistake for a complete one.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw RuntimeFailure("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void Writer::save(const std::filesystem::path& path) const { write_file_atomic(path, buf_); }

Reader Reader::from_file(const std::filesystem::path& path) { return Reader(read_file(path), path.string()); }

void Reader::expect_magic(std::string_view magic) {
  need(magic.size());
  if (std::string_view(data_).substr(pos_, magic.size()) != magic) {
    fail("bad magic, expected \"" + std::string(magic) + "\"");
  }
  pos_ += magic.size();
}

std::string Reader::get_string() {
  const auto n = get<std::uint32_t>();
  need(n);
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

void Reader::fail(std::string_view why) const {
  throw ValidationError(what_ + ": " + std::string(why) + " (offset " + std::to_string(pos_) + ")");
}

}  // namespace ordl::binio
