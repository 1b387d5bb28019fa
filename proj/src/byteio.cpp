#include "nd/byteio.hpp"

#include <zlib.h>

#include <fstream>
#include <iterator>

namespace nd {

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  std::size_t pos = 0;
  while (pos < data.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - pos, 1U << 30));
    crc = ::crc32(crc, data.data() + pos, n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("short write to " + path);
}

}  // namespace nd
