#include "ccr/blob.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace ccr {
namespace {

constexpr char kMagic[4] = {'C', 'C', 'R', 'T'};
constexpr std::uint32_t kMaxHeader = 1u << 16;

static_assert(std::endian::native == std::endian::little,
              "blob I/O assumes a little-endian host");

[[noreturn]] void corrupt(const std::string& what) {
  throw std::runtime_error("blob: " + what);
}

std::string header_text(const Blob& b) {
  std::ostringstream os;
  os << "rank=" << b.extents.size() << ";extents=";
  for (std::size_t i = 0; i < b.extents.size(); ++i) os << (i ? "," : "") << b.extents[i];
  os << ";dtype=" << (b.dtype == DType::kF32 ? "f32" : "i32") << ";name=" << b.name;
  return os.str();
}

std::size_t parse_count(const std::string& field, const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    corrupt("bad " + field + " '" + text + "'");
  }
  return std::stoull(text);
}

void parse_header(const std::string& text, Blob& b) {
  std::size_t rank = 0;
  bool have_rank = false, have_extents = false, have_dtype = false, have_name = false;
  std::string extents_text;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    // name= is last and may contain ';'.
    if (text.compare(pos, 5, "name=") == 0) {
      b.name = text.substr(pos + 5);
      have_name = true;
      break;
    }
    const std::size_t end = text.find(';', pos);
    if (end == std::string::npos) corrupt("header missing field 'name'");
    const std::string item = text.substr(pos, end - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) corrupt("malformed header field '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "rank") {
      rank = parse_count("rank", value);
      have_rank = true;
    } else if (key == "extents") {
      extents_text = value;
      have_extents = true;
    } else if (key == "dtype") {
      if (value == "f32") {
        b.dtype = DType::kF32;
      } else if (value == "i32") {
        b.dtype = DType::kI32;
      } else {
        corrupt("bad dtype '" + value + "'");
      }
      have_dtype = true;
    } else {
      corrupt("unknown header field '" + key + "'");
    }
    pos = end + 1;
  }
  if (!have_rank) corrupt("header missing field 'rank'");
  if (!have_extents) corrupt("header missing field 'extents'");
  if (!have_dtype) corrupt("header missing field 'dtype'");
  if (!have_name) corrupt("header missing field 'name'");
  b.extents.clear();
  if (!extents_text.empty()) {
    std::size_t p = 0;
    while (true) {
      const std::size_t comma = extents_text.find(',', p);
      b.extents.push_back(parse_count("extents", extents_text.substr(p, comma - p)));
      if (comma == std::string::npos) break;
      p = comma + 1;
    }
  }
  if (b.extents.size() != rank) {
    corrupt("bad extents: rank " + std::to_string(rank) + " but " +
            std::to_string(b.extents.size()) + " extents");
  }
}

}  // namespace

Blob make_blob(std::string name, const Tensor& t) {
  Blob b;
  b.name = std::move(name);
  b.dtype = DType::kF32;
  b.extents = t.shape();
  b.f32.reserve(t.numel());
  for (double v : t.data()) b.f32.push_back(static_cast<float>(v));
  return b;
}

Blob make_blob(std::string name, Shape extents, std::vector<std::int32_t> values) {
  if (values.size() != numel(extents)) {
    throw std::invalid_argument("blob: " + std::to_string(values.size()) +
                                " values for extents " + shape_str(extents));
  }
  Blob b;
  b.name = std::move(name);
  b.dtype = DType::kI32;
  b.extents = std::move(extents);
  b.i32 = std::move(values);
  return b;
}

Tensor to_tensor(const Blob& b) {
  std::vector<double> v;
  v.reserve(b.count());
  if (b.dtype == DType::kF32) {
    for (float x : b.f32) v.push_back(x);
  } else {
    for (std::int32_t x : b.i32) v.push_back(x);
  }
  return Tensor(b.extents, std::move(v));
}

void write_blob(std::ostream& os, const Blob& blob) {
  const std::size_t n = blob.count();
  if ((blob.dtype == DType::kF32 ? blob.f32.size() : blob.i32.size()) != n) {
    throw std::invalid_argument("blob '" + blob.name + "': payload does not match extents");
  }
  if (blob.name.find('\0') != std::string::npos) {
    throw std::invalid_argument("blob: name contains NUL");
  }
  const std::string header = header_text(blob);
  const auto len = static_cast<std::uint32_t>(header.size());
  os.write(kMagic, 4);
  os.put(static_cast<char>(kBlobVersion));
  os.write(reinterpret_cast<const char*>(&len), 4);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  const char* payload = blob.dtype == DType::kF32 ? reinterpret_cast<const char*>(blob.f32.data())
                                                  : reinterpret_cast<const char*>(blob.i32.data());
  os.write(payload, static_cast<std::streamsize>(n * 4));
  if (!os) throw std::runtime_error("blob '" + blob.name + "': write failed");
}

bool read_blob(std::istream& is, Blob& blob) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() == 0 && is.eof()) return false;
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) corrupt("bad magic");
  const int version = is.get();
  if (version == std::char_traits<char>::eof()) corrupt("truncated before version");
  if (version != kBlobVersion) corrupt("unsupported version " + std::to_string(version));
  std::uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 4);
  if (is.gcount() != 4) corrupt("truncated header length");
  if (len > kMaxHeader) corrupt("header length " + std::to_string(len) + " too large");
  std::string header(len, '\0');
  is.read(header.data(), len);
  if (static_cast<std::uint32_t>(is.gcount()) != len) corrupt("truncated header");
  parse_header(header, blob);
  const std::size_t n = blob.count();
  char* dst;
  if (blob.dtype == DType::kF32) {
    blob.f32.assign(n, 0.0f);
    blob.i32.clear();
    dst = reinterpret_cast<char*>(blob.f32.data());
  } else {
    blob.i32.assign(n, 0);
    blob.f32.clear();
    dst = reinterpret_cast<char*>(blob.i32.data());
  }
  is.read(dst, static_cast<std::streamsize>(n * 4));
  if (static_cast<std::size_t>(is.gcount()) != n * 4) corrupt("payload length mismatch");
  return true;
}

void write_blob(const std::filesystem::path& path, const Blob& blob) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("blob: cannot open '" + path.string() + "' for writing");
  write_blob(os, blob);
}

Blob read_blob(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("blob: cannot open '" + path.string() + "'");
  Blob b;
  if (!read_blob(is, b)) corrupt("empty file '" + path.string() + "'");
  if (is.peek() != std::char_traits<char>::eof()) {
    corrupt("payload length mismatch (trailing bytes in '" + path.string() + "')");
  }
  return b;
}

}  // namespace ccr
