#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "softmine/field.hpp"

namespace softmine {

namespace {

constexpr char kMagic[8] = {'S', 'M', 'F', 'I', 'E', 'L', 'D', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_field(std::string& out, const std::string& key, const std::string& value) {
  put_u32(out, static_cast<std::uint32_t>(key.size()));
  out += key;
  put_u32(out, static_cast<std::uint32_t>(value.size()));
  out += value;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  std::string_view bytes(std::size_t n) {
    if (data_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
    std::string_view s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(int width) {
    auto s = bytes(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::string string() {
    const auto n = uint(4);
    if (n > 4096) throw CheckpointError("checkpoint: implausible field length");
    return std::string(bytes(n));
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

template <typename T>
T parse_number(const std::map<std::string, std::string>& fields, const std::string& key) {
  const auto it = fields.find(key);
  if (it == fields.end()) throw CheckpointError("checkpoint: missing layout field '" + key + "'");
  T value{};
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw CheckpointError("checkpoint: bad value for layout field '" + key + "'");
  }
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FieldParams& params) {
  const FieldLayout& l = params.layout;
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kFormatVersion);
  put_u32(out, 6);
  put_field(out, "levels", std::to_string(l.encoding.levels));
  put_field(out, "base_resolution", std::to_string(l.encoding.base_resolution));
  put_field(out, "growth", format_double(l.encoding.growth));
  put_field(out, "features_per_level", std::to_string(l.encoding.features_per_level));
  put_field(out, "hidden_width", std::to_string(l.hidden_width));
  put_field(out, "channels", std::to_string(l.channels));
  put_u64(out, params.values.size());
  for (double v : params.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

FieldParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  Reader r(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));

  if (std::memcmp(r.bytes(sizeof kMagic).data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("checkpoint: bad magic header in '" + path.string() + "'");
  }
  const auto version = r.uint(4);
  if (version != kFormatVersion) throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  const auto count = r.uint(4);
  if (count > 64) throw CheckpointError("checkpoint: implausible field count");
  std::map<std::string, std::string> fields;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string key = r.string();
    fields[key] = r.string();
  }

  EncodingConfig enc;
  enc.levels = parse_number<int>(fields, "levels");
  enc.base_resolution = parse_number<int>(fields, "base_resolution");
  enc.growth = parse_number<double>(fields, "growth");
  enc.features_per_level = parse_number<int>(fields, "features_per_level");
  FieldLayout layout;
  try {
    layout = FieldLayout::make(enc, parse_number<int>(fields, "channels"), parse_number<int>(fields, "hidden_width"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: invalid layout: ") + e.what());
  }

  const auto n = r.uint(8);
  if (n != layout.total) {
    throw CheckpointError("checkpoint: parameter count " + std::to_string(n) + " does not match layout (" +
                          std::to_string(layout.total) + ")");
  }
  FieldParams p;
  p.layout = layout;
  p.values.resize(n);
  for (auto& v : p.values) v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4))));
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return p;
}

}  // namespace softmine
