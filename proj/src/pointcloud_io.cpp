#include "srkd/core.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace srkd {
namespace {

constexpr char kBinaryMagic[4] = {'P', 'C', 'B', '1'};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

[[noreturn]] void parse_fail(const std::string& id, std::size_t line, const std::string& what) {
  throw Error(ErrorKind::Parse, (id.empty() ? std::string("cloud") : id) + ": line " + std::to_string(line) + ": " + what);
}

std::uint32_t header_field(const std::string& token, const char* key, const std::string& id) {
  const std::string prefix = std::string(key) + "=";
  if (token.rfind(prefix, 0) != 0) parse_fail(id, 1, "expected " + prefix + "<n>, got '" + token + "'");
  std::uint32_t value = 0;
  const char* first = token.data() + prefix.size();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) parse_fail(id, 1, "malformed header value '" + token + "'");
  return value;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFFu));
  out.push_back(static_cast<char>((v >> 8) & 0xFFu));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& id) : bytes_(bytes), id_(id) {}

  std::uint64_t get(int width, std::size_t record) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size())
      throw Error(ErrorKind::Parse, id_ + ": truncated binary cloud at record " + std::to_string(record));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::string id_;
  std::size_t pos_ = 4;
};

}  // namespace

std::string format_cloud_text(const PointCloud& cloud) {
  cloud.validate();
  std::string out = "PCTXT v1 N=" + std::to_string(cloud.size()) + " D=" + std::to_string(cloud.feature_dim()) +
                    " C=" + std::to_string(cloud.n_classes) + "\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
    out += ' ';
  };
  for (Eigen::Index i = 0; i < cloud.positions.rows(); ++i) {
    for (int k = 0; k < 3; ++k) put(cloud.positions(i, k));
    for (Eigen::Index k = 0; k < cloud.features.cols(); ++k) put(cloud.features(i, k));
    out += std::to_string(cloud.labels[static_cast<std::size_t>(i)]);
    out += '\n';
  }
  return out;
}

PointCloud parse_cloud_text(const std::string& text, const std::string& id) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) parse_fail(id, 1, "missing header");
  std::istringstream header(line);
  std::string magic, version, tn, td, tc, extra;
  header >> magic >> version >> tn >> td >> tc;
  if (magic != "PCTXT" || version != "v1") parse_fail(id, 1, "expected 'PCTXT v1' header");
  if (header >> extra) parse_fail(id, 1, "trailing header token '" + extra + "'");
  const std::uint32_t n = header_field(tn, "N", id);
  const std::uint32_t d = header_field(td, "D", id);
  const std::uint32_t c = header_field(tc, "C", id);

  PointCloud cloud;
  cloud.id = id;
  cloud.n_classes = c;
  cloud.positions.resize(n, 3);
  cloud.features.resize(n, d);
  cloud.labels.resize(n);

  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t line_no = i + 2;
    if (!std::getline(in, line)) parse_fail(id, line_no, "expected " + std::to_string(n) + " records");
    std::istringstream rec(line);
    std::string token;
    for (std::uint32_t k = 0; k < 3 + d; ++k) {
      if (!(rec >> token)) parse_fail(id, line_no, "too few fields");
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      if (ec != std::errc() || ptr != token.data() + token.size())
        parse_fail(id, line_no, "malformed number '" + token + "'");
      if (!std::isfinite(v)) parse_fail(id, line_no, "non-finite value");
      if (k < 3)
        cloud.positions(i, k) = v;
      else
        cloud.features(i, k - 3) = v;
    }
    if (!(rec >> token)) parse_fail(id, line_no, "missing label");
    unsigned label = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), label);
    if (ec != std::errc() || ptr != token.data() + token.size()) parse_fail(id, line_no, "malformed label '" + token + "'");
    if (label != kIgnoreLabel && label >= c)
      parse_fail(id, line_no, "label " + std::to_string(label) + " >= C=" + std::to_string(c));
    cloud.labels[i] = static_cast<Label>(label);
    if (rec >> token) parse_fail(id, line_no, "too many fields");
  }
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) parse_fail(id, n + 2, "unexpected trailing record");
  }
  if (n == 0) parse_fail(id, 1, "N must be >= 1");
  return cloud;
}

std::string format_cloud_binary(const PointCloud& cloud) {
  cloud.validate();
  std::string out(kBinaryMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  put_u32(out, static_cast<std::uint32_t>(cloud.feature_dim()));
  put_u32(out, cloud.n_classes);
  for (Eigen::Index i = 0; i < cloud.positions.rows(); ++i) {
    for (int k = 0; k < 3; ++k) put_f64(out, cloud.positions(i, k));
    for (Eigen::Index k = 0; k < cloud.features.cols(); ++k) put_f64(out, cloud.features(i, k));
    put_u16(out, cloud.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

PointCloud parse_cloud_binary(const std::string& bytes, const std::string& id) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kBinaryMagic, 4) != 0)
    throw Error(ErrorKind::Parse, id + ": missing PCB1 header");
  ByteReader reader(bytes, id);
  const auto n = static_cast<std::uint32_t>(reader.get(4, 0));
  const auto d = static_cast<std::uint32_t>(reader.get(4, 0));
  const auto c = static_cast<std::uint32_t>(reader.get(4, 0));
  if (n == 0) throw Error(ErrorKind::Parse, id + ": N must be >= 1");
  const std::size_t record_bytes = 8 * (3 + static_cast<std::size_t>(d)) + 2;
  if (reader.remaining() != record_bytes * n)
    throw Error(ErrorKind::Parse, id + ": payload size does not match header (N=" + std::to_string(n) + ")");

  PointCloud cloud;
  cloud.id = id;
  cloud.n_classes = c;
  cloud.positions.resize(n, 3);
  cloud.features.resize(n, d);
  cloud.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t k = 0; k < 3 + d; ++k) {
      const double v = std::bit_cast<double>(reader.get(8, i));
      if (!std::isfinite(v)) throw Error(ErrorKind::Parse, id + ": record " + std::to_string(i) + ": non-finite value");
      if (k < 3)
        cloud.positions(i, k) = v;
      else
        cloud.features(i, k - 3) = v;
    }
    const auto label = static_cast<Label>(reader.get(2, i));
    if (label != kIgnoreLabel && label >= c)
      throw Error(ErrorKind::Parse, id + ": record " + std::to_string(i) + ": label " + std::to_string(label) +
                                        " >= C=" + std::to_string(c));
    cloud.labels[i] = label;
  }
  return cloud;
}

PointCloud read_cloud(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string id = path.stem().string();
  if (path.extension() == ".pctxt") return parse_cloud_text(bytes, id);
  if (path.extension() == ".pcbin") return parse_cloud_binary(bytes, id);
  throw Error(ErrorKind::Io, "unknown point cloud extension '" + path.extension().string() + "'");
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  if (path.extension() == ".pctxt")
    write_file(path, format_cloud_text(cloud));
  else if (path.extension() == ".pcbin")
    write_file(path, format_cloud_binary(cloud));
  else
    throw Error(ErrorKind::Io, "unknown point cloud extension '" + path.extension().string() + "'");
}

}  // namespace srkd
