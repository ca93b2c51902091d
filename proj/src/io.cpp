#include "conic/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace conic {

namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint64_t get_le(const std::string& in, std::size_t& pos, int bytes,
                     const fs::path& path) {
  if (pos + static_cast<std::size_t>(bytes) > in.size())
    throw FormatError(path.string() + ": truncated snapshot");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]))
         << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& path, const std::string& bytes) {
  // Write to a temporary and rename so a crash never leaves half a file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_array(const fs::path& path, const std::vector<double>& values,
                 std::vector<std::uint64_t> dims) {
  if (dims.empty()) dims.push_back(values.size());
  std::uint64_t count = 1;
  for (std::uint64_t d : dims) count *= d;
  if (count != values.size()) throw FormatError("write_array: dims do not match value count");
  std::string out = "CRIC";
  put_u32(out, kSnapshotVersion);
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (std::uint64_t d : dims) put_u64(out, d);
  out.reserve(out.size() + 8 * values.size());
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  spit(path, out);
}

ArrayFile read_array(const fs::path& path) {
  const std::string in = slurp(path);
  if (in.size() < 12 || in.compare(0, 4, "CRIC") != 0)
    throw FormatError(path.string() + ": not a CRIC snapshot");
  std::size_t pos = 4;
  const auto version = static_cast<std::uint32_t>(get_le(in, pos, 4, path));
  if (version != kSnapshotVersion)
    throw FormatError(path.string() + ": unsupported snapshot version " +
                      std::to_string(version));
  const auto rank = static_cast<std::uint32_t>(get_le(in, pos, 4, path));
  if (rank == 0 || rank > 8) throw FormatError(path.string() + ": bad rank");
  ArrayFile a;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    a.dims.push_back(get_le(in, pos, 8, path));
    count *= a.dims.back();
  }
  if (in.size() - pos != 8 * count)
    throw FormatError(path.string() + ": payload size does not match dims");
  a.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i)
    a.values[i] = std::bit_cast<double>(get_le(in, pos, 8, path));
  return a;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw FormatError("not a number: '" + s + "'");
  return v;
}

void write_metadata(const fs::path& path, const Metadata& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + " = " + v + "\n";
  spit(path, out);
}

Metadata read_metadata(const fs::path& path) {
  std::istringstream in(slurp(path));
  Metadata meta;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(no) + ": expected key = value");
    meta[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return meta;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_file(const fs::path& path) { return fnv1a64(slurp(path)); }

void write_manifest(const fs::path& dir, const std::vector<std::string>& names, bool complete) {
  std::ostringstream os;
  os << "format " << kSnapshotVersion << "\n";
  os << "status " << (complete ? "complete" : "partial") << "\n";
  for (const std::string& n : names) {
    const std::string bytes = slurp(dir / n);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    os << "file " << n << " " << hex << " " << bytes.size() << "\n";
  }
  spit(dir / "MANIFEST", os.str());
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "MANIFEST";
  if (!fs::exists(path)) throw FormatError(dir.string() + ": no MANIFEST");
  std::istringstream in(slurp(path));
  Manifest m;
  std::string line;
  bool have_format = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "format") {
      ls >> m.version;
      have_format = true;
    } else if (tag == "status") {
      std::string s;
      ls >> s;
      m.complete = s == "complete";
    } else if (tag == "file") {
      ManifestEntry e;
      std::string hex;
      if (!(ls >> e.name >> hex >> e.bytes)) throw FormatError("MANIFEST: malformed file line");
      e.checksum = std::stoull(hex, nullptr, 16);
      m.files.push_back(e);
    } else {
      throw FormatError("MANIFEST: unknown entry '" + tag + "'");
    }
  }
  if (!have_format) throw FormatError("MANIFEST: missing format line");
  if (m.version != kSnapshotVersion)
    throw FormatError("MANIFEST: format version " + std::to_string(m.version) +
                      " does not match " + std::to_string(kSnapshotVersion));
  return m;
}

void verify_manifest(const fs::path& dir, const Manifest& m) {
  for (const ManifestEntry& e : m.files) {
    const fs::path p = dir / e.name;
    if (!fs::exists(p)) throw FormatError("missing file " + e.name);
    const std::string bytes = slurp(p);
    if (bytes.size() != e.bytes || fnv1a64(bytes) != e.checksum)
      throw FormatError("checksum mismatch for " + e.name);
  }
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

CsvWriter::CsvWriter(const fs::path& path, const std::vector<std::string>& header, bool append)
    : path_(path) {
  if (append && fs::exists(path)) return;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << csv_escape(header[i]);
  out << "\r\n";
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw FormatError("cannot append to " + path_.string());
  for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << csv_escape(fields[i]);
  out << "\r\n";
}

void CsvWriter::row(const std::vector<double>& values) {
  std::vector<std::string> f;
  f.reserve(values.size());
  for (double v : values) f.push_back(format_double(v));
  row(f);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  const std::string text = slurp(path);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> cur;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      cur.push_back(field);
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        cur.push_back(field);
        rows.push_back(cur);
      }
      cur.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (any || !field.empty()) {
    cur.push_back(field);
    rows.push_back(cur);
  }
  return rows;
}

}  // namespace conic
