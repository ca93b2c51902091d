#pragma once

// On-disk formats.
//
// Snapshot (.cric): "CRIC", u32 version, u32 rank, u64 dims[rank], then the
// values as little-endian IEEE-754 doubles. All integers little-endian.
// Metadata sidecar (.meta): one "key = value" per line.
// MANIFEST: "format <version>", "status <complete|partial>", then one
// "file <name> <fnv1a-64 hex> <bytes>" line per artifact.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace conic {

inline constexpr std::uint32_t kSnapshotVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ArrayFile {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

void write_array(const std::filesystem::path& path, const std::vector<double>& values,
                 std::vector<std::uint64_t> dims = {});
ArrayFile read_array(const std::filesystem::path& path);

using Metadata = std::map<std::string, std::string>;
void write_metadata(const std::filesystem::path& path, const Metadata& meta);
Metadata read_metadata(const std::filesystem::path& path);

/// Round-trip exact decimal form of a double.
std::string format_double(double v);
double parse_double(const std::string& s);

std::uint64_t fnv1a64(const std::string& bytes);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string name;
  std::uint64_t checksum = 0;
  std::uint64_t bytes = 0;
};

struct Manifest {
  std::uint32_t version = kSnapshotVersion;
  bool complete = false;
  std::vector<ManifestEntry> files;
};

/// Checksums every listed file (names relative to dir) and writes MANIFEST.
void write_manifest(const std::filesystem::path& dir, const std::vector<std::string>& names,
                    bool complete);
Manifest read_manifest(const std::filesystem::path& dir);
/// Throws FormatError naming the first file whose checksum or size differs.
void verify_manifest(const std::filesystem::path& dir, const Manifest& m);

/// RFC-4180 CSV with a mandatory header row and CRLF line ends.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
            bool append = false);
  void row(const std::vector<std::string>& fields);
  void row(const std::vector<double>& values);

 private:
  std::filesystem::path path_;
};

std::string csv_escape(const std::string& field);
/// Parses a CSV file written by CsvWriter: header plus rows of fields.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

}  // namespace conic
