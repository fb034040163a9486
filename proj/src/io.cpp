#include "sarl/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sarl/config.hpp"
#include "sarl/errors.hpp"

namespace sarl::io {
namespace {

using nlohmann::json;

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}
std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
         static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
}
std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint64_t>(get_u32(b, off)) |
         static_cast<std::uint64_t>(get_u32(b, off + 4)) << 32;
}
std::uint32_t get_u32_be(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off + 3]) | static_cast<std::uint32_t>(b[off + 2]) << 8 |
         static_cast<std::uint32_t>(b[off + 1]) << 16 | static_cast<std::uint32_t>(b[off]) << 24;
}
std::int16_t get_i16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::int16_t>(get_u16(b, off));
}
float get_f32(std::span<const std::uint8_t> b, std::size_t off) {
  return std::bit_cast<float>(get_u32(b, off));
}

void put_u16(std::span<std::uint8_t> b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v);
  b[off + 1] = static_cast<std::uint8_t>(v >> 8);
}
void put_u32(std::span<std::uint8_t> b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}
void put_u64(std::span<std::uint8_t> b, std::size_t off, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}
void put_i16(std::span<std::uint8_t> b, std::size_t off, std::int16_t v) {
  put_u16(b, off, static_cast<std::uint16_t>(v));
}
void put_f32(std::span<std::uint8_t> b, std::size_t off, float v) {
  put_u32(b, off, std::bit_cast<std::uint32_t>(v));
}

// Header byte offsets.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffMagic = 344;
constexpr char kMagic[4] = {'n', '+', '1', '\0'};

std::string printable(std::span<const std::uint8_t> b) {
  std::string s;
  for (auto c : b) {
    if (c >= 32 && c < 127) {
      s += static_cast<char>(c);
    } else {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      s += buf;
    }
  }
  return s;
}

struct Token {
  std::string text;
  std::size_t line, column;  // 1-based
};

// Whitespace-separated tokens grouped by non-empty line.
std::vector<std::vector<Token>> tokenize(const std::string& text) {
  std::vector<std::vector<Token>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<Token> row;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      const std::size_t start = i;
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i > start) row.push_back({line.substr(start, i - start), lineno, start + 1});
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

double parse_number(const Token& t, const std::string& file) {
  double v = 0.0;
  const char* first = t.text.data();
  const char* last = first + t.text.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw FormatError(file + ": line " + std::to_string(t.line) + ", column " +
                          std::to_string(t.column) + ": non-numeric token '" + t.text + "'",
                      t.line);
  return v;
}

std::string location(const std::string& file, const Token& t) {
  return file + ": line " + std::to_string(t.line) + ", column " + std::to_string(t.column);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

NiftiImage decode_nifti(std::span<const std::uint8_t> b) {
  if (b.size() < kNiftiHeaderSize)
    throw FormatError("nifti: truncated header (" + std::to_string(b.size()) + " of 348 bytes)",
                      b.size());
  const std::uint32_t sizeof_hdr = get_u32(b, kOffSizeofHdr);
  if (sizeof_hdr != kNiftiHeaderSize) {
    if (get_u32_be(b, kOffSizeofHdr) == kNiftiHeaderSize)
      throw FormatError("nifti: big-endian files are not supported (byte 0)", kOffSizeofHdr);
    throw FormatError("nifti: sizeof_hdr at byte 0 is " + std::to_string(sizeof_hdr) +
                          ", expected 348",
                      kOffSizeofHdr);
  }
  if (std::memcmp(b.data() + kOffMagic, kMagic, 4) != 0)
    throw FormatError("nifti: bad magic \"" + printable(b.subspan(kOffMagic, 4)) +
                          "\" at byte 344, expected \"n+1\"",
                      kOffMagic);
  const std::int16_t dim0 = get_i16(b, kOffDim);
  if (dim0 != 3 && dim0 != 4)
    throw FormatError("nifti: dim[0] = " + std::to_string(dim0) + " at byte 40, expected 3 or 4",
                      kOffDim);
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  for (int i = 0; i < dim0; ++i) {
    const std::int16_t d = get_i16(b, kOffDim + 2 * (i + 1));
    if (d < 1)
      throw FormatError("nifti: dim[" + std::to_string(i + 1) + "] = " + std::to_string(d) +
                            " at byte " + std::to_string(kOffDim + 2 * (i + 1)),
                        kOffDim + 2 * (i + 1));
    dims[i] = static_cast<std::size_t>(d);
  }
  const std::int16_t datatype = get_i16(b, kOffDatatype);
  if (datatype != kNiftiFloat32)
    throw FormatError("nifti: unsupported datatype " + std::to_string(datatype) +
                          " at byte 70, only 16 (float32) is supported",
                      kOffDatatype);
  const std::int16_t bitpix = get_i16(b, kOffBitpix);
  if (bitpix != 32)
    throw FormatError("nifti: bitpix " + std::to_string(bitpix) + " at byte 72, expected 32",
                      kOffBitpix);
  const float vox = get_f32(b, kOffVoxOffset);
  if (!(vox >= static_cast<float>(kNiftiDataOffset)) || vox != std::floor(vox) || vox > 1e9f)
    throw FormatError("nifti: invalid vox_offset " + fmt17(vox) + " at byte 108", kOffVoxOffset);
  const auto data_off = static_cast<std::size_t>(vox);

  const auto [h, w, z, n] = dims;
  const std::size_t count = h * w * z * n;
  if (b.size() < data_off + 4 * count)
    throw FormatError("nifti: truncated data, expected " + std::to_string(data_off + 4 * count) +
                          " bytes but the file ends at byte " + std::to_string(b.size()),
                      b.size());

  float slope = get_f32(b, kOffSclSlope);
  float inter = get_f32(b, kOffSclInter);
  const bool scaled = std::isfinite(slope) && slope != 0.0f && !(slope == 1.0f && inter == 0.0f);

  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  for (int i = 0; i < 3; ++i) {
    const float p = get_f32(b, kOffPixdim + 4 * (i + 1));
    if (std::isfinite(p) && p > 0.0f) spacing[i] = p;
  }

  Volume4D vol(h, w, z, n, spacing);
  auto out = vol.data();
  std::size_t off = data_off;
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t iz = 0; iz < z; ++iz)
      for (std::size_t iw = 0; iw < w; ++iw)
        for (std::size_t ih = 0; ih < h; ++ih, off += 4) {
          double v = get_f32(b, off);
          if (scaled) v = static_cast<double>(slope) * v + static_cast<double>(inter);
          out[vol.index(ih, iw, iz, in)] = v;
        }

  NiftiImage img;
  img.volume = std::move(vol);
  img.header.assign(b.begin(), b.begin() + kNiftiHeaderSize);
  return img;
}

NiftiImage read_nifti(const fs::path& path) {
  try {
    return decode_nifti(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.location());
  }
}

std::vector<std::uint8_t> encode_nifti(const Volume4D& vol,
                                       std::span<const std::uint8_t> header_template) {
  const std::array<std::size_t, 4> dims{vol.height(), vol.width(), vol.slices(), vol.channels()};
  for (auto d : dims)
    if (d < 1 || d > 32767) throw DataError("nifti: dimension " + std::to_string(d) + " out of range");
  if (!header_template.empty() && header_template.size() != kNiftiHeaderSize)
    throw UsageError("nifti: header template must be 348 bytes");

  std::vector<std::uint8_t> bytes(kNiftiDataOffset + 4 * vol.size(), 0);
  std::span<std::uint8_t> b(bytes);
  if (!header_template.empty()) {
    std::copy(header_template.begin(), header_template.end(), bytes.begin());
  } else {
    put_f32(b, kOffPixdim, 1.0f);  // qfac
    b[kOffXyztUnits] = 2 | 8;      // mm, s
  }
  put_u32(b, kOffSizeofHdr, kNiftiHeaderSize);
  put_i16(b, kOffDim, 4);
  for (int i = 0; i < 4; ++i) put_i16(b, kOffDim + 2 * (i + 1), static_cast<std::int16_t>(dims[i]));
  for (int i = 5; i < 8; ++i) put_i16(b, kOffDim + 2 * i, 1);
  put_i16(b, kOffDatatype, kNiftiFloat32);
  put_i16(b, kOffBitpix, 32);
  for (int i = 0; i < 3; ++i)
    put_f32(b, kOffPixdim + 4 * (i + 1), static_cast<float>(vol.spacing()[i]));
  if (header_template.empty()) put_f32(b, kOffPixdim + 16, 1.0f);
  put_f32(b, kOffVoxOffset, static_cast<float>(kNiftiDataOffset));
  put_f32(b, kOffSclSlope, 1.0f);
  put_f32(b, kOffSclInter, 0.0f);
  std::memcpy(bytes.data() + kOffMagic, kMagic, 4);
  // Bytes 348..351: empty extension flag.

  const auto src = vol.data();
  std::size_t off = kNiftiDataOffset;
  for (std::size_t in = 0; in < dims[3]; ++in)
    for (std::size_t iz = 0; iz < dims[2]; ++iz)
      for (std::size_t iw = 0; iw < dims[1]; ++iw)
        for (std::size_t ih = 0; ih < dims[0]; ++ih, off += 4)
          put_f32(b, off, static_cast<float>(src[vol.index(ih, iw, iz, in)]));
  return bytes;
}

void write_nifti(const Volume4D& vol, const fs::path& path,
                 std::span<const std::uint8_t> header_template) {
  write_bytes(path, encode_nifti(vol, header_template));
}

// ---------------------------------------------------------------------------

GradientTable parse_bvalbvec(const std::string& bval_text, const std::string& bvec_text) {
  const std::string bval_name = "bvals", bvec_name = "bvecs";
  std::vector<double> bvals;
  std::vector<Token> bval_tokens;
  for (const auto& row : tokenize(bval_text))
    for (const auto& t : row) {
      const double v = parse_number(t, bval_name);
      if (v < 0.0) throw FormatError(location(bval_name, t) + ": negative b-value", t.line);
      bvals.push_back(v);
      bval_tokens.push_back(t);
    }
  if (bvals.empty()) throw FormatError("bvals: no values", 1);

  const auto rows = tokenize(bvec_text);
  if (rows.size() != 3)
    throw FormatError("bvecs: expected 3 rows (x, y, z), found " + std::to_string(rows.size()),
                      rows.empty() ? 1 : rows.back().front().line);
  for (const auto& row : rows)
    if (row.size() != bvals.size())
      throw FormatError("bvecs: line " + std::to_string(row.front().line) + " has " +
                            std::to_string(row.size()) + " values but bvals has " +
                            std::to_string(bvals.size()),
                        row.front().line);

  std::vector<Vec3> dirs(bvals.size());
  for (std::size_t i = 0; i < bvals.size(); ++i) {
    Vec3 v;
    for (int a = 0; a < 3; ++a) v[a] = parse_number(rows[a][i], bvec_name);
    if (bvals[i] <= GradientTable::kB0Threshold) {
      dirs[i] = Vec3::Zero();
      continue;
    }
    const double norm = v.norm();
    if (std::abs(norm - 1.0) > kBvecNormTolerance)
      throw FormatError(location(bvec_name, rows[0][i]) + ": direction " + std::to_string(i) +
                            " has norm " + fmt17(norm) + ", outside [0.9, 1.1]",
                        rows[0][i].line);
    dirs[i] = v / norm;
  }
  return GradientTable(std::move(bvals), std::move(dirs));
}

GradientTable read_bvalbvec(const fs::path& bval_path, const fs::path& bvec_path) {
  const std::string bval = read_text(bval_path);
  const std::string bvec = read_text(bvec_path);
  try {
    return parse_bvalbvec(bval, bvec);
  } catch (const FormatError& e) {
    throw FormatError(bval_path.string() + " / " + bvec_path.string() + ": " + e.what(),
                      e.location());
  }
}

void write_bvalbvec(const GradientTable& table, const fs::path& bval_path,
                    const fs::path& bvec_path) {
  std::string bval, bvec;
  for (std::size_t i = 0; i < table.size(); ++i) bval += (i ? " " : "") + fmt17(table.bval(i));
  bval += '\n';
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < table.size(); ++i) bvec += (i ? " " : "") + fmt17(table.dir(i)[a]);
    bvec += '\n';
  }
  write_text(bval_path, bval);
  write_text(bvec_path, bvec);
}

// ---------------------------------------------------------------------------

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  model::check_layout(ckpt.params, ckpt.model);
  std::vector<std::uint8_t> blob(8 * ckpt.params.total_values());
  json arrays = json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.params) {
    arrays.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset},
                      {"count", t.values.size()}});
    for (double v : t.values) {
      put_u64(blob, 8 * offset, std::bit_cast<std::uint64_t>(v));
      ++offset;
    }
  }
  json dirs = json::array();
  for (const auto& d : ckpt.input_dirs) dirs.push_back({d[0], d[1], d[2]});

  json manifest = {{"format", kCheckpointFormat},
                   {"version", kCheckpointVersion},
                   {"model", config::to_json(ckpt.model)},
                   {"train", config::to_json(ckpt.train)},
                   {"seed", ckpt.seed},
                   {"epoch", ckpt.epoch},
                   {"metrics", ckpt.metrics},
                   {"input_dirs", dirs},
                   {"blob", {{"file", "params.bin"}, {"bytes", blob.size()},
                             {"sha256", sha256_hex(blob)}}},
                   {"arrays", arrays}};
  fs::create_directories(dir);
  write_bytes(dir / "params.bin", blob);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": invalid JSON: " + e.what());
  }
  try {
    if (m.at("format").get<std::string>() != kCheckpointFormat)
      throw FormatError(manifest_path.string() + ": not a checkpoint manifest");
    const int version = m.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw MigrationError(manifest_path.string() + ": checkpoint version " +
                           std::to_string(version) + " cannot be loaded by this build (expects " +
                           std::to_string(kCheckpointVersion) + "); re-export it");

    Checkpoint c;
    c.model = config::model_from_json(m.at("model"));
    c.train = config::train_from_json(m.at("train"));
    c.seed = m.at("seed").get<std::uint64_t>();
    c.epoch = m.at("epoch").get<std::size_t>();
    c.metrics = m.at("metrics");
    for (const auto& d : m.at("input_dirs")) {
      const auto v = d.get<std::array<double, 3>>();
      c.input_dirs.emplace_back(v[0], v[1], v[2]);
    }

    const auto& blob_info = m.at("blob");
    const fs::path blob_path = dir / blob_info.at("file").get<std::string>();
    const auto blob = read_bytes(blob_path);
    if (blob.size() != blob_info.at("bytes").get<std::size_t>())
      throw CorruptionError(blob_path.string() + ": size " + std::to_string(blob.size()) +
                                " does not match the manifest",
                            blob.size());
    if (sha256_hex(blob) != blob_info.at("sha256").get<std::string>())
      throw CorruptionError(blob_path.string() + ": SHA-256 does not match the manifest");

    c.params = model::make_parameters(c.model);
    const auto& arrays = m.at("arrays");
    if (arrays.size() != c.params.size())
      throw FormatError(manifest_path.string() + ": array count does not match the model");
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      auto& t = c.params[i];
      const auto& a = arrays[i];
      const auto off = a.at("offset").get<std::size_t>();
      const auto count = a.at("count").get<std::size_t>();
      if (a.at("name").get<std::string>() != t.name || a.at("shape").get<ad::Shape>() != t.shape ||
          count != t.values.size())
        throw FormatError(manifest_path.string() + ": array '" + a.at("name").get<std::string>() +
                          "' does not match the model layout");
      if ((off + count) * 8 > blob.size())
        throw CorruptionError(blob_path.string() + ": array '" + t.name + "' exceeds the blob",
                              off * 8);
      for (std::size_t k = 0; k < count; ++k)
        t.values[k] = std::bit_cast<double>(get_u64(blob, 8 * (off + k)));
    }
    return c;
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_pgm(std::span<const double> map, std::size_t h, std::size_t w,
                                     double lo, double hi) {
  if (!(lo < hi)) throw UsageError("render: window requires lo < hi");
  if (map.size() != h * w) throw DataError("render: map size does not match " +
                                           std::to_string(h) + "x" + std::to_string(w));
  const std::string head = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.reserve(head.size() + map.size());
  for (double v : map) {
    double t = (v - lo) / (hi - lo);
    if (!(t > 0.0)) t = 0.0;
    if (t > 1.0) t = 1.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * t)));
  }
  return out;
}

void render_map(std::span<const double> map, std::size_t h, std::size_t w, const fs::path& path,
                double lo, double hi) {
  write_bytes(path, encode_pgm(map, h, w, lo, hi));
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_bytes(path)); }

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

std::string read_text(const fs::path& path) {
  const auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace sarl::io
