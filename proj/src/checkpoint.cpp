#include "macdiff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace macdiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kBlobMagic[4] = {'M', 'C', 'K', 'B'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 24));
}

std::uint32_t read_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw FormatError("checkpoint blob: truncated");
  const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + pos);
  pos += 4;
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// serializes one tensor record and returns its blob payload
void append_tensor(std::string& blob, const std::string& name, const Mat& m,
                   json& directory) {
  directory[name] = {{"shape", {m.rows, m.cols}}, {"offset", blob.size()}};
  put_u32(blob, static_cast<std::uint32_t>(name.size()));
  blob.append(name);
  put_u32(blob, 2);  // rank
  put_u32(blob, static_cast<std::uint32_t>(m.rows));
  put_u32(blob, static_cast<std::uint32_t>(m.cols));
  std::string payload;
  payload.reserve(m.size() * 4);
  for (double x : m.d) put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  const auto crc =
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(payload.data()),
            static_cast<uInt>(payload.size()));
  blob.append(payload);
  put_u32(blob, static_cast<std::uint32_t>(crc));
}

Mat read_tensor(const std::string& blob, std::size_t& pos, std::string& name_out) {
  const std::uint32_t name_len = read_u32(blob, pos);
  if (pos + name_len > blob.size()) throw FormatError("checkpoint blob: truncated tensor name");
  name_out.assign(blob.data() + pos, name_len);
  pos += name_len;
  const std::uint32_t rank = read_u32(blob, pos);
  if (rank != 2)
    throw FormatError("checkpoint blob: unsupported rank for tensor '" + name_out + "'");
  const std::uint32_t rows = read_u32(blob, pos);
  const std::uint32_t cols = read_u32(blob, pos);
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  if (pos + count * 4 + 4 > blob.size())
    throw FormatError("checkpoint blob: truncated payload for tensor '" + name_out + "'");
  const auto crc_actual =
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(blob.data() + pos),
            static_cast<uInt>(count * 4));
  Mat m(static_cast<int>(rows), static_cast<int>(cols));
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = read_u32(blob, pos);
    m.d[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  const std::uint32_t crc_stored = read_u32(blob, pos);
  if (static_cast<std::uint32_t>(crc_actual) != crc_stored)
    throw FormatError("checkpoint blob: CRC mismatch for tensor '" + name_out + "'");
  return m;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open " + tmp.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw IoError("checkpoint: write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& base) {
  std::string blob;
  blob.append(kBlobMagic, 4);
  put_u32(blob, kFormatVersion);
  put_u32(blob, static_cast<std::uint32_t>(ckpt.params.tensors.size() + ckpt.opt_state.size()));

  json directory = json::object();
  for (const auto& [name, m] : ckpt.params.tensors) append_tensor(blob, name, m, directory);
  for (const auto& [name, m] : ckpt.opt_state) append_tensor(blob, "opt." + name, m, directory);

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["step"] = ckpt.step;
  manifest["opt_step"] = ckpt.opt_step;
  manifest["config"] = ckpt.config;
  manifest["rng_state"] = ckpt.rng_state;
  manifest["tensors"] = std::move(directory);

  // blob first; the manifest acts as the commit marker
  write_file_atomic(fs::path(base.string() + ".bin"), blob);
  write_file_atomic(fs::path(base.string() + ".json"), manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& base) {
  const fs::path json_path(base.string() + ".json");
  const fs::path bin_path(base.string() + ".bin");
  std::ifstream js(json_path);
  if (!js) throw IoError("load_checkpoint: missing " + json_path.string());
  json manifest;
  try {
    js >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("load_checkpoint: malformed manifest: " + std::string(e.what()));
  }
  const auto version = manifest.at("format_version").get<std::uint32_t>();
  if (version != kFormatVersion)
    throw FormatError("load_checkpoint: format version " + std::to_string(version) +
                      " not supported (expected " + std::to_string(kFormatVersion) + ")");

  std::ifstream bs(bin_path, std::ios::binary);
  if (!bs) throw IoError("load_checkpoint: missing " + bin_path.string());
  std::string blob((std::istreambuf_iterator<char>(bs)), std::istreambuf_iterator<char>());
  if (blob.size() < 12 || std::memcmp(blob.data(), kBlobMagic, 4) != 0)
    throw FormatError("load_checkpoint: bad blob magic in " + bin_path.string());
  std::size_t pos = 4;
  const std::uint32_t blob_version = read_u32(blob, pos);
  if (blob_version != kFormatVersion)
    throw FormatError("load_checkpoint: blob format version mismatch");
  const std::uint32_t count = read_u32(blob, pos);

  Checkpoint ckpt;
  ckpt.format_version = static_cast<int>(version);
  ckpt.step = manifest.at("step").get<long>();
  ckpt.opt_step = manifest.value("opt_step", 0L);
  ckpt.config = manifest.value("config", json::object());
  ckpt.rng_state = manifest.value("rng_state", std::string());
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    Mat m = read_tensor(blob, pos, name);
    if (name.starts_with("opt.")) {
      ckpt.opt_state.emplace(name.substr(4), std::move(m));
    } else {
      ckpt.params.tensors.emplace(name, std::move(m));
    }
  }
  // cross-check the manifest directory against what the blob contained
  for (const auto& [name, entry] : manifest.at("tensors").items()) {
    const bool opt = name.starts_with("opt.");
    const auto& pool = opt ? ckpt.opt_state : ckpt.params.tensors;
    const std::string key = opt ? name.substr(4) : name;
    auto it = pool.find(key);
    if (it == pool.end())
      throw FormatError("load_checkpoint: manifest tensor '" + name + "' missing from blob");
    const auto& shape = entry.at("shape");
    if (it->second.rows != shape[0].get<int>() || it->second.cols != shape[1].get<int>())
      throw ShapeError("load_checkpoint: manifest/blob shape mismatch for '" + name + "'");
  }
  return ckpt;
}

void check_param_shapes(const ParamStore& params, const ModelConfig& cfg) {
  std::size_t expected = 0;
  for_each_param_shape(cfg, [&](const std::string& name, int rows, int cols) {
    ++expected;
    auto it = params.tensors.find(name);
    if (it == params.tensors.end())
      throw ShapeError("checkpoint: missing tensor '" + name + "' for this model config");
    if (it->second.rows != rows || it->second.cols != cols)
      throw ShapeError("checkpoint: tensor '" + name + "' has shape " +
                       std::to_string(it->second.rows) + "x" + std::to_string(it->second.cols) +
                       ", config expects " + std::to_string(rows) + "x" + std::to_string(cols));
  });
  if (params.tensors.size() != expected)
    throw ShapeError("checkpoint: tensor count does not match model config");
}

}  // namespace macdiff
