#include "qscore/archive.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "qscore/error.hpp"
#include "qscore/rng.hpp"

namespace qscore {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

namespace {

constexpr std::string_view kMagic = "QSW1";

std::size_t align_up(std::size_t n) { return (n + kArchiveAlignment - 1) / kArchiveAlignment * kArchiveAlignment; }

template <class U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <class U>
U get(std::string_view bytes, std::size_t offset) {
  U v;
  std::memcpy(&v, bytes.data() + offset, sizeof(U));
  return v;
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

[[noreturn]] void corrupt(const std::string& why) { throw Error(ErrorCode::kCorruptArchive, why); }

}  // namespace

std::string serialize_weights(const ModelWeights<float>& weights) {
  audit_shapes(weights);
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  weights.visit([&](const std::string& name, const Tensor<float>& t) {
    const std::size_t length = t.size() * sizeof(float);
    tensors.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"length", length}});
    offset = align_up(offset + length);
  });
  const std::size_t payload_bytes = offset;
  const nlohmann::json header{{"format_version", kArchiveVersion},
                              {"config", weights.config.to_json()},
                              {"payload_bytes", payload_bytes},
                              {"tensors", std::move(tensors)}};
  const std::string header_text = header.dump();

  std::string out;
  out.append(kMagic);
  put<std::uint32_t>(out, kArchiveVersion);
  put<std::uint64_t>(out, header_text.size());
  out.append(header_text);
  out.resize(align_up(out.size()), '\0');

  const std::size_t payload_start = out.size();
  out.resize(payload_start + payload_bytes, '\0');
  std::size_t i = 0;
  const auto& dir = header.at("tensors");
  weights.visit([&](const std::string&, const Tensor<float>& t) {
    std::memcpy(out.data() + payload_start + dir[i]["offset"].get<std::size_t>(), t.data.data(),
                t.size() * sizeof(float));
    ++i;
  });
  put<std::uint32_t>(out, crc32_of(std::string_view(out).substr(payload_start, payload_bytes)));
  return out;
}

ModelWeights<float> deserialize_weights(std::string_view bytes) {
  if (bytes.size() < 16) corrupt("archive shorter than its fixed preamble");
  if (bytes.substr(0, 4) != kMagic) {
    if (bytes.substr(0, 3) == "QSW") {
      throw Error(ErrorCode::kUnsupportedVersion, "magic '" + std::string(bytes.substr(0, 4)) + "'");
    }
    corrupt("bad magic");
  }
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kArchiveVersion) throw Error(ErrorCode::kUnsupportedVersion, "format version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) corrupt("header length exceeds archive size");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("header is not valid JSON: ") + e.what());
  }

  ModelConfig config;
  std::size_t payload_bytes = 0;
  try {
    if (header.at("format_version").get<std::uint32_t>() != kArchiveVersion) {
      throw Error(ErrorCode::kUnsupportedVersion, "header format version " + header.at("format_version").dump());
    }
    config = ModelConfig::from_json(header.at("config"));
    payload_bytes = header.at("payload_bytes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kUnsupportedVersion) throw;
    corrupt(std::string("header config: ") + e.what());
  }

  const std::size_t payload_start = align_up(16 + header_len);
  if (payload_start > bytes.size() || bytes.size() - payload_start != payload_bytes + 4) {
    corrupt("payload is " + std::to_string(bytes.size() < payload_start ? 0 : bytes.size() - payload_start) +
            " bytes, header declares " + std::to_string(payload_bytes) + " plus checksum");
  }
  const std::string_view payload = bytes.substr(payload_start, payload_bytes);
  if (crc32_of(payload) != get<std::uint32_t>(bytes, payload_start + payload_bytes)) corrupt("payload checksum mismatch");

  // Every tensor the config requires must be present with exactly its shape.
  const auto& dir = header.at("tensors");
  if (!dir.is_array()) corrupt("tensor directory is not an array");
  std::unordered_map<std::string, const nlohmann::json*> by_name;
  for (const auto& entry : dir) by_name[entry.value("name", "")] = &entry;

  auto weights = ModelWeights<float>::zeros(config);
  weights.visit([&](const std::string& name, Tensor<float>& t) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorCode::kShapeMismatch, "tensor " + name + " missing from archive");
    const auto& e = *it->second;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t length = 0;
    try {
      if (e.at("dtype").get<std::string>() != "f32") corrupt("tensor " + name + " has unsupported dtype");
      shape = e.at("shape").get<std::vector<std::size_t>>();
      offset = e.at("offset").get<std::size_t>();
      length = e.at("length").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      corrupt("tensor " + name + ": " + ex.what());
    }
    if (shape != t.shape) throw Error(ErrorCode::kShapeMismatch, "tensor " + name);
    if (length != t.size() * sizeof(float)) throw Error(ErrorCode::kShapeMismatch, "tensor " + name + " byte length");
    if (offset % kArchiveAlignment != 0 || offset > payload_bytes || length > payload_bytes - offset) {
      corrupt("tensor " + name + " lies outside the payload");
    }
    std::memcpy(t.data.data(), payload.data() + offset, length);
  });
  if (by_name.size() != tensor_layout(config).size()) {
    throw Error(ErrorCode::kShapeMismatch, "archive holds tensors the config does not declare");
  }
  return weights;
}

void save_weights(const ModelWeights<float>& weights, const std::filesystem::path& path) {
  const std::string bytes = serialize_weights(weights);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

namespace {
std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}
}  // namespace

ModelWeights<float> load_weights(const std::filesystem::path& path) { return deserialize_weights(read_file(path)); }

std::string bytes_fingerprint(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes.data(), bytes.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h.digest()));
  return buf;
}

std::string archive_fingerprint(const std::filesystem::path& path) { return bytes_fingerprint(read_file(path)); }

}  // namespace qscore
