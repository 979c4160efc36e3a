#include "toydiff/io.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace toydiff {

namespace {

constexpr char kMagic[8] = {'T', 'O', 'Y', 'D', 'I', 'F', 'F', 'W'};
constexpr uint32_t kFormatVersion = 1;

void append_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32(const std::string& s, size_t& off) {
  check(off + 4 <= s.size(), "weights: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[off++])) << (8 * i);
  return v;
}

uint64_t read_u64(const std::string& s, size_t& off) {
  check(off + 8 <= s.size(), "weights: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(s[off++])) << (8 * i);
  return v;
}

uint32_t crc_of(const void* data, size_t n) {
  return static_cast<uint32_t>(
      crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

std::string tensor_bytes(const Tensor<float>& t) {
  std::string out(t.data.size() * sizeof(float), '\0');
  std::memcpy(out.data(), t.data.data(), out.size());
  return out;
}

}  // namespace

void atomic_write(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    check(f.good(), "atomic_write: cannot open " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    check(f.good(), "atomic_write: write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "read_file: cannot open " + path);
  std::string out((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return out;
}

uint32_t weights_checksum(const DenoiserParams<float>& params) {
  uint32_t crc = static_cast<uint32_t>(crc32(0L, Z_NULL, 0));
  for (const auto& t : params.tensors)
    crc = static_cast<uint32_t>(crc32(crc, reinterpret_cast<const Bytef*>(t->data.data()),
                                      static_cast<uInt>(t->data.size() * sizeof(float))));
  return crc;
}

std::string serialize_weights(const DenoiserParams<float>& params,
                              const NoiseSchedule& schedule) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["model"] = {
      {"image", params.cfg.image},       {"channels", params.cfg.channels},
      {"patch", params.cfg.patch},       {"d_model", params.cfg.d_model},
      {"n_blocks", params.cfg.n_blocks}, {"n_heads", params.cfg.n_heads},
      {"d_ff", params.cfg.d_ff},         {"time_dim", params.cfg.time_dim}};
  header["schedule"] = {{"kind", "cosine"}, {"T_train", schedule.T_train}, {"s", schedule.s}};
  header["rng"] = {{"name", "philox4x32-10"}, {"version", 1}};
  std::vector<std::string> vocab_names;
  for (int i = 0; i < vocab::kSize; ++i) vocab_names.push_back(vocab::name(i));
  header["vocabulary"] = vocab_names;
  header["tensors"] = nlohmann::json::array();
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    const Tensor<float>& t = *params.tensors[i];
    header["tensors"].push_back(
        {{"name", params.names[i]},
         {"shape", t.shape},
         {"crc32", crc_of(t.data.data(), t.data.size() * sizeof(float))}});
  }
  std::string head = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  append_u32(out, kFormatVersion);
  append_u64(out, head.size());
  out += head;
  for (const auto& t : params.tensors) out += tensor_bytes(*t);
  return out;
}

WeightsBundle deserialize_weights(const std::string& bytes) {
  check(bytes.size() >= sizeof(kMagic) && std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0,
        "weights: bad magic");
  size_t off = sizeof(kMagic);
  uint32_t version = read_u32(bytes, off);
  check(version == kFormatVersion, "weights: unsupported format version");
  uint64_t head_len = read_u64(bytes, off);
  check(off + head_len <= bytes.size(), "weights: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(off, head_len));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("weights: malformed header: ") + e.what());
  }
  off += head_len;

  WeightsBundle out;
  const auto& m = header.at("model");
  out.params.cfg.image = m.at("image");
  out.params.cfg.channels = m.at("channels");
  out.params.cfg.patch = m.at("patch");
  out.params.cfg.d_model = m.at("d_model");
  out.params.cfg.n_blocks = m.at("n_blocks");
  out.params.cfg.n_heads = m.at("n_heads");
  out.params.cfg.d_ff = m.at("d_ff");
  out.params.cfg.time_dim = m.at("time_dim");
  out.params.cfg.validate();
  check(header.at("schedule").at("kind") == "cosine", "weights: unknown schedule kind");
  out.schedule = NoiseSchedule::cosine(header.at("schedule").at("T_train"),
                                       header.at("schedule").at("s"));
  check(header.at("rng").at("name") == "philox4x32-10" && header.at("rng").at("version") == 1,
        "weights: unknown rng identifier");

  for (const auto& meta : header.at("tensors")) {
    std::vector<int> shape = meta.at("shape").get<std::vector<int>>();
    size_t n = static_cast<size_t>(Tensor<float>::numel_of(shape));
    check(off + n * sizeof(float) <= bytes.size(), "weights: truncated tensor data");
    Tensor<float>& t = out.params.add(meta.at("name").get<std::string>(), shape);
    std::memcpy(t.data.data(), bytes.data() + off, n * sizeof(float));
    off += n * sizeof(float);
    check(crc_of(t.data.data(), n * sizeof(float)) == meta.at("crc32").get<uint32_t>(),
          "weights: checksum mismatch for tensor " + meta.at("name").get<std::string>());
    check(t.all_finite(), "weights: non-finite values in tensor " +
                              meta.at("name").get<std::string>());
  }
  check(off == bytes.size(), "weights: trailing bytes");
  out.checksum = weights_checksum(out.params);
  return out;
}

void save_weights(const std::string& path, const DenoiserParams<float>& params,
                  const NoiseSchedule& schedule) {
  atomic_write(path, serialize_weights(params, schedule));
}

WeightsBundle load_weights(const std::string& path) {
  return deserialize_weights(read_file(path));
}

namespace {

std::vector<uint8_t> to_rgb8(const Tensor<float>& image, int scale, int& w, int& h) {
  check(image.shape.size() == 3 && image.shape[0] == 3, "image: expected {3,h,w}");
  check(scale >= 1, "image: bad scale");
  int sh = image.shape[1], sw = image.shape[2];
  h = sh * scale;
  w = sw * scale;
  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = image.data[(static_cast<size_t>(c) * sh + y / scale) * sw + x / scale];
        v = std::min(1.0f, std::max(-1.0f, v));
        rgb[(static_cast<size_t>(y) * w + x) * 3 + c] =
            static_cast<uint8_t>(std::lround((v + 1.0f) * 0.5f * 255.0f));
      }
  return rgb;
}

void append_chunk(std::string& out, const char type[4], const std::string& payload) {
  std::string chunk(type, 4);
  chunk += payload;
  for (int i = 3; i >= 0; --i)
    out.push_back(static_cast<char>((payload.size() >> (8 * i)) & 0xff));
  out += chunk;
  uint32_t crc = crc_of(chunk.data(), chunk.size());
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((crc >> (8 * i)) & 0xff));
}

}  // namespace

std::string encode_png(const Tensor<float>& image, int scale) {
  int w = 0, h = 0;
  std::vector<uint8_t> rgb = to_rgb8(image, scale, w, h);

  // raw scanlines, each with a leading filter-type 0 byte
  std::string raw;
  raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * 3));
  for (int y = 0; y < h; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(rgb.data() + static_cast<size_t>(y) * w * 3),
               static_cast<size_t>(w) * 3);
  }
  uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(comp_cap, '\0');
  check(compress2(reinterpret_cast<Bytef*>(compressed.data()), &comp_cap,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  9) == Z_OK,
        "png: zlib compression failed");
  compressed.resize(comp_cap);

  std::string ihdr;
  for (int i = 3; i >= 0; --i) ihdr.push_back(static_cast<char>((w >> (8 * i)) & 0xff));
  for (int i = 3; i >= 0; --i) ihdr.push_back(static_cast<char>((h >> (8 * i)) & 0xff));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace

  std::string out("\x89PNG\r\n\x1a\n", 8);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", "");
  return out;
}

std::string encode_ppm(const Tensor<float>& image, int scale) {
  int w = 0, h = 0;
  std::vector<uint8_t> rgb = to_rgb8(image, scale, w, h);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return out;
}

void save_image(const std::string& path, const Tensor<float>& image, int scale) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm")
    atomic_write(path, encode_ppm(image, scale));
  else
    atomic_write(path, encode_png(image, scale));
}

}  // namespace toydiff
