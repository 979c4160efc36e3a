// weights container, image encoders, config serialization, and file plumbing
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <zlib.h>

#include <filesystem>

#include "test_util.hpp"
#include "toydiff/config.hpp"
#include "toydiff/io.hpp"
#include "toydiff/suite.hpp"

using namespace toydiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  fs::path p = fs::temp_directory_path() / "toydiff_io_test";
  fs::create_directories(p);
  return p;
}

ModelConfig small_config() {
  ModelConfig mc;
  mc.image = 8;
  mc.patch = 4;
  mc.d_model = 16;
  mc.n_blocks = 1;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.time_dim = 8;
  return mc;
}

uint32_t be32(const std::string& s, size_t off) {
  return (static_cast<uint32_t>(static_cast<uint8_t>(s[off])) << 24) |
         (static_cast<uint32_t>(static_cast<uint8_t>(s[off + 1])) << 16) |
         (static_cast<uint32_t>(static_cast<uint8_t>(s[off + 2])) << 8) |
         static_cast<uint32_t>(static_cast<uint8_t>(s[off + 3]));
}

}  // namespace

TEST_CASE("atomic write round-trips and creates parents") {
  fs::path dir = scratch_dir() / "nested" / "deeper";
  fs::remove_all(scratch_dir() / "nested");
  fs::path file = dir / "blob.bin";
  std::string payload = "alpha\0beta\xff\x01 gamma";
  atomic_write(file.string(), payload);
  CHECK(read_file(file.string()) == payload);
  atomic_write(file.string(), "overwritten");
  CHECK(read_file(file.string()) == "overwritten");
  CHECK_THROWS(read_file((dir / "missing.bin").string()));
}

TEST_CASE("weights container round-trips bit-exactly") {
  DenoiserParams<float> p = init_params<float>(small_config(), 77);
  NoiseSchedule sched = NoiseSchedule::cosine(250, 0.011);
  std::string bytes = serialize_weights(p, sched);
  CHECK(bytes.substr(0, 8) == "TOYDIFFW");
  CHECK(serialize_weights(p, sched) == bytes);  // byte-stable

  WeightsBundle b = deserialize_weights(bytes);
  CHECK(b.checksum == weights_checksum(p));
  CHECK(b.params.names == p.names);
  CHECK(b.params.cfg.d_model == 16);
  REQUIRE(b.params.tensors.size() == p.tensors.size());
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    CHECK(b.params.tensors[i]->shape == p.tensors[i]->shape);
    CHECK(b.params.tensors[i]->data == p.tensors[i]->data);
  }
  CHECK(b.schedule.T_train == 250);
  REQUIRE(b.schedule.alpha_bar.size() == sched.alpha_bar.size());
  CHECK(b.schedule.alpha_bar == sched.alpha_bar);

  fs::path file = scratch_dir() / "weights.bin";
  save_weights(file.string(), p, sched);
  WeightsBundle c = load_weights(file.string());
  CHECK(c.checksum == b.checksum);
  CHECK(weights_checksum(c.params) == weights_checksum(p));
}

TEST_CASE("weights container rejects damage") {
  DenoiserParams<float> p = init_params<float>(small_config(), 78);
  NoiseSchedule sched = NoiseSchedule::cosine();
  std::string bytes = serialize_weights(p, sched);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS(deserialize_weights(bad_magic));

  std::string bad_version = bytes;
  bad_version[8] = static_cast<char>(bad_version[8] + 1);
  CHECK_THROWS(deserialize_weights(bad_version));

  std::string flipped = bytes;
  flipped[flipped.size() - 5] ^= 0x40;  // corrupt a tensor payload byte
  CHECK_THROWS(deserialize_weights(flipped));

  CHECK_THROWS(deserialize_weights(bytes.substr(0, bytes.size() - 9)));  // truncated
  CHECK_THROWS(deserialize_weights(bytes + "extra"));                    // trailing bytes
  CHECK_THROWS(deserialize_weights(""));
}

TEST_CASE("png encoding is well-formed and decodes to the pixels") {
  Tensor<float> img({3, 4, 4});
  Philox rng(1, 9000);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform(-1.2, 1.2));  // test clamping

  std::string png = encode_png(img, 2);
  CHECK(png == encode_png(img, 2));  // deterministic
  REQUIRE(png.size() > 8 + 25 + 12);
  CHECK(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
  // IHDR immediately after the signature
  CHECK(be32(png, 8) == 13);
  CHECK(png.substr(12, 4) == "IHDR");
  CHECK(be32(png, 16) == 8);  // width  = 4 * scale 2
  CHECK(be32(png, 20) == 8);  // height
  CHECK(png[24] == 8);        // bit depth
  CHECK(png[25] == 2);        // truecolor
  CHECK(png.substr(png.size() - 8, 4) == "IEND");

  // inflate the IDAT and compare filter-0 scanlines against the pixel map
  size_t idat_off = 8 + 12 + 13;
  REQUIRE(png.substr(idat_off + 4, 4) == "IDAT");
  uint32_t idat_len = be32(png, idat_off);
  std::string idat = png.substr(idat_off + 8, idat_len);
  std::string raw(8 * (1 + 8 * 3), '\0');
  uLongf raw_len = static_cast<uLongf>(raw.size());
  REQUIRE(uncompress(reinterpret_cast<Bytef*>(raw.data()), &raw_len,
                     reinterpret_cast<const Bytef*>(idat.data()),
                     static_cast<uLong>(idat.size())) == Z_OK);
  REQUIRE(raw_len == raw.size());
  for (int y = 0; y < 8; ++y) {
    CHECK(raw[static_cast<size_t>(y) * 25] == 0);  // filter type none
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.data[(static_cast<size_t>(c) * 4 + y / 2) * 4 + x / 2];
        v = std::min(1.0f, std::max(-1.0f, v));
        uint8_t want = static_cast<uint8_t>(std::lround((v + 1.0f) * 0.5f * 255.0f));
        uint8_t got = static_cast<uint8_t>(
            raw[static_cast<size_t>(y) * 25 + 1 + static_cast<size_t>(x) * 3 + c]);
        CHECK(got == want);
      }
  }
}

TEST_CASE("ppm encoding and extension dispatch") {
  Tensor<float> img({3, 2, 2});
  img.data = {1, -1, -1, 1,  -1, 1, -1, 1,  -1, -1, 1, 1};
  std::string ppm = encode_ppm(img, 1);
  REQUIRE(ppm.substr(0, 11) == "P6\n2 2\n255\n");
  REQUIRE(ppm.size() == 11 + 12);
  auto px = [&](int i) { return static_cast<uint8_t>(ppm[11 + i]); };
  CHECK(px(0) == 255);  // pixel (0,0): r=+1, g=-1, b=-1
  CHECK(px(1) == 0);
  CHECK(px(2) == 0);
  CHECK(px(9) == 255);  // pixel (1,1): all +1
  CHECK(px(10) == 255);
  CHECK(px(11) == 255);

  fs::path pngf = scratch_dir() / "img.png";
  fs::path ppmf = scratch_dir() / "img.ppm";
  save_image(pngf.string(), img, 1);
  save_image(ppmf.string(), img, 1);
  CHECK(read_file(pngf.string()).substr(1, 3) == "PNG");
  CHECK(read_file(ppmf.string()).substr(0, 2) == "P6");
}

TEST_CASE("config serialization round-trips and rejects junk") {
  RunConfig def = default_config();
  std::string text = serialize_config(def);
  RunConfig back = parse_config(text);
  CHECK(serialize_config(back) == text);
  CHECK(back.guidance.k_iters == 5);
  CHECK(back.guidance.weights.kl == 5.0f);
  CHECK(back.train.steps == 9000);
  CHECK(back.train.warmup == 200);
  CHECK(back.train.ema_decay == 0.999);
  CHECK(back.schedule_T == 1000);

  // partial override keeps everything else at defaults
  RunConfig part = parse_config(R"({"train": {"steps": 12, "batch": 4}})");
  CHECK(part.train.steps == 12);
  CHECK(part.train.batch == 4);
  CHECK(part.train.lr == def.train.lr);
  CHECK(part.guidance.total_steps == 50);

  RunConfig gw = parse_config(R"({"guidance": {"weights": {"mask": 0.5}}})");
  CHECK(gw.guidance.weights.mask == 0.5f);
  CHECK(gw.guidance.weights.kl == 5.0f);

  CHECK_THROWS(parse_config("not json"));
  CHECK_THROWS(parse_config(R"({"oops": 1})"));
  CHECK_THROWS(parse_config(R"({"train": {"oops": 1}})"));
  CHECK_THROWS(parse_config(R"({"guidance": {"weights": {"oops": 1}}})"));
  CHECK_THROWS(parse_config(R"({"train": {"steps": -5}})"));  // fails validation
}

TEST_CASE("layout and suite survive the file system") {
  std::vector<SuiteEntry> suite = make_default_suite(4);
  fs::path sfile = scratch_dir() / "suite.json";
  atomic_write(sfile.string(), serialize_suite(suite));
  std::vector<SuiteEntry> back = parse_suite(read_file(sfile.string()));
  REQUIRE(back.size() == suite.size());
  CHECK(serialize_suite(back) == serialize_suite(suite));
  for (size_t i = 0; i < suite.size(); ++i) {
    CHECK(back[i].name == suite[i].name);
    CHECK(back[i].layout.prompt_tokens == suite[i].layout.prompt_tokens);
    REQUIRE(back[i].layout.bindings.size() == suite[i].layout.bindings.size());
  }

  LayoutSpec ly = suite[0].layout;
  fs::path lfile = scratch_dir() / "layout.json";
  atomic_write(lfile.string(), serialize_layout(ly));
  LayoutSpec lback = parse_layout(read_file(lfile.string()));
  CHECK(serialize_layout(lback) == serialize_layout(ly));
}
