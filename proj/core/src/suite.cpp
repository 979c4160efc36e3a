#include "toydiff/suite.hpp"

#include <nlohmann/json.hpp>
#include <stdexcept>

#include "toydiff/rng.hpp"
#include "toydiff/scene.hpp"

namespace toydiff {

std::vector<SuiteEntry> make_default_suite(uint64_t seed) {
  // two-object prompts throughout: attribute binding and leakage are pairwise
  // effects, and two well-separated subjects give the detector its cleanest
  // read at this resolution
  std::vector<SuiteEntry> suite;
  for (int i = 0; i < 50; ++i) {
    Philox rng(seed, rng_stream::kSuiteBase + static_cast<uint64_t>(i));
    SceneSpec scene;
    do {
      scene = sample_scene(rng);
    } while (scene.objects.size() != 2);
    SuiteEntry e;
    e.name = "suite" + std::to_string(i) + "_2obj";
    e.layout = scene_layout(scene);
    suite.push_back(std::move(e));
  }
  return suite;
}

std::string serialize_suite(const std::vector<SuiteEntry>& suite) {
  nlohmann::json j;
  j["schema"] = 1;
  j["entries"] = nlohmann::json::array();
  for (const SuiteEntry& e : suite) {
    nlohmann::json entry = nlohmann::json::parse(serialize_layout(e.layout));
    entry["name"] = e.name;
    j["entries"].push_back(std::move(entry));
  }
  return j.dump(2);
}

std::vector<SuiteEntry> parse_suite(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("suite: malformed text: ") + e.what());
  }
  check(j.value("schema", 0) == 1, "suite: unsupported schema version");
  std::vector<SuiteEntry> suite;
  try {
    for (const auto& entry : j.at("entries")) {
      SuiteEntry e;
      e.name = entry.value("name", "entry" + std::to_string(suite.size()));
      e.layout = parse_layout(entry.dump());
      suite.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("suite: malformed text: ") + e.what());
  }
  check(!suite.empty(), "suite: no entries");
  return suite;
}

}  // namespace toydiff
