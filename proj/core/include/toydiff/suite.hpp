#pragma once

#include <string>
#include <vector>

#include "toydiff/layout.hpp"

namespace toydiff {

struct SuiteEntry {
  std::string name;
  LayoutSpec layout;  // prompt tokens + bindings
};

// 50 seeded entries: 25 two-object and 25 three-object scenes, every object
// carrying color and texture attributes
std::vector<SuiteEntry> make_default_suite(uint64_t seed);

// JSON: {schema:1, entries:[{name, prompt, subjects:[...]}]}
std::string serialize_suite(const std::vector<SuiteEntry>& suite);
std::vector<SuiteEntry> parse_suite(const std::string& text);

}  // namespace toydiff
