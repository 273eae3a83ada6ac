#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "s4ecg/tensor.hpp"

namespace s4ecg::checkpoint {

// SSMK1 container, see docs/FORMATS.md:
//   line 1: "SSMK1"
//   line 2: single-line JSON header {"format":"SSMK1","version":1,"kind":...,
//           "meta":{...},"sections":[{"name","shape","offset","count"}],
//           "payload_values":N}
//   rest:   N little-endian IEEE-754 binary64 values; offsets count values.
inline constexpr const char* kMagic = "SSMK1";
inline constexpr int kVersion = 1;

struct Section {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Container {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Section> sections;

  const Section& section(const std::string& name) const;
};

void write(const Container& container, const std::string& path);
Container read(const std::string& path);

}  // namespace s4ecg::checkpoint
