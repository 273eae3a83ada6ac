#include "s4ecg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "s4ecg/errors.hpp"

namespace s4ecg::checkpoint {

static_assert(std::endian::native == std::endian::little, "SSMK1 I/O assumes a little-endian host");

const Section& Container::section(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return s;
  }
  throw FormatError("checkpoint has no section '" + name + "'");
}

void write(const Container& container, const std::string& path) {
  nlohmann::json header;
  header["format"] = kMagic;
  header["version"] = kVersion;
  header["kind"] = container.kind;
  header["meta"] = container.meta;
  header["sections"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& s : container.sections) {
    if (numel(s.shape) != s.values.size()) {
      throw DimensionError("checkpoint section '" + s.name + "' shape does not match its values");
    }
    header["sections"].push_back(
        {{"name", s.name}, {"shape", s.shape}, {"offset", offset}, {"count", s.values.size()}});
    offset += s.values.size();
  }
  header["payload_values"] = offset;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << kMagic << '\n' << header.dump() << '\n';
  for (const auto& s : container.sections) {
    out.write(reinterpret_cast<const char*>(s.values.data()),
              static_cast<std::streamsize>(s.values.size() * sizeof(double)));
  }
  if (!out) throw FormatError("write to '" + path + "' failed");
}

Container read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string magic;
  if (!std::getline(in, magic) || magic != kMagic) {
    throw FormatError("'" + path + "' is not an SSMK1 checkpoint (bad magic)");
  }
  std::string header_line;
  if (!std::getline(in, header_line)) throw FormatError("'" + path + "': truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': unreadable header: " + e.what());
  }

  Container c;
  try {
    if (header.at("format") != kMagic || header.at("version").get<int>() != kVersion) {
      throw FormatError("'" + path + "': unsupported checkpoint version");
    }
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.value("meta", nlohmann::json::object());
    const auto total = header.at("payload_values").get<std::size_t>();
    std::vector<double> payload(total);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != total * sizeof(double)) {
      throw FormatError("'" + path + "': truncated payload");
    }
    for (const auto& entry : header.at("sections")) {
      Section s;
      s.name = entry.at("name").get<std::string>();
      s.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (count != numel(s.shape) || offset + count > total) {
        throw FormatError("'" + path + "': section '" + s.name + "' is out of bounds");
      }
      s.values.assign(payload.begin() + static_cast<long>(offset),
                      payload.begin() + static_cast<long>(offset + count));
      c.sections.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': malformed header: " + e.what());
  }
  return c;
}

}  // namespace s4ecg::checkpoint
