#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace srfc {

inline constexpr std::string_view kVersion = "srfc 0.1.0";

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Record of one CLI run. The config hash is over the exact config bytes the
// command ran with (file contents after flag overrides, serialized).
struct RunManifest {
  std::string command;
  std::string config_hash;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> artifacts;
  std::string version{kVersion};
  std::string started;
  std::string finished;

  void set_config(const nlohmann::json& cfg) {
    config = cfg;
    config_hash = hex64(fnv1a64(cfg.dump()));
  }

  void write(const std::filesystem::path& path) {
    finished = utc_timestamp();
    nlohmann::json j = {{"command", command},     {"config_hash", config_hash},
                        {"config", config},       {"seed", seed},
                        {"inputs", inputs},       {"artifacts", artifacts},
                        {"version", version},     {"started", started},
                        {"finished", finished}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }
};

}  // namespace srfc
