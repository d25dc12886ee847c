#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"
#include "serialcorr/common.hpp"

namespace serialcorr::manifest {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kFileName = "manifest.json";

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& path);

/// UTC, ISO 8601 with seconds.
std::string utc_timestamp();

struct RunManifest {
    std::string command;
    nlohmann::json config;  // effective settings of the run
    std::map<std::string, std::string> inputs;   // path -> sha256
    std::map<std::string, std::string> outputs;  // file name relative to --out -> sha256
    std::optional<std::uint64_t> seed;
    std::optional<double> delay_rrf_s, delay_crf_s;
    std::string scheme;
    std::string truncation;
    Notices notices;
    std::string started, finished;

    std::string config_hash() const;
    nlohmann::json to_json() const;

    void add_input(const std::filesystem::path& p);
    /// Hashes every regular file in `out_dir` except the manifest itself.
    void collect_outputs(const std::filesystem::path& out_dir);
    void write(const std::filesystem::path& out_dir) const;
};

}  // namespace serialcorr::manifest
