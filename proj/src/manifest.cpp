#include "serialcorr/manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

namespace serialcorr::manifest {

namespace {

std::string to_hex(const unsigned char* d, unsigned n) {
    static const char* digits = "0123456789abcdef";
    std::string s(2 * n, '0');
    for (unsigned i = 0; i < n; ++i) {
        s[2 * i] = digits[d[i] >> 4];
        s[2 * i + 1] = digits[d[i] & 15];
    }
    return s;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned n = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr) != 1)
        throw NumericalError("sha256: digest failed");
    return to_hex(md, n);
}

std::string file_sha256(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string RunManifest::config_hash() const { return sha256_hex(config.dump()); }

nlohmann::json RunManifest::to_json() const {
    nlohmann::json j;
    j["tool"] = "serialcorr";
    j["tool_version"] = kToolVersion;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = config_hash();
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
    j["scheme"] = scheme.empty() ? nlohmann::json(nullptr) : nlohmann::json(scheme);
    j["truncation"] = truncation.empty() ? nlohmann::json(nullptr) : nlohmann::json(truncation);
    j["delays_s"] = {{"rrf", delay_rrf_s ? nlohmann::json(*delay_rrf_s) : nlohmann::json(nullptr)},
                     {"crf", delay_crf_s ? nlohmann::json(*delay_crf_s) : nlohmann::json(nullptr)}};
    j["notices"] = notices;
    j["timestamps"] = {{"started", started}, {"finished", finished}};
    return j;
}

void RunManifest::add_input(const std::filesystem::path& p) { inputs[p.string()] = file_sha256(p); }

void RunManifest::collect_outputs(const std::filesystem::path& out_dir) {
    outputs.clear();
    for (const auto& e : std::filesystem::recursive_directory_iterator(out_dir)) {
        if (!e.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(e.path(), out_dir).generic_string();
        if (rel == kFileName) continue;
        outputs[rel] = file_sha256(e.path());
    }
}

void RunManifest::write(const std::filesystem::path& out_dir) const {
    std::ofstream out(out_dir / kFileName, std::ios::binary);
    if (!out) throw ValidationError("cannot write manifest in " + out_dir.string());
    out << to_json().dump(2) << '\n';
}

}  // namespace serialcorr::manifest
