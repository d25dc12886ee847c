#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <regex>

#include "serialcorr/common.hpp"
#include "serialcorr/manifest.hpp"

using namespace serialcorr;
namespace fs = std::filesystem;

TEST_CASE("SHA-256 test vectors") {
    CHECK(manifest::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(manifest::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(manifest::sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    CHECK(manifest::sha256_hex(std::string(1000000, 'a')) ==
          "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("manifest contents") {
    const fs::path dir = fs::temp_directory_path() / "serialcorr_test_manifest";
    fs::remove_all(dir);
    fs::create_directories(dir / "sub");
    std::ofstream(dir / "a.txt") << "abc";
    std::ofstream(dir / "sub" / "b.txt") << "";

    manifest::RunManifest m;
    m.command = "simulate";
    m.config = {{"T", 581}, {"tr_s", 0.589}};
    m.seed = 7;
    m.add_input(dir / "a.txt");
    m.collect_outputs(dir);
    m.started = m.finished = manifest::utc_timestamp();
    CHECK(std::regex_match(m.started, std::regex(R"(\d{4}-\d\d-\d\dT\d\d:\d\d:\d\dZ)")));
    m.write(dir);

    CHECK(m.outputs.size() == 2);
    CHECK(m.outputs.at("a.txt") == manifest::sha256_hex("abc"));
    CHECK(m.outputs.at("sub/b.txt") == manifest::sha256_hex(""));
    CHECK(m.inputs.at((dir / "a.txt").string()) == manifest::sha256_hex("abc"));

    // A second collection ignores the manifest written into the directory.
    m.collect_outputs(dir);
    CHECK(m.outputs.size() == 2);
    CHECK(m.outputs.count(manifest::kFileName) == 0);

    std::ifstream in(dir / manifest::kFileName);
    const auto j = nlohmann::json::parse(in);
    CHECK(j.at("tool_version") == manifest::kToolVersion);
    CHECK(j.at("config_hash") == manifest::sha256_hex(m.config.dump()));
    CHECK(j.at("seed") == 7);
    CHECK(j.at("scheme").is_null());
    CHECK(j.at("delays_s").at("rrf").is_null());

    // Key order does not change the hash; values do.
    manifest::RunManifest other;
    other.config = {{"tr_s", 0.589}, {"T", 581}};
    CHECK(other.config_hash() == m.config_hash());
    other.config["T"] = 580;
    CHECK(other.config_hash() != m.config_hash());

    CHECK_THROWS_AS(m.add_input(dir / "missing.txt"), ValidationError);
}
