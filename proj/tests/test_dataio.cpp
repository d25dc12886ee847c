#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "serialcorr/common.hpp"
#include "serialcorr/dataio.hpp"

using namespace serialcorr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("serialcorr_test_dataio_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

io::Volume4D random_volume(std::array<std::size_t, 4> dims, unsigned seed) {
    io::Volume4D v(dims, {2.0, 2.5, 3.0}, 0.589);
    std::mt19937 g(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& x : v.data) x = static_cast<double>(n(g));  // float-representable payload
    return v;
}

}  // namespace

TEST_CASE("volume round trip keeps known values exactly") {
    io::Volume4D v({2, 2, 1, 3}, {1.5, 2.0, 2.5}, 0.589);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = 0.25 * static_cast<double>(i) - 1.0;
    const auto dir = temp_dir("known");
    io::write_volume(v, dir / "v.nii");
    const auto r = io::read_volume(dir / "v.nii");
    CHECK(r.dims == v.dims);
    CHECK(r.voxel_size_mm == v.voxel_size_mm);
    CHECK(r.tr_s == doctest::Approx(0.589).epsilon(1e-7));
    double maxdiff = 0.0;
    for (std::size_t i = 0; i < v.data.size(); ++i) maxdiff = std::max(maxdiff, std::abs(r.data[i] - v.data[i]));
    CHECK(maxdiff == 0.0);
}

TEST_CASE("write(read(f)) is byte identical") {
    const auto dir = temp_dir("bytes");
    io::write_volume(random_volume({5, 4, 3, 7}, 3), dir / "a.nii");
    io::write_volume(io::read_volume(dir / "a.nii"), dir / "b.nii");
    CHECK(file_bytes(dir / "a.nii") == file_bytes(dir / "b.nii"));
}

TEST_CASE("linear order is x fastest, t slowest") {
    io::Volume4D v({3, 2, 2, 2}, {1, 1, 1}, 1.0);
    v.at(v.voxel_index(2, 1, 0), 1) = 7.0;
    CHECK(v.data[1 * 12 + 2 + 3 * 1] == 7.0);
}

TEST_CASE("NIfTI header errors name the field") {
    auto bytes = io::encode_nifti(random_volume({2, 2, 2, 2}, 1));
    SUBCASE("rank 5") {
        const std::int16_t five = 5;
        std::memcpy(bytes.data() + 40, &five, 2);
        CHECK_THROWS_WITH_AS(io::decode_nifti(bytes), doctest::Contains("unsupported rank"), ValidationError);
    }
    SUBCASE("wrong datatype") {
        const std::int16_t dt = 4;
        std::memcpy(bytes.data() + 70, &dt, 2);
        CHECK_THROWS_WITH_AS(io::decode_nifti(bytes), doctest::Contains("datatype"), ValidationError);
    }
    SUBCASE("truncated payload") {
        bytes.resize(bytes.size() - 4);
        CHECK_THROWS_WITH_AS(io::decode_nifti(bytes), doctest::Contains("dimension mismatch"), ValidationError);
    }
    SUBCASE("non-finite sample") {
        const float nan = std::nanf("");
        std::memcpy(bytes.data() + 352, &nan, 4);
        CHECK_THROWS_WITH_AS(io::decode_nifti(bytes), doctest::Contains("non-finite"), ValidationError);
    }
    SUBCASE("bad magic") {
        bytes[345] = 'x';
        CHECK_THROWS_AS(io::decode_nifti(bytes), ValidationError);
    }
}

TEST_CASE("mask round trip with names") {
    io::Mask m({3, 3, 2}, 0);
    m.names = {"GM", "WM"};
    m.labels[0] = 1;
    m.labels[5] = 2;
    m.labels[17] = 2;
    const auto dir = temp_dir("mask");
    io::write_mask(m, {2, 2, 2}, dir / "m.nii");
    const auto r = io::read_mask(dir / "m.nii", {"GM", "WM"});
    CHECK(r.labels == m.labels);
    CHECK(r.indices(2) == std::vector<std::size_t>{5, 17});
    CHECK(r.label_name(1) == "GM");
    io::Mask dup = m;
    dup.names = {"A", "A"};
    CHECK_THROWS_AS(dup.validate(), ValidationError);
}

TEST_CASE("CSV tables round trip exactly") {
    io::TableData t;
    t.add("time_s", {0.0, 0.1, 1e-17, -3.25});
    t.add("x", {1.0 / 3.0, 2.0, M_PI, 1e300});
    const auto back = io::parse_table(io::format_table(t));
    CHECK(back.names == t.names);
    CHECK(back.columns == t.columns);
    CHECK_THROWS_AS(io::parse_table("a,b\n1,2\n3\n"), ValidationError);
    CHECK_THROWS_AS(io::parse_table("a,a\n1,2\n"), ValidationError);
    CHECK_THROWS_AS(io::parse_table("a\nfoo\n"), ValidationError);
}

TEST_CASE("gaussian smoothing") {
    CHECK(io::fwhm_to_sigma(5.0) / 2.5 == doctest::Approx(0.8493).epsilon(1e-4));

    SUBCASE("fwhm 0 is the identity") {
        const auto v = random_volume({4, 5, 3, 2}, 9);
        CHECK(io::gaussian_smooth(v, 0.0).data == v.data);
    }
    SUBCASE("impulse matches a dense convolution oracle") {
        io::Volume4D v({21, 21, 21, 1}, {2.5, 2.5, 2.5}, 1.0);
        v.at(v.voxel_index(10, 10, 10), 0) = 1.0;
        const auto s = io::gaussian_smooth(v, 5.0);
        // Independent truncated kernel: |i| <= 4 sigma, renormalized.
        const double sigma = 5.0 / (2.0 * std::sqrt(2.0 * std::log(2.0))) / 2.5;
        std::vector<double> k;
        double sum = 0.0;
        for (int i = -10; i <= 10; ++i) {
            const double w = std::abs(i) <= 4.0 * sigma ? std::exp(-0.5 * i * i / (sigma * sigma)) : 0.0;
            k.push_back(w);
            sum += w;
        }
        for (auto& w : k) w /= sum;
        double maxerr = 0.0;
        for (std::size_t z = 0; z < 21; ++z)
            for (std::size_t y = 0; y < 21; ++y)
                for (std::size_t x = 0; x < 21; ++x) {
                    // Dense sum over all source voxels (only one is non-zero, but do it literally).
                    double acc = 0.0;
                    for (std::size_t sz = 9; sz <= 11; ++sz)
                        for (std::size_t sy = 9; sy <= 11; ++sy)
                            for (std::size_t sx = 9; sx <= 11; ++sx) {
                                const double src = v.at(v.voxel_index(sx, sy, sz), 0);
                                const auto dx = static_cast<int>(x) - static_cast<int>(sx);
                                const auto dy = static_cast<int>(y) - static_cast<int>(sy);
                                const auto dz = static_cast<int>(z) - static_cast<int>(sz);
                                if (std::abs(dx) > 10 || std::abs(dy) > 10 || std::abs(dz) > 10) continue;
                                acc += src * k[dx + 10] * k[dy + 10] * k[dz + 10];
                            }
                    maxerr = std::max(maxerr, std::abs(acc - s.at(s.voxel_index(x, y, z), 0)));
                }
        CHECK(maxerr < 1e-12);
        double total = 0.0;
        for (double x : s.data) total += x;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("linearity") {
        const auto a = random_volume({6, 5, 4, 2}, 1), b = random_volume({6, 5, 4, 2}, 2);
        io::Volume4D c = a;
        for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] = 2.0 * a.data[i] - 0.5 * b.data[i];
        const auto sa = io::gaussian_smooth(a, 4.0), sb = io::gaussian_smooth(b, 4.0), sc = io::gaussian_smooth(c, 4.0);
        double maxerr = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < c.data.size(); ++i) {
            maxerr = std::max(maxerr, std::abs(sc.data[i] - (2.0 * sa.data[i] - 0.5 * sb.data[i])));
            scale = std::max(scale, std::abs(sc.data[i]));
        }
        CHECK(maxerr <= 1e-10 * scale);
    }
    SUBCASE("threads do not change the result") {
        const auto a = random_volume({6, 5, 4, 5}, 4);
        CHECK(io::gaussian_smooth(a, 5.0, 1).data == io::gaussian_smooth(a, 5.0, 3).data);
    }
    CHECK_THROWS_AS(io::gaussian_smooth(random_volume({2, 2, 2, 1}, 1), -1.0), ValidationError);
}

TEST_CASE("temporal downsampling") {
    io::Volume4D v({2, 1, 1, 581}, {1, 1, 1}, 0.589);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<double>(i);
    const auto d = io::downsample_time(v, 4);
    CHECK(d.frames() == 146);
    CHECK(d.tr_s == doctest::Approx(2.356));
    for (std::size_t k = 0; k < d.frames(); ++k) {
        CHECK(d.at(0, k) == v.at(0, 4 * k));
        CHECK(d.at(1, k) == v.at(1, 4 * k));
    }
    const auto d3 = io::downsample_time(v, 4, 3);
    CHECK(d3.frames() == 145);
    CHECK(d3.at(1, 2) == v.at(1, 11));
    CHECK(io::downsample_time(v, 1).data == v.data);
    CHECK_THROWS_AS(io::downsample_time(v, 0), ValidationError);
    CHECK_THROWS_AS(io::downsample_time(v, 4, 4), ValidationError);

    // Commutes with a pointwise transform.
    io::Volume4D sq = v;
    for (auto& x : sq.data) x = std::sqrt(x);
    const auto a = io::downsample_time(sq, 3, 1);
    auto b = io::downsample_time(v, 3, 1);
    for (auto& x : b.data) x = std::sqrt(x);
    CHECK(a.data == b.data);
}
