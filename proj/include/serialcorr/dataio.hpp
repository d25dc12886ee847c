#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace serialcorr::io {

/// 4D voxel time-series grid. Samples are stored x fastest, then y, z, and
/// time slowest, i.e. frame t occupies data[t * nvox, (t + 1) * nvox).
struct Volume4D {
    std::array<std::size_t, 4> dims{1, 1, 1, 1};  // nx, ny, nz, T
    std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};
    double tr_s = 1.0;
    std::vector<double> data;

    Volume4D() = default;
    Volume4D(std::array<std::size_t, 4> d, std::array<double, 3> vox, double tr);

    std::size_t nx() const { return dims[0]; }
    std::size_t ny() const { return dims[1]; }
    std::size_t nz() const { return dims[2]; }
    std::size_t frames() const { return dims[3]; }
    std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }

    std::size_t voxel_index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + dims[0] * (y + dims[1] * z);
    }
    double& at(std::size_t voxel, std::size_t t) { return data[t * voxels() + voxel]; }
    double at(std::size_t voxel, std::size_t t) const { return data[t * voxels() + voxel]; }

    std::vector<double> series(std::size_t voxel) const;
    void set_series(std::size_t voxel, std::span<const double> values);

    /// Throws ValidationError naming the first violated invariant.
    void validate() const;
};

/// Integer label image; 0 is outside, 1..L are named regions.
struct Mask {
    std::array<std::size_t, 3> dims{1, 1, 1};
    std::vector<int> labels;
    std::vector<std::string> names;  // names[l - 1] is the name of label l

    Mask() = default;
    explicit Mask(std::array<std::size_t, 3> d, int fill = 0);

    std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
    std::size_t voxel_index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + dims[0] * (y + dims[1] * z);
    }
    int max_label() const;
    std::string label_name(int label) const;

    /// Voxel indices with a non-zero label (or with exactly `label` when given), ascending.
    std::vector<std::size_t> indices(std::optional<int> label = std::nullopt) const;

    void validate() const;
    void check_matches(const Volume4D& vol) const;
};

/// Gathers the masked voxels into a T x N matrix (column n = voxel idx[n]).
Eigen::MatrixXd gather(const Volume4D& vol, std::span<const std::size_t> voxels);
/// Writes columns of `series` back into `vol` at the listed voxels.
void scatter(Volume4D& vol, std::span<const std::size_t> voxels, const Eigen::MatrixXd& series);

// --- NIfTI-1 subset: single .nii, float32 little-endian, 348-byte header -------------

Volume4D read_volume(const std::filesystem::path& path);
void write_volume(const Volume4D& vol, const std::filesystem::path& path);

/// Masks are stored as 3D float32 NIfTI files holding integer labels. Region
/// names are not part of the image; pass them separately when known.
Mask read_mask(const std::filesystem::path& path, std::vector<std::string> names = {});
void write_mask(const Mask& mask, const std::array<double, 3>& voxel_size_mm,
                const std::filesystem::path& path);

/// Encodes/decodes the exact file image (header, 4-byte extension flag, payload).
std::vector<std::uint8_t> encode_nifti(const Volume4D& vol);
Volume4D decode_nifti(std::span<const std::uint8_t> bytes);

// --- CSV tables --------------------------------------------------------------------

struct TableData {
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;
    std::optional<double> sample_rate_hz;

    std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
    const std::vector<double>& column(const std::string& name) const;
    bool has(const std::string& name) const;
    void add(std::string name, std::vector<double> values);
    void validate() const;
};

/// RFC-4180 CSV with a header row, '.' decimal separator and LF line endings.
/// Numbers are written with 17 significant digits so that doubles round-trip.
TableData read_table(const std::filesystem::path& path);
void write_table(const TableData& table, const std::filesystem::path& path);
std::string format_table(const TableData& table);
TableData parse_table(const std::string& text);

/// Formats a double with round-trip precision, no locale.
std::string format_number(double v);

/// One value per line (e.g. cardiac peak times).
std::vector<double> read_column_file(const std::filesystem::path& path);
void write_column_file(std::span<const double> values, const std::filesystem::path& path);

// --- preprocessing -----------------------------------------------------------------

/// Gaussian sigma (same units as fwhm) for a given full width at half maximum.
double fwhm_to_sigma(double fwhm);

/// Normalized 1D Gaussian kernel truncated at 4 sigma; sigma in samples.
/// sigma == 0 yields the identity kernel {1}.
std::vector<double> gaussian_kernel(double sigma_vox);

/// Separable spatial Gaussian smoothing of every frame with replicate edges.
Volume4D gaussian_smooth(const Volume4D& vol, double fwhm_mm, unsigned threads = 1);

/// Keeps frames offset, offset + factor, ...; TR is multiplied by factor.
Volume4D downsample_time(const Volume4D& vol, std::size_t factor, std::size_t offset = 0);

}  // namespace serialcorr::io
