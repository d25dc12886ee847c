#include "serialcorr/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "serialcorr/common.hpp"

namespace serialcorr::io {

static_assert(std::endian::native == std::endian::little, "NIfTI codec assumes a little-endian host");

Volume4D::Volume4D(std::array<std::size_t, 4> d, std::array<double, 3> vox, double tr)
    : dims(d), voxel_size_mm(vox), tr_s(tr), data(d[0] * d[1] * d[2] * d[3], 0.0) {}

std::vector<double> Volume4D::series(std::size_t voxel) const {
    std::vector<double> out(frames());
    for (std::size_t t = 0; t < frames(); ++t) out[t] = at(voxel, t);
    return out;
}

void Volume4D::set_series(std::size_t voxel, std::span<const double> values) {
    if (values.size() != frames()) throw ValidationError("set_series: length does not match T");
    for (std::size_t t = 0; t < frames(); ++t) at(voxel, t) = values[t];
}

void Volume4D::validate() const {
    for (std::size_t i = 0; i < 4; ++i)
        if (dims[i] == 0) throw ValidationError("volume: dim[" + std::to_string(i + 1) + "] must be positive");
    if (data.size() != dims[0] * dims[1] * dims[2] * dims[3])
        throw ValidationError("volume: data length does not equal nx*ny*nz*T");
    if (!(tr_s > 0.0) || !std::isfinite(tr_s)) throw ValidationError("volume: tr_s must be positive");
    for (std::size_t i = 0; i < 3; ++i)
        if (!(voxel_size_mm[i] > 0.0) || !std::isfinite(voxel_size_mm[i]))
            throw ValidationError("volume: pixdim[" + std::to_string(i + 1) + "] must be positive");
    for (double v : data)
        if (!std::isfinite(v)) throw ValidationError("volume: data contains non-finite samples");
}

Mask::Mask(std::array<std::size_t, 3> d, int fill) : dims(d), labels(d[0] * d[1] * d[2], fill) {}

int Mask::max_label() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

std::string Mask::label_name(int label) const {
    if (label >= 1 && static_cast<std::size_t>(label) <= names.size()) return names[label - 1];
    return "label" + std::to_string(label);
}

std::vector<std::size_t> Mask::indices(std::optional<int> label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (label ? labels[i] == *label : labels[i] != 0) out.push_back(i);
    }
    return out;
}

void Mask::validate() const {
    if (labels.size() != voxels()) throw ValidationError("mask: label count does not match dims");
    for (int l : labels)
        if (l < 0) throw ValidationError("mask: labels must be non-negative");
    std::set<std::string> seen;
    for (const auto& n : names)
        if (!seen.insert(n).second) throw ValidationError("mask: duplicate label name '" + n + "'");
}

void Mask::check_matches(const Volume4D& vol) const {
    if (dims[0] != vol.dims[0] || dims[1] != vol.dims[1] || dims[2] != vol.dims[2])
        throw ValidationError("mask dims do not match volume dims");
}

Eigen::MatrixXd gather(const Volume4D& vol, std::span<const std::size_t> voxels) {
    const std::size_t T = vol.frames();
    Eigen::MatrixXd out(T, voxels.size());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t n = 0; n < voxels.size(); ++n) out(t, n) = vol.at(voxels[n], t);
    return out;
}

void scatter(Volume4D& vol, std::span<const std::size_t> voxels, const Eigen::MatrixXd& series) {
    if (static_cast<std::size_t>(series.rows()) != vol.frames() ||
        static_cast<std::size_t>(series.cols()) != voxels.size())
        throw ValidationError("scatter: shape mismatch");
    for (std::size_t t = 0; t < vol.frames(); ++t)
        for (std::size_t n = 0; n < voxels.size(); ++n) vol.at(voxels[n], t) = series(t, n);
}

// --- NIfTI -----------------------------------------------------------------------

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;
constexpr std::int16_t kFloat32 = 16;

template <typename T>
void put(std::vector<std::uint8_t>& buf, std::size_t offset, T value) {
    std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> buf, std::size_t offset) {
    T value;
    std::memcpy(&value, buf.data() + offset, sizeof(T));
    return value;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

std::vector<std::uint8_t> encode_nifti(const Volume4D& vol) {
    vol.validate();
    const bool is4d = vol.frames() > 1;
    std::vector<std::uint8_t> buf(kVoxOffset + vol.data.size() * sizeof(float), 0);
    put<std::int32_t>(buf, 0, static_cast<std::int32_t>(kHeaderSize));
    put<char>(buf, 38, 'r');  // regular
    const std::int16_t rank = is4d ? 4 : 3;
    put<std::int16_t>(buf, 40, rank);
    for (std::size_t i = 0; i < 4; ++i) {
        if (vol.dims[i] > 32767) throw ValidationError("volume: dim exceeds NIfTI-1 limit");
        put<std::int16_t>(buf, 42 + 2 * i, static_cast<std::int16_t>(vol.dims[i]));
    }
    for (std::size_t i = 4; i < 7; ++i) put<std::int16_t>(buf, 42 + 2 * i, 1);
    put<std::int16_t>(buf, 70, kFloat32);
    put<std::int16_t>(buf, 72, 32);
    put<float>(buf, 76, 1.0f);  // qfac
    for (std::size_t i = 0; i < 3; ++i) put<float>(buf, 80 + 4 * i, static_cast<float>(vol.voxel_size_mm[i]));
    put<float>(buf, 92, static_cast<float>(vol.tr_s));
    put<float>(buf, 108, static_cast<float>(kVoxOffset));
    put<char>(buf, 123, static_cast<char>(2 | 8));  // mm, seconds
    std::memcpy(buf.data() + 344, "n+1\0", 4);
    for (std::size_t i = 0; i < vol.data.size(); ++i)
        put<float>(buf, kVoxOffset + 4 * i, static_cast<float>(vol.data[i]));
    return buf;
}

Volume4D decode_nifti(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kVoxOffset) throw ValidationError("nifti: file shorter than header");
    if (get<std::int32_t>(bytes, 0) != static_cast<std::int32_t>(kHeaderSize))
        throw ValidationError("nifti: sizeof_hdr must be 348 (little-endian)");
    if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) throw ValidationError("nifti: magic must be \"n+1\"");
    const auto rank = get<std::int16_t>(bytes, 40);
    if (rank < 1 || rank > 4) throw ValidationError("nifti: dim[0] = " + std::to_string(rank) + ": unsupported rank");
    const auto datatype = get<std::int16_t>(bytes, 70);
    if (datatype != kFloat32) throw ValidationError("nifti: datatype must be 16 (float32)");
    if (get<std::int16_t>(bytes, 72) != 32) throw ValidationError("nifti: bitpix must be 32");
    const float slope = get<float>(bytes, 112);
    const float inter = get<float>(bytes, 116);
    if (!(slope == 0.0f || slope == 1.0f) || inter != 0.0f)
        throw ValidationError("nifti: scl_slope/scl_inter scaling is not supported");
    const float vox_offset = get<float>(bytes, 108);
    if (vox_offset != static_cast<float>(kVoxOffset))
        throw ValidationError("nifti: vox_offset must be 352 (no extensions)");

    Volume4D vol;
    for (std::size_t i = 0; i < 4; ++i) {
        std::int16_t d = 1;
        if (static_cast<int>(i) < rank) d = get<std::int16_t>(bytes, 42 + 2 * i);
        if (d < 1) throw ValidationError("nifti: dim[" + std::to_string(i + 1) + "] must be positive");
        vol.dims[i] = static_cast<std::size_t>(d);
    }
    for (std::size_t i = 0; i < 3; ++i) vol.voxel_size_mm[i] = get<float>(bytes, 80 + 4 * i);
    vol.tr_s = get<float>(bytes, 92);
    if (rank < 4 && !(vol.tr_s > 0.0 && std::isfinite(vol.tr_s))) vol.tr_s = 1.0;
    if (rank >= 4 && !(vol.tr_s > 0.0)) throw ValidationError("nifti: pixdim[4] (TR) must be positive");

    const std::size_t n = vol.dims[0] * vol.dims[1] * vol.dims[2] * vol.dims[3];
    if (bytes.size() != kVoxOffset + 4 * n)
        throw ValidationError("nifti: payload size does not match dim (dimension mismatch)");
    vol.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float v = get<float>(bytes, kVoxOffset + 4 * i);
        if (!std::isfinite(v)) throw ValidationError("nifti: data contains non-finite samples");
        vol.data[i] = v;
    }
    vol.validate();
    return vol;
}

Volume4D read_volume(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_nifti(bytes);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_volume(const Volume4D& vol, const std::filesystem::path& path) {
    write_file(path, encode_nifti(vol));
}

Mask read_mask(const std::filesystem::path& path, std::vector<std::string> names) {
    const Volume4D vol = read_volume(path);
    if (vol.frames() != 1) throw ValidationError(path.string() + ": mask must be 3D");
    Mask mask({vol.nx(), vol.ny(), vol.nz()});
    for (std::size_t i = 0; i < mask.voxels(); ++i) {
        const double v = vol.data[i];
        if (v < 0.0 || v != std::floor(v)) throw ValidationError(path.string() + ": mask labels must be non-negative integers");
        mask.labels[i] = static_cast<int>(v);
    }
    mask.names = std::move(names);
    mask.validate();
    return mask;
}

void write_mask(const Mask& mask, const std::array<double, 3>& voxel_size_mm, const std::filesystem::path& path) {
    mask.validate();
    Volume4D vol({mask.dims[0], mask.dims[1], mask.dims[2], 1}, voxel_size_mm, 1.0);
    for (std::size_t i = 0; i < mask.voxels(); ++i) vol.data[i] = mask.labels[i];
    write_volume(vol, path);
}

// --- CSV -------------------------------------------------------------------------

const std::vector<double>& TableData::column(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return columns[i];
    throw ValidationError("table: missing column '" + name + "'");
}

bool TableData::has(const std::string& name) const {
    return std::find(names.begin(), names.end(), name) != names.end();
}

void TableData::add(std::string name, std::vector<double> values) {
    names.push_back(std::move(name));
    columns.push_back(std::move(values));
}

void TableData::validate() const {
    if (names.size() != columns.size()) throw ValidationError("table: name/column count mismatch");
    std::set<std::string> seen;
    for (const auto& n : names)
        if (!seen.insert(n).second) throw ValidationError("table: duplicate column name '" + n + "'");
    for (const auto& c : columns)
        if (c.size() != rows()) throw ValidationError("table: columns have different lengths");
}

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

namespace {

std::string quote_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::vector<std::string>> split_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            in_quotes = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (in_quotes) throw ValidationError("csv: unterminated quoted field");
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

double parse_double(const std::string& s, std::size_t row, const std::string& col) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    while (first < last && *first == ' ') ++first;
    while (last > first && last[-1] == ' ') --last;
    if (first < last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw ValidationError("csv: row " + std::to_string(row) + ", column '" + col + "': not a number: '" + s + "'");
    return v;
}

}  // namespace

std::string format_table(const TableData& table) {
    table.validate();
    std::string out;
    for (std::size_t j = 0; j < table.names.size(); ++j) {
        if (j) out += ',';
        out += quote_field(table.names[j]);
    }
    out += '\n';
    for (std::size_t i = 0; i < table.rows(); ++i) {
        for (std::size_t j = 0; j < table.columns.size(); ++j) {
            if (j) out += ',';
            out += format_number(table.columns[j][i]);
        }
        out += '\n';
    }
    return out;
}

TableData parse_table(const std::string& text) {
    const auto rows = split_csv(text);
    if (rows.empty()) throw ValidationError("csv: missing header row");
    TableData table;
    table.names = rows.front();
    table.columns.assign(table.names.size(), {});
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != table.names.size())
            throw ValidationError("csv: row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                                  " fields, expected " + std::to_string(table.names.size()));
        for (std::size_t j = 0; j < rows[r].size(); ++j)
            table.columns[j].push_back(parse_double(rows[r][j], r, table.names[j]));
    }
    table.validate();
    return table;
}

TableData read_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_table(ss.str());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_table(const TableData& table, const std::filesystem::path& path) {
    const std::string text = format_table(table);
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<double> read_column_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::vector<double> out;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out.push_back(parse_double(line, row, path.filename().string()));
    }
    return out;
}

void write_column_file(std::span<const double> values, const std::filesystem::path& path) {
    std::string text;
    for (double v : values) text += format_number(v) + '\n';
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// --- preprocessing -----------------------------------------------------------------

double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

std::vector<double> gaussian_kernel(double sigma_vox) {
    if (sigma_vox < 0.0) throw ValidationError("gaussian_kernel: negative sigma");
    if (sigma_vox == 0.0) return {1.0};
    const auto half = static_cast<std::ptrdiff_t>(std::floor(4.0 * sigma_vox));
    std::vector<double> k(2 * half + 1);
    for (std::ptrdiff_t i = -half; i <= half; ++i)
        k[i + half] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma_vox * sigma_vox));
    const double sum = std::accumulate(k.begin(), k.end(), 0.0);
    for (double& v : k) v /= sum;
    return k;
}

namespace {

// Convolves the frame in place along one axis with replicate edges.
void smooth_axis(std::vector<double>& frame, const std::array<std::size_t, 3>& n, int axis,
                 const std::vector<double>& kernel) {
    if (kernel.size() == 1) return;
    const auto half = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    const std::size_t len = n[axis];
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? n[0] : n[0] * n[1]);
    std::vector<double> line(len), out(len);
    const std::size_t lines = n[0] * n[1] * n[2] / len;
    for (std::size_t l = 0; l < lines; ++l) {
        // Decompose the line number into the coordinates of the two other axes.
        std::size_t base = 0;
        if (axis == 0) {
            base = l * n[0];
        } else if (axis == 1) {
            base = (l % n[0]) + (l / n[0]) * n[0] * n[1];
        } else {
            base = l;
        }
        for (std::size_t i = 0; i < len; ++i) line[i] = frame[base + i * stride];
        for (std::size_t i = 0; i < len; ++i) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -half; k <= half; ++k) {
                auto j = static_cast<std::ptrdiff_t>(i) - k;
                j = std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(len) - 1);
                acc += kernel[k + half] * line[j];
            }
            out[i] = acc;
        }
        for (std::size_t i = 0; i < len; ++i) frame[base + i * stride] = out[i];
    }
}

}  // namespace

Volume4D gaussian_smooth(const Volume4D& vol, double fwhm_mm, unsigned threads) {
    if (!(fwhm_mm >= 0.0)) throw ValidationError("gaussian_smooth: fwhm_mm must be non-negative");
    vol.validate();
    Volume4D out = vol;
    if (fwhm_mm == 0.0) return out;
    std::array<std::vector<double>, 3> kernels;
    for (int a = 0; a < 3; ++a) kernels[a] = gaussian_kernel(fwhm_to_sigma(fwhm_mm) / vol.voxel_size_mm[a]);
    const std::array<std::size_t, 3> n{vol.nx(), vol.ny(), vol.nz()};
    const std::size_t nvox = vol.voxels();
    parallel_for(vol.frames(), threads, [&](std::size_t t) {
        std::vector<double> frame(vol.data.begin() + t * nvox, vol.data.begin() + (t + 1) * nvox);
        for (int a = 0; a < 3; ++a) smooth_axis(frame, n, a, kernels[a]);
        std::copy(frame.begin(), frame.end(), out.data.begin() + t * nvox);
    });
    return out;
}

Volume4D downsample_time(const Volume4D& vol, std::size_t factor, std::size_t offset) {
    if (factor < 1) throw ValidationError("downsample_time: factor must be >= 1");
    if (offset >= factor) throw ValidationError("downsample_time: offset must be < factor");
    vol.validate();
    if (offset >= vol.frames()) throw ValidationError("downsample_time: offset beyond the last frame");
    const std::size_t T2 = (vol.frames() - offset + factor - 1) / factor;
    Volume4D out({vol.nx(), vol.ny(), vol.nz(), T2}, vol.voxel_size_mm, vol.tr_s * static_cast<double>(factor));
    const std::size_t nvox = vol.voxels();
    for (std::size_t k = 0; k < T2; ++k) {
        const std::size_t src = offset + k * factor;
        std::copy(vol.data.begin() + src * nvox, vol.data.begin() + (src + 1) * nvox, out.data.begin() + k * nvox);
    }
    return out;
}

}  // namespace serialcorr::io
