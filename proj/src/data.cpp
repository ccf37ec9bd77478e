#include "plsprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "plsprune/error.hpp"
#include "plsprune/rng.hpp"

namespace plsprune {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open file: " + path.string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes,
                        std::size_t offset, const std::string& what) {
    if (offset + 4 > bytes.size()) {
        throw ParseError("truncated IDX file: need 4 bytes for " + what +
                         " at offset " + std::to_string(offset) +
                         ", file has " + std::to_string(bytes.size()));
    }
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
           (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
           static_cast<std::uint32_t>(bytes[offset + 3]);
}

Dataset copy_rows(const Dataset& ds, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.shape = ds.shape;
    out.count = indices.size();
    out.class_count = ds.class_count;
    out.images.reserve(indices.size() * ds.shape.size());
    out.labels.reserve(indices.size());
    for (std::size_t idx : indices) {
        auto row = ds.sample(idx);
        out.images.insert(out.images.end(), row.begin(), row.end());
        out.labels.push_back(ds.labels[idx]);
    }
    return out;
}

int max_label_plus_one(const std::vector<int>& labels) {
    int k = 0;
    for (int v : labels) k = std::max(k, v + 1);
    return k;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
    const auto img_bytes = read_file(images_path);
    const auto lbl_bytes = read_file(labels_path);

    const std::uint32_t img_magic = read_be32(img_bytes, 0, "image magic");
    if (img_magic != kIdxImagesMagic) {
        throw ParseError("bad IDX image magic: expected 0x00000803, got 0x" +
                         [](std::uint32_t v) {
                             char buf[16];
                             std::snprintf(buf, sizeof buf, "%08x", v);
                             return std::string(buf);
                         }(img_magic));
    }
    const std::uint32_t lbl_magic = read_be32(lbl_bytes, 0, "label magic");
    if (lbl_magic != kIdxLabelsMagic) {
        throw ParseError("bad IDX label magic: expected 0x00000801");
    }

    const std::uint32_t n_img = read_be32(img_bytes, 4, "image count");
    const std::uint32_t height = read_be32(img_bytes, 8, "image rows");
    const std::uint32_t width = read_be32(img_bytes, 12, "image cols");
    const std::uint32_t n_lbl = read_be32(lbl_bytes, 4, "label count");
    if (n_img != n_lbl) {
        throw IntegrityError("IDX image count " + std::to_string(n_img) +
                             " does not match label count " +
                             std::to_string(n_lbl));
    }

    const std::size_t pixels = static_cast<std::size_t>(n_img) * height * width;
    if (16 + pixels > img_bytes.size()) {
        throw ParseError("truncated IDX image file: expected " +
                         std::to_string(16 + pixels) + " bytes, got " +
                         std::to_string(img_bytes.size()) +
                         " (payload starts at offset 16)");
    }
    if (8 + static_cast<std::size_t>(n_lbl) > lbl_bytes.size()) {
        throw ParseError("truncated IDX label file: expected " +
                         std::to_string(8 + n_lbl) + " bytes, got " +
                         std::to_string(lbl_bytes.size()) +
                         " (payload starts at offset 8)");
    }

    Dataset ds;
    ds.shape = Shape3{1, height, width};
    ds.count = n_img;
    ds.images.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
        ds.images[i] = static_cast<double>(img_bytes[16 + i]) / 255.0;
    }
    ds.labels.resize(n_lbl);
    for (std::size_t i = 0; i < n_lbl; ++i) {
        ds.labels[i] = static_cast<int>(lbl_bytes[8 + i]);
    }
    ds.class_count = max_label_plus_one(ds.labels);
    return ds;
}

Dataset load_csv(const std::filesystem::path& path, Shape3 image_shape,
                 PixelRange range) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open file: " + path.string());
    }
    const std::size_t fields_per_row = 1 + image_shape.size();
    const double scale = range == PixelRange::Byte ? 1.0 / 255.0 : 1.0;

    Dataset ds;
    ds.shape = image_shape;

    std::string line;
    std::size_t line_no = 0;
    bool first_data_row = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.push_back("");

        if (first_data_row) {
            // A non-numeric leading field marks a header row.
            char* end = nullptr;
            std::strtod(fields[0].c_str(), &end);
            if (end == fields[0].c_str()) {
                first_data_row = false;
                continue;
            }
            first_data_row = false;
        }

        if (fields.size() != fields_per_row) {
            throw ParseError("CSV line " + std::to_string(line_no) + " has " +
                             std::to_string(fields.size()) +
                             " fields, expected " +
                             std::to_string(fields_per_row));
        }
        for (std::size_t col = 0; col < fields.size(); ++col) {
            char* end = nullptr;
            const double value = std::strtod(fields[col].c_str(), &end);
            if (end == fields[col].c_str() || *end != '\0') {
                throw ParseError("CSV line " + std::to_string(line_no) +
                                 " column " + std::to_string(col + 1) +
                                 " is not numeric: '" + fields[col] + "'");
            }
            if (col == 0) {
                const int label = static_cast<int>(value);
                if (label < 0 || static_cast<double>(label) != value) {
                    throw ParseError("CSV line " + std::to_string(line_no) +
                                     " label must be a nonnegative integer");
                }
                ds.labels.push_back(label);
            } else {
                const double pixel = value * scale;
                if (pixel < 0.0 || pixel > 1.0 || !std::isfinite(pixel)) {
                    throw DataError("CSV line " + std::to_string(line_no) +
                                    " column " + std::to_string(col + 1) +
                                    " pixel out of range after scaling");
                }
                ds.images.push_back(pixel);
            }
        }
        ++ds.count;
    }
    ds.class_count = max_label_plus_one(ds.labels);
    return ds;
}

Dataset synthetic(std::size_t n, int k, Shape3 shape, std::uint64_t seed) {
    if (k < 2) {
        throw ParamError("synthetic dataset needs k >= 2 classes, got " +
                         std::to_string(k));
    }
    Dataset ds;
    ds.shape = shape;
    ds.count = n;
    ds.class_count = k;
    ds.images.resize(n * shape.size());
    ds.labels.resize(n);

    const double pi = 3.14159265358979323846;
    const double cx0 = static_cast<double>(shape.width - 1) / 2.0;
    const double cy0 = static_cast<double>(shape.height - 1) / 2.0;
    const double half_len =
        0.40 * static_cast<double>(std::min(shape.height, shape.width));
    const double thickness = 1.0;

    for (std::size_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i % static_cast<std::size_t>(k));
        ds.labels[i] = cls;
        // Per-sample generator keeps samples independent of n and of each
        // other, so the same (seed, i) always yields the same image.
        Rng rng(derive_seed(seed, i));
        const double angle = pi * (static_cast<double>(cls) +
                                   rng.uniform(-0.46, 0.46)) /
                             k;
        const double dx = std::cos(angle);
        const double dy = std::sin(angle);
        const double cx = cx0 + rng.uniform(-2.2, 2.2);
        const double cy = cy0 + rng.uniform(-2.2, 2.2);
        const double contrast = rng.uniform(0.35, 0.8);

        double* img = ds.images.data() + i * shape.size();
        for (std::size_t c = 0; c < shape.channels; ++c) {
            for (std::size_t y = 0; y < shape.height; ++y) {
                for (std::size_t x = 0; x < shape.width; ++x) {
                    const double px = static_cast<double>(x) - cx;
                    const double py = static_cast<double>(y) - cy;
                    const double across = std::abs(px * -dy + py * dx);
                    const double along = std::abs(px * dx + py * dy);
                    double v = rng.uniform(0.0, 0.45);
                    if (across <= thickness && along <= half_len) {
                        v += contrast * rng.uniform(0.6, 1.0);
                    }
                    img[(c * shape.height + y) * shape.width + x] =
                        std::clamp(v, 0.0, 1.0);
                }
            }
        }
    }
    return ds;
}

Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) {
        throw ParamError("subsample fraction must be in (0,1], got " +
                         std::to_string(fraction));
    }
    const std::size_t m =
        static_cast<std::size_t>(fraction * static_cast<double>(ds.count));
    if (m == 0) {
        throw ParamError("subsample of " + std::to_string(ds.count) +
                         " rows at fraction " + std::to_string(fraction) +
                         " would be empty");
    }
    std::vector<std::size_t> indices(ds.count);
    std::iota(indices.begin(), indices.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + rng.below(ds.count - i);
        std::swap(indices[i], indices[j]);
    }
    indices.resize(m);
    std::sort(indices.begin(), indices.end());
    return copy_rows(ds, indices);
}

Split split(const Dataset& ds, double train_frac, std::uint64_t seed) {
    if (train_frac <= 0.0 || train_frac >= 1.0) {
        throw ParamError("split fraction must be in (0,1), got " +
                         std::to_string(train_frac));
    }
    std::vector<std::size_t> indices(ds.count);
    std::iota(indices.begin(), indices.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i + 1 < ds.count; ++i) {
        const std::size_t j = i + rng.below(ds.count - i);
        std::swap(indices[i], indices[j]);
    }
    const std::size_t n_train =
        static_cast<std::size_t>(train_frac * static_cast<double>(ds.count));
    std::vector<std::size_t> train_idx(indices.begin(),
                                       indices.begin() + n_train);
    std::vector<std::size_t> held_idx(indices.begin() + n_train,
                                      indices.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(held_idx.begin(), held_idx.end());
    return Split{copy_rows(ds, train_idx), copy_rows(ds, held_idx)};
}

}  // namespace plsprune
