#include "io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dc::cli {

namespace {

std::ofstream open_out(const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write '" + path + "'");
    }
    return out;
}

std::uint8_t to_byte(double x, double lo, double hi)
{
    if (!(hi > lo)) {
        return 128;
    }
    const double v = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(255.0 * v));
}

} // namespace

void write_samples_csv(const std::string& path, const std::vector<Vector>& samples)
{
    auto out = open_out(path);
    char buf[40];
    for (const auto& x : samples) {
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", x(k));
            if (k > 0) {
                out << ',';
            }
            out << buf;
        }
        out << '\n';
    }
    if (!out) {
        throw IoError("failed writing '" + path + "'");
    }
}

std::vector<Vector> read_samples_csv(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open samples file '" + path + "'");
    }
    std::vector<Vector> rows;
    std::string line;
    std::size_t row = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) {
            continue;
        }
        std::vector<double> values;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (p < end) {
            const char* comma = std::find(p, end, ',');
            double v = 0.0;
            const auto res = std::from_chars(p, comma, v);
            if (res.ec != std::errc() || res.ptr != comma) {
                throw IoError(path + ": row " + std::to_string(row) + ", column " + std::to_string(values.size() + 1)
                              + ": not a number");
            }
            values.push_back(v);
            p = comma == end ? end : comma + 1;
        }
        if (width == 0) {
            width = values.size();
        } else if (values.size() != width) {
            throw IoError(path + ": row " + std::to_string(row) + ": expected " + std::to_string(width)
                          + " values, got " + std::to_string(values.size()));
        }
        rows.push_back(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
    }
    if (rows.empty()) {
        throw IoError(path + ": no samples");
    }
    return rows;
}

void write_text(const std::string& path, const std::string& text)
{
    auto out = open_out(path);
    out << text;
}

void write_json(const std::string& path, const nlohmann::ordered_json& doc)
{
    write_text(path, doc.dump(2) + "\n");
}

void ensure_directory(const std::string& path)
{
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) {
        throw IoError("cannot create directory '" + path + "': " + ec.message());
    }
}

bool file_exists(const std::string& path)
{
    std::error_code ec;
    return std::filesystem::is_regular_file(path, ec);
}

void write_pgm(const std::string& path, const GrayImage& image)
{
    auto out = open_out(path);
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

void write_ppm(const std::string& path, const RgbImage& image)
{
    auto out = open_out(path);
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

std::vector<std::string> render_samples(const std::string& dir, const JointLayout& layout,
                                        const std::vector<Vector>& samples, std::size_t max_items)
{
    std::vector<std::string> written;
    if (samples.empty()) {
        return written;
    }
    const std::size_t items = std::min(max_items, samples.size());
    double lo = samples[0](0);
    double hi = lo;
    for (std::size_t i = 0; i < items; ++i) {
        lo = std::min(lo, samples[i].minCoeff());
        hi = std::max(hi, samples[i].maxCoeff());
    }
    const auto& shape = layout.shape;
    const auto path = [&](const std::string& name) {
        written.push_back(name);
        return (std::filesystem::path(dir) / name).string();
    };

    if (shape.size() == 2) {
        for (std::size_t i = 0; i < items; ++i) {
            GrayImage img{shape[1], shape[0], {}};
            for (Eigen::Index k = 0; k < samples[i].size(); ++k) {
                img.pixels.push_back(to_byte(samples[i](k), lo, hi));
            }
            write_pgm(path("sample_" + std::to_string(i) + ".pgm"), img);
        }
        return written;
    }

    if (shape.size() == 3 && shape[0] == 6) {
        const std::size_t f = shape[1];
        const auto& x = samples[0];
        static const char* names[6] = {"F", "B", "L", "R", "U", "D"};
        for (std::size_t face = 0; face < 6; ++face) {
            GrayImage img{f, f, {}};
            for (std::size_t k = 0; k < f * f; ++k) {
                img.pixels.push_back(to_byte(x(static_cast<Eigen::Index>(face * f * f + k)), lo, hi));
            }
            write_pgm(path(std::string("face_") + names[face] + ".pgm"), img);
        }
        // cross layout: U above F; L F R B in the middle row; D below F
        RgbImage cross{4 * f, 3 * f, std::vector<std::uint8_t>(4 * f * 3 * f * 3, 0)};
        for (std::size_t p = 0; p < 4 * f * 3 * f; ++p) {
            cross.pixels[3 * p] = 32;
            cross.pixels[3 * p + 1] = 48;
            cross.pixels[3 * p + 2] = 96;
        }
        const std::size_t cells[6][2] = {{1, 1}, {3, 1}, {0, 1}, {2, 1}, {1, 0}, {1, 2}};  // (col, row) per face
        for (std::size_t face = 0; face < 6; ++face) {
            for (std::size_t r = 0; r < f; ++r) {
                for (std::size_t c = 0; c < f; ++c) {
                    const auto v = to_byte(x(static_cast<Eigen::Index>(face * f * f + r * f + c)), lo, hi);
                    const std::size_t px = (cells[face][1] * f + r) * 4 * f + cells[face][0] * f + c;
                    cross.pixels[3 * px] = cross.pixels[3 * px + 1] = cross.pixels[3 * px + 2] = v;
                }
            }
        }
        write_ppm(path("cross.ppm"), cross);
        return written;
    }

    // 1D: one 4-pixel-high strip per sample
    const std::size_t n = static_cast<std::size_t>(samples[0].size());
    const std::size_t band = 4;
    GrayImage img{n, items * band, {}};
    for (std::size_t i = 0; i < items; ++i) {
        for (std::size_t r = 0; r < band; ++r) {
            for (std::size_t k = 0; k < n; ++k) {
                img.pixels.push_back(to_byte(samples[i](static_cast<Eigen::Index>(k)), lo, hi));
            }
        }
    }
    write_pgm(path("strips.pgm"), img);
    return written;
}

} // namespace dc::cli
