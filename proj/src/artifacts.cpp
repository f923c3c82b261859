#include "lvo/artifacts.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace lvo {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, sep)) out.push_back(cell);
    return out;
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

void write_png(const fs::path& path, const Image& image, int upscale) {
    if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("write_png: expected a 3 x H x W image");
    if (upscale < 1) throw std::invalid_argument("write_png: upscale must be >= 1");
    ensure_parent(path);
    const int h = image.dim(1);
    const int w = image.dim(2);
    const int oh = h * upscale;
    const int ow = w * upscale;

    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, ow, oh, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(ow) * 3);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(c, y / upscale, x / upscale), 0.0, 1.0);
                row[static_cast<std::size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const fs::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw std::runtime_error("cannot read PNG " + path.string());
    img.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw std::runtime_error("cannot decode PNG " + path.string());
    }
    const int h = static_cast<int>(img.height);
    const int w = static_cast<int>(img.width);
    Image out({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
    return out;
}

Image tile_images(const std::vector<std::vector<Image>>& rows, int gap, double background) {
    int cell_h = 0, cell_w = 0;
    std::size_t cols = 0;
    for (const auto& r : rows) {
        cols = std::max(cols, r.size());
        for (const Image& im : r) {
            cell_h = std::max(cell_h, im.dim(1));
            cell_w = std::max(cell_w, im.dim(2));
        }
    }
    if (rows.empty() || cols == 0) return Image({3, 1, 1}, background);
    const int n_rows = static_cast<int>(rows.size());
    const int n_cols = static_cast<int>(cols);
    Image out({3, n_rows * cell_h + (n_rows + 1) * gap, n_cols * cell_w + (n_cols + 1) * gap}, background);
    for (int r = 0; r < n_rows; ++r)
        for (int c = 0; c < static_cast<int>(rows[r].size()); ++c) {
            const Image& im = rows[r][c];
            const int y0 = gap + r * (cell_h + gap);
            const int x0 = gap + c * (cell_w + gap);
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < im.dim(1); ++y)
                    for (int x = 0; x < im.dim(2); ++x) out.at(ch, y0 + y, x0 + x) = im.at(ch, y, x);
        }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("missing artifact " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_profiles_csv(const fs::path& path, const std::vector<ActivityProfile>& profiles) {
    std::string out = "feature_id,t,frequency,samples\n";
    for (const ActivityProfile& p : profiles)
        for (std::size_t t = 0; t < p.frequency.size(); ++t)
            out += std::to_string(p.feature) + "," + std::to_string(t) + "," + format_double(p.frequency[t]) + "," +
                   std::to_string(p.samples[t]) + "\n";
    write_text(path, out);
}

std::vector<ActivityProfile> read_profiles_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("missing artifact " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != "feature_id,t,frequency,samples") throw std::runtime_error("unexpected header in " + path.string());
    std::map<int, ActivityProfile> by_feature;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != 4) throw std::runtime_error("malformed row in " + path.string());
        const int f = std::stoi(cells[0]);
        const std::size_t t = std::stoul(cells[1]);
        ActivityProfile& p = by_feature[f];
        p.feature = f;
        if (p.frequency.size() <= t) {
            p.frequency.resize(t + 1, 0.0);
            p.samples.resize(t + 1, 0);
        }
        p.frequency[t] = std::stod(cells[2]);
        p.samples[t] = std::stoi(cells[3]);
    }
    std::vector<ActivityProfile> out;
    for (auto& [f, p] : by_feature) out.push_back(std::move(p));
    return out;
}

void write_max_activation_csv(const fs::path& path, const std::vector<std::vector<double>>& table) {
    std::string out = "feature_id,t,max_activation\n";
    for (std::size_t f = 0; f < table.size(); ++f)
        for (std::size_t t = 0; t < table[f].size(); ++t)
            out += std::to_string(f) + "," + std::to_string(t) + "," + format_double(table[f][t]) + "\n";
    write_text(path, out);
}

std::vector<std::vector<double>> read_max_activation_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("missing artifact " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != "feature_id,t,max_activation") throw std::runtime_error("unexpected header in " + path.string());
    std::vector<std::vector<double>> table;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != 3) throw std::runtime_error("malformed row in " + path.string());
        const std::size_t f = std::stoul(cells[0]);
        const std::size_t t = std::stoul(cells[1]);
        if (table.size() <= f) table.resize(f + 1);
        if (table[f].size() <= t) table[f].resize(t + 1, 0.0);
        table[f][t] = std::stod(cells[2]);
    }
    return table;
}

} // namespace lvo
