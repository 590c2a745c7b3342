#include "sarmatch/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sarmatch/errors.hpp"

#ifdef SARMATCH_HAVE_PNG
#include <png.h>
#endif

namespace sarmatch {

Image make_image(int h, int w, float fill) {
    Image img;
    img.h = h;
    img.w = w;
    img.pix.assign(static_cast<size_t>(h) * w, fill);
    return img;
}

namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
    if (s.size() < suf.size()) return false;
    std::string tail = s.substr(s.size() - suf.size());
    std::transform(tail.begin(), tail.end(), tail.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return tail == suf;
}

int next_pnm_int(std::istream& is) {
    // skips whitespace and '#' comments
    for (;;) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int v;
    if (!(is >> v)) throw IoError("PGM: malformed header");
    return v;
}

Image load_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || (m1 != '2' && m1 != '5')) throw IoError("not a PGM file: " + path);
    const bool binary = (m1 == '5');
    const int w = next_pnm_int(is);
    const int h = next_pnm_int(is);
    const int maxval = next_pnm_int(is);
    if (w <= 0 || h <= 0) throw IoError("PGM: bad dimensions in " + path);
    if (maxval <= 0 || maxval > 255) throw IoError("PGM: only 8-bit supported: " + path);
    Image img = make_image(h, w);
    const float inv = 1.0f / static_cast<float>(maxval);
    if (binary) {
        is.get();  // single whitespace after maxval
        std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!is) throw IoError("PGM: truncated payload in " + path);
        for (size_t i = 0; i < buf.size(); ++i) img.pix[i] = buf[i] * inv;
    } else {
        for (auto& p : img.pix) {
            int v;
            if (!(is >> v)) throw IoError("PGM: truncated payload in " + path);
            p = v * inv;
        }
    }
    return img;
}

#ifdef SARMATCH_HAVE_PNG

Image load_png_impl(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("PNG decode failed: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("PNG: unsupported channel count in " + path);
    }
    std::vector<unsigned char> row(static_cast<size_t>(w) * channels);
    Image img = make_image(h, w);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            float v;
            if (channels == 1) {
                v = row[x] / 255.0f;
            } else {
                v = (0.299f * row[3 * x] + 0.587f * row[3 * x + 1] + 0.114f * row[3 * x + 2]) /
                    255.0f;
            }
            img.at(y, x) = v;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void save_png_impl(const std::string& path, const Image& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("PNG encode failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(img.w);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            row[x] = static_cast<unsigned char>(
                std::clamp(static_cast<int>(std::lround(img.at(y, x) * 255.0f)), 0, 255));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

#endif  // SARMATCH_HAVE_PNG

}  // namespace

Image load_image(const std::string& path) {
    if (has_suffix(path, ".pgm")) return load_pgm(path);
    if (has_suffix(path, ".png")) {
#ifdef SARMATCH_HAVE_PNG
        return load_png_impl(path);
#else
        throw IoError("PNG support not built in; cannot load " + path);
#endif
    }
    throw IoError("unsupported image extension (need .pgm or .png): " + path);
}

void save_pgm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "P5\n" << img.w << " " << img.h << "\n255\n";
    for (float v : img.pix) {
        const int q = static_cast<int>(std::lround(v * 255.0f));
        os.put(static_cast<char>(std::clamp(q, 0, 255)));
    }
    if (!os) throw IoError("write failed: " + path);
}

void save_png(const std::string& path, const Image& img) {
#ifdef SARMATCH_HAVE_PNG
    save_png_impl(path, img);
#else
    (void)path;
    (void)img;
    throw IoError("PNG support not built in");
#endif
}

}  // namespace sarmatch
