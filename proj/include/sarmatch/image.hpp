#pragma once

#include <string>
#include <vector>

namespace sarmatch {

// Grayscale image, values in [0,1], row-major.
struct Image {
    int h = 0, w = 0;
    std::vector<float> pix;

    float at(int y, int x) const { return pix[static_cast<size_t>(y) * w + x]; }
    float& at(int y, int x) { return pix[static_cast<size_t>(y) * w + x]; }
};

Image make_image(int h, int w, float fill = 0.0f);

// Loads 8-bit PGM (P2/P5) or PNG by extension; color converts via luma
// weights 0.299/0.587/0.114.
Image load_image(const std::string& path);

void save_pgm(const std::string& path, const Image& img);
void save_png(const std::string& path, const Image& img);

}  // namespace sarmatch
