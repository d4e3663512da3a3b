#pragma once

#include <filesystem>
#include <vector>

#include "dapn/error.hpp"

namespace dapn {

/// Dense CHW image with pixel values in [0,1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // size channels*height*width

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), pixels(static_cast<size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) { return pixels[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return pixels[(static_cast<size_t>(c) * height + y) * width + x]; }
    size_t size() const { return pixels.size(); }
};

/// Reads an 8-bit PNG as RGB in [0,1] (grayscale and alpha inputs are
/// expanded/stripped).
Image read_png(const std::filesystem::path& path);

/// Writes a 3-channel image as 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const Image& img);

Image hflip(const Image& img);
Image pad_reflect(const Image& img, int pad);
Image crop(const Image& img, int y0, int x0, int h, int w);

}  // namespace dapn
