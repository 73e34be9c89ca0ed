#pragma once

#include "tetsculpt/common.hpp"

#include <filesystem>

namespace tetsculpt {

// Interleaved multi-channel float image, row-major, row 0 at the top.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> pixels;
    // Identifies the render pass the image came from; 0 when not rendered.
    std::uint64_t token = 0;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return pixels[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return pixels[index(x, y, c)]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Area-averaging resample to (target_w, target_h). Each output pixel is the
/// overlap-weighted mean of the source pixels its footprint covers, so the
/// operator is linear. Throws ContractError if the target is larger.
Image downscale(const Image& src, int target_w, int target_h);

/// Transpose of downscale: maps an output-space gradient back to the source.
Image downscale_backward(const Image& grad, int src_w, int src_h);

Image concat_channels(const Image& a, const Image& b);
/// Splits a gradient of concat_channels(a, b) back into the two parts.
std::pair<Image, Image> split_channels(const Image& grad, int channels_a);

// 8-bit PNG; values are clamped to [0,1] and optionally gamma encoded.
void write_png(const std::filesystem::path& path, const Image& img, bool gamma_encode);
Image read_png(const std::filesystem::path& path);

// Float dump: "TIMG", u32 width, u32 height, u32 channels, then f32 pixels, little-endian.
void write_timg(const std::filesystem::path& path, const Image& img);
Image read_timg(const std::filesystem::path& path);

/// Display transform: x/(1+x) followed by gamma 2.2.
Image tonemap_for_display(const Image& linear);

}  // namespace tetsculpt
