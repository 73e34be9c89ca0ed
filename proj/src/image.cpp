#include "tetsculpt/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>

#include "binary_io.hpp"

namespace tetsculpt {

namespace {

// Overlap of source cells with one target cell along an axis.
struct Span {
    int first;
    std::vector<double> weights;  // already divided by the footprint length
};

std::vector<Span> axis_spans(int src, int dst) {
    std::vector<Span> spans(dst);
    const double ratio = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        const double lo = i * ratio;
        const double hi = (i + 1) * ratio;
        const int first = static_cast<int>(std::floor(lo));
        const int last = std::min(src - 1, static_cast<int>(std::ceil(hi)) - 1);
        spans[i].first = first;
        for (int s = first; s <= last; ++s) {
            const double overlap = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
            spans[i].weights.push_back(overlap / ratio);
        }
    }
    return spans;
}

}  // namespace

Image downscale(const Image& src, int target_w, int target_h) {
    if (target_w <= 0 || target_h <= 0 || target_w > src.width || target_h > src.height)
        throw ContractError("downscale: target must be positive and no larger than the source");
    const auto xs = axis_spans(src.width, target_w);
    const auto ys = axis_spans(src.height, target_h);
    Image out(target_w, target_h, src.channels);
    out.token = src.token;
    for (int ty = 0; ty < target_h; ++ty) {
        for (int tx = 0; tx < target_w; ++tx) {
            for (std::size_t j = 0; j < ys[ty].weights.size(); ++j) {
                const int sy = ys[ty].first + static_cast<int>(j);
                for (std::size_t i = 0; i < xs[tx].weights.size(); ++i) {
                    const int sx = xs[tx].first + static_cast<int>(i);
                    const double w = ys[ty].weights[j] * xs[tx].weights[i];
                    for (int c = 0; c < src.channels; ++c) out.at(tx, ty, c) += w * src.at(sx, sy, c);
                }
            }
        }
    }
    return out;
}

Image downscale_backward(const Image& grad, int src_w, int src_h) {
    if (grad.width > src_w || grad.height > src_h)
        throw ContractError("downscale_backward: gradient larger than source");
    const auto xs = axis_spans(src_w, grad.width);
    const auto ys = axis_spans(src_h, grad.height);
    Image out(src_w, src_h, grad.channels);
    for (int ty = 0; ty < grad.height; ++ty) {
        for (int tx = 0; tx < grad.width; ++tx) {
            for (std::size_t j = 0; j < ys[ty].weights.size(); ++j) {
                const int sy = ys[ty].first + static_cast<int>(j);
                for (std::size_t i = 0; i < xs[tx].weights.size(); ++i) {
                    const int sx = xs[tx].first + static_cast<int>(i);
                    const double w = ys[ty].weights[j] * xs[tx].weights[i];
                    for (int c = 0; c < grad.channels; ++c) out.at(sx, sy, c) += w * grad.at(tx, ty, c);
                }
            }
        }
    }
    return out;
}

Image concat_channels(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw ContractError("concat_channels: image sizes differ");
    Image out(a.width, a.height, a.channels + b.channels);
    out.token = a.token;
    for (std::size_t p = 0; p < a.pixel_count(); ++p) {
        for (int c = 0; c < a.channels; ++c) out.pixels[p * out.channels + c] = a.pixels[p * a.channels + c];
        for (int c = 0; c < b.channels; ++c)
            out.pixels[p * out.channels + a.channels + c] = b.pixels[p * b.channels + c];
    }
    return out;
}

std::pair<Image, Image> split_channels(const Image& grad, int channels_a) {
    require(channels_a > 0 && channels_a < grad.channels, "split_channels: bad channel split");
    Image a(grad.width, grad.height, channels_a);
    Image b(grad.width, grad.height, grad.channels - channels_a);
    for (std::size_t p = 0; p < grad.pixel_count(); ++p) {
        for (int c = 0; c < a.channels; ++c) a.pixels[p * a.channels + c] = grad.pixels[p * grad.channels + c];
        for (int c = 0; c < b.channels; ++c)
            b.pixels[p * b.channels + c] = grad.pixels[p * grad.channels + channels_a + c];
    }
    return {std::move(a), std::move(b)};
}

Image tonemap_for_display(const Image& linear) {
    Image out = linear;
    for (double& v : out.pixels) {
        const double x = std::max(0.0, v);
        v = std::pow(x / (1.0 + x), 1.0 / 2.2);
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Image& img, bool gamma_encode) {
    require(img.channels >= 1 && img.channels <= 4, "write_png: 1 to 4 channels supported");
    std::unique_ptr<FILE, decltype(&std::fclose)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw IoError("cannot open for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write failed: " + path.string());
    }
    static constexpr int kColorTypes[] = {PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA, PNG_COLOR_TYPE_RGB,
                                          PNG_COLOR_TYPE_RGB_ALPHA};
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, kColorTypes[img.channels - 1], PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double v = std::clamp(img.at(x, y, c), 0.0, 1.0);
                if (gamma_encode) v = std::pow(v, 1.0 / 2.2);
                row[static_cast<std::size_t>(x) * img.channels + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    png_image desc{};
    desc.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&desc, path.c_str())) throw IoError("cannot read png: " + path.string());
    const int channels = PNG_IMAGE_SAMPLE_CHANNELS(desc.format);
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(desc));
    if (!png_image_finish_read(&desc, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&desc);
        throw IoError("cannot decode png: " + path.string());
    }
    Image img(static_cast<int>(desc.width), static_cast<int>(desc.height), channels);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = buffer[i] / 255.0;
    return img;
}

void write_timg(const std::filesystem::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    detail::put_magic(os, "TIMG");
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.width));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.height));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.channels));
    for (double v : img.pixels) detail::put_f32(os, v);
    if (!os) throw IoError("write failed: " + path.string());
}

Image read_timg(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    detail::expect_magic(is, "TIMG");
    const auto w = detail::get_le<std::uint32_t>(is);
    const auto h = detail::get_le<std::uint32_t>(is);
    const auto c = detail::get_le<std::uint32_t>(is);
    if (w == 0 || h == 0 || c == 0 || w > 65536 || h > 65536 || c > 64) throw IoError("bad TIMG header: " + path.string());
    Image img(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
    for (double& v : img.pixels) v = detail::get_f32(is);
    return img;
}

}  // namespace tetsculpt
