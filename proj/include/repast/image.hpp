#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace repast {

/// H x W x 3 image, row-major, interleaved RGB, values nominally in [0, 1].
struct ImageF {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    ImageF() = default;
    ImageF(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool same_shape(const ImageF& o) const { return height == o.height && width == o.width; }
    bool operator==(const ImageF&) const = default;
};

/// 8-bit RGB image, the on-disk representation.
struct ImageU8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    ImageU8() = default;
    ImageU8(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0) {}

    bool operator==(const ImageU8&) const = default;
};

inline std::uint8_t quantize_unit(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline ImageU8 to_u8(const ImageF& im) {
    ImageU8 out(im.height, im.width);
    std::transform(im.data.begin(), im.data.end(), out.data.begin(), quantize_unit);
    return out;
}

inline ImageF to_float(const ImageU8& im) {
    ImageF out(im.height, im.width);
    std::transform(im.data.begin(), im.data.end(), out.data.begin(), [](std::uint8_t v) { return v / 255.0; });
    return out;
}

}  // namespace repast
