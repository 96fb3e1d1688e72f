#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace rsgen {

// Interleaved row-major image (HWC). 8-bit per channel.
struct Raster {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> data;

    Raster() = default;
    Raster(int h, int w, int c, std::uint8_t fill = 0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t index(int y, int x, int ch) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + ch;
    }
    std::uint8_t& at(int y, int x, int ch) { return data[index(y, x, ch)]; }
    std::uint8_t at(int y, int x, int ch) const { return data[index(y, x, ch)]; }

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
    bool empty() const { return data.empty(); }

    friend bool operator==(const Raster&, const Raster&) = default;
};

// Same layout as Raster with real-valued samples (normalized images).
struct RealRaster {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    RealRaster() = default;
    RealRaster(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t index(int y, int x, int ch) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + ch;
    }
    double& at(int y, int x, int ch) { return data[index(y, x, ch)]; }
    double at(int y, int x, int ch) const { return data[index(y, x, ch)]; }

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

    friend bool operator==(const RealRaster&, const RealRaster&) = default;
};

}  // namespace rsgen
