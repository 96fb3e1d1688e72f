#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "rsgen/raster.hpp"
#include "rsgen/rng.hpp"

namespace rsgen::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("rsgen-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Raster random_raster(int h, int w, int c, std::uint64_t seed) {
    Raster r(h, w, c);
    Rng rng(seed);
    for (auto& v : r.data) v = static_cast<std::uint8_t>(rng.below(256));
    return r;
}

inline Raster solid_raster(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Raster img(h, w, 3);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        img.data[p * 3] = r;
        img.data[p * 3 + 1] = g;
        img.data[p * 3 + 2] = b;
    }
    return img;
}

}  // namespace rsgen::testing
