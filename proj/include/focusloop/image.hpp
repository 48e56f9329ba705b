#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace focusloop {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Read-only pixel provider. Implementations must be safe to call from
/// several threads at once.
class PixelSource {
public:
    virtual ~PixelSource() = default;
    virtual Rgb at(int x, int y) const = 0;
};

/// Row-major RGB buffer.
class DenseRaster final : public PixelSource {
public:
    DenseRaster(int width, std::vector<Rgb> pixels) : width_(width), pixels_(std::move(pixels)) {}

    Rgb at(int x, int y) const override {
        return pixels_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                       static_cast<std::size_t>(x)];
    }
    const std::vector<Rgb>& pixels() const noexcept { return pixels_; }

private:
    int width_;
    std::vector<Rgb> pixels_;
};

/// An image handle: dimensions plus an optional pixel source and/or a file
/// path. Immutable; copies share the pixel buffer.
class ImageRef {
public:
    static ImageRef from_raster(std::string id, int width, int height, std::vector<Rgb> pixels);
    static ImageRef from_source(std::string id, int width, int height,
                                std::shared_ptr<const PixelSource> source);
    static ImageRef from_path(std::string id, int width, int height, std::string path);
    /// Dimensions only; used when reading trajectories back from disk.
    static ImageRef descriptor(std::string id, int width, int height);

    const std::string& id() const noexcept { return id_; }
    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    const std::optional<std::string>& path() const noexcept { return path_; }
    bool has_pixels() const noexcept { return pixels_ != nullptr; }
    const std::shared_ptr<const PixelSource>& source() const noexcept { return pixels_; }

    /// Throws InvalidArgument when the image carries no pixels.
    Rgb pixel(int x, int y) const;

    /// Same pixels, recording where they came from.
    ImageRef with_path(std::string path) const;
    /// Same image under another id.
    ImageRef renamed(std::string id) const;

    friend bool operator==(const ImageRef& a, const ImageRef& b) {
        return a.id_ == b.id_ && a.width_ == b.width_ && a.height_ == b.height_ && a.path_ == b.path_;
    }

private:
    ImageRef(std::string id, int width, int height) : id_(std::move(id)), width_(width), height_(height) {}

    std::string id_;
    int width_ = 0;
    int height_ = 0;
    std::optional<std::string> path_;
    std::shared_ptr<const PixelSource> pixels_;
};

// Binary PPM (P6, maxval 255) is the only on-disk codec.
struct PpmHeader {
    int width = 0;
    int height = 0;
};

PpmHeader read_ppm_header(const std::filesystem::path& path);
/// Decodes the whole file. The returned image keeps `path` as its source path.
ImageRef read_ppm(const std::filesystem::path& path, std::string id = {});
void write_ppm(const std::filesystem::path& path, const ImageRef& image);

/// Returns pixels of `image`, decoding from its path when it has no source.
ImageRef ensure_pixels(const ImageRef& image);

/// Nearest-neighbour resample so that the longer side equals `long_side`.
/// Images without pixels are rescaled as descriptors (path kept).
ImageRef resize_long_side(const ImageRef& image, int long_side);

}  // namespace focusloop
