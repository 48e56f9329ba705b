#include "focusloop/image.hpp"

#include "focusloop/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace focusloop {

namespace {

void check_dims(int width, int height) {
    if (width < 1 || height < 1) {
        throw Error(ErrorCode::InvalidDimension,
                    "image must be at least 1x1, got " + std::to_string(width) + "x" +
                        std::to_string(height));
    }
}

// Skips whitespace and '#' comments between PPM header tokens.
int read_header_int(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string ignored;
            std::getline(in, ignored);
        } else if (c != EOF && std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int value = -1;
    if (!(in >> value)) throw Error(ErrorCode::IoError, "truncated PPM header");
    return value;
}

PpmHeader parse_header(std::istream& in, const std::filesystem::path& path) {
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '6') {
        throw Error(ErrorCode::IoError, "not a binary PPM: " + path.string());
    }
    PpmHeader h;
    h.width = read_header_int(in);
    h.height = read_header_int(in);
    const int maxval = read_header_int(in);
    if (maxval != 255) throw Error(ErrorCode::IoError, "unsupported PPM maxval in " + path.string());
    in.get();  // single whitespace before the raster
    check_dims(h.width, h.height);
    return h;
}

}  // namespace

ImageRef ImageRef::from_raster(std::string id, int width, int height, std::vector<Rgb> pixels) {
    check_dims(width, height);
    if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw Error(ErrorCode::InvalidDimension, "raster has " + std::to_string(pixels.size()) +
                                                     " pixels, expected width*height");
    }
    ImageRef img(std::move(id), width, height);
    img.pixels_ = std::make_shared<const DenseRaster>(width, std::move(pixels));
    return img;
}

ImageRef ImageRef::from_source(std::string id, int width, int height,
                               std::shared_ptr<const PixelSource> source) {
    check_dims(width, height);
    if (!source) throw Error(ErrorCode::InvalidArgument, "null pixel source");
    ImageRef img(std::move(id), width, height);
    img.pixels_ = std::move(source);
    return img;
}

ImageRef ImageRef::from_path(std::string id, int width, int height, std::string path) {
    check_dims(width, height);
    ImageRef img(std::move(id), width, height);
    img.path_ = std::move(path);
    return img;
}

ImageRef ImageRef::descriptor(std::string id, int width, int height) {
    check_dims(width, height);
    return ImageRef(std::move(id), width, height);
}

Rgb ImageRef::pixel(int x, int y) const {
    if (!pixels_) throw Error(ErrorCode::InvalidArgument, "image '" + id_ + "' has no pixels");
    return pixels_->at(x, y);
}

ImageRef ImageRef::with_path(std::string path) const {
    ImageRef copy = *this;
    copy.path_ = std::move(path);
    return copy;
}

ImageRef ImageRef::renamed(std::string id) const {
    ImageRef copy = *this;
    copy.id_ = std::move(id);
    return copy;
}

PpmHeader read_ppm_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    return parse_header(in, path);
}

ImageRef read_ppm(const std::filesystem::path& path, std::string id) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    const PpmHeader h = parse_header(in, path);
    const std::size_t n = static_cast<std::size_t>(h.width) * static_cast<std::size_t>(h.height);
    std::vector<Rgb> pixels(n);
    static_assert(sizeof(Rgb) == 3);
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(n * 3));
    if (static_cast<std::size_t>(in.gcount()) != n * 3) {
        throw Error(ErrorCode::IoError, "truncated PPM raster in " + path.string());
    }
    if (id.empty()) id = path.filename().string();
    return ImageRef::from_raster(std::move(id), h.width, h.height, std::move(pixels))
        .with_path(path.string());
}

void write_ppm(const std::filesystem::path& path, const ImageRef& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    std::vector<Rgb> row(static_cast<std::size_t>(image.width()));
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) row[static_cast<std::size_t>(x)] = image.pixel(x, y);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 3));
    }
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

ImageRef ensure_pixels(const ImageRef& image) {
    if (image.has_pixels()) return image;
    if (!image.path()) {
        throw Error(ErrorCode::InvalidArgument, "image '" + image.id() + "' has neither pixels nor path");
    }
    ImageRef decoded = read_ppm(*image.path(), image.id());
    if (decoded.width() == image.width() && decoded.height() == image.height()) return decoded;
    // Declared dimensions differ from the file: the descriptor is a rescaled view.
    std::vector<Rgb> px(static_cast<std::size_t>(image.width()) * static_cast<std::size_t>(image.height()));
    for (int y = 0; y < image.height(); ++y) {
        const int sy = static_cast<int>(static_cast<long long>(y) * decoded.height() / image.height());
        for (int x = 0; x < image.width(); ++x) {
            const int sx = static_cast<int>(static_cast<long long>(x) * decoded.width() / image.width());
            px[static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width()) + static_cast<std::size_t>(x)] =
                decoded.pixel(sx, sy);
        }
    }
    return ImageRef::from_raster(image.id(), image.width(), image.height(), std::move(px));
}

ImageRef resize_long_side(const ImageRef& image, int long_side) {
    if (long_side < 1) throw Error(ErrorCode::InvalidDimension, "long side must be >= 1");
    const int w = image.width();
    const int h = image.height();
    int nw = long_side;
    int nh = long_side;
    if (w >= h) {
        nh = std::max(1, static_cast<int>((static_cast<long long>(h) * long_side + w / 2) / w));
    } else {
        nw = std::max(1, static_cast<int>((static_cast<long long>(w) * long_side + h / 2) / h));
    }
    const std::string id = image.id() + "@" + std::to_string(long_side);
    if (!image.has_pixels()) {
        if (image.path()) return ImageRef::from_path(id, nw, nh, *image.path());
        return ImageRef::descriptor(id, nw, nh);
    }

    class Resampled final : public PixelSource {
    public:
        Resampled(std::shared_ptr<const PixelSource> src, int sw, int sh, int dw, int dh)
            : src_(std::move(src)), sw_(sw), sh_(sh), dw_(dw), dh_(dh) {}
        Rgb at(int x, int y) const override {
            return src_->at(static_cast<int>(static_cast<long long>(x) * sw_ / dw_),
                            static_cast<int>(static_cast<long long>(y) * sh_ / dh_));
        }

    private:
        std::shared_ptr<const PixelSource> src_;
        int sw_, sh_, dw_, dh_;
    };
    return ImageRef::from_source(id, nw, nh, std::make_shared<const Resampled>(image.source(), w, h, nw, nh));
}

}  // namespace focusloop
