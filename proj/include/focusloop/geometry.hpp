#pragma once

#include <boost/rational.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace focusloop {

using Rational = boost::rational<std::int64_t>;

/// Pixel box with exclusive upper bounds: width = x2 - x1.
struct Region {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const noexcept { return x2 - x1; }
    int height() const noexcept { return y2 - y1; }
    bool non_degenerate() const noexcept { return x1 < x2 && y1 < y2; }
    /// 0 <= x1 < x2 <= frame_width and 0 <= y1 < y2 <= frame_height.
    bool valid_in(int frame_width, int frame_height) const noexcept {
        return 0 <= x1 && x1 < x2 && x2 <= frame_width && 0 <= y1 && y1 < y2 && y2 <= frame_height;
    }
    bool contains(const Region& inner) const noexcept {
        return x1 <= inner.x1 && y1 <= inner.y1 && inner.x2 <= x2 && inner.y2 <= y2;
    }
    std::array<int, 4> as_array() const noexcept { return {x1, y1, x2, y2}; }
    std::string to_string() const;

    friend bool operator==(const Region&, const Region&) = default;
};

/// Region with rational corners, used for exact frame arithmetic.
struct ExactBox {
    Rational x1, y1, x2, y2;

    static ExactBox of(const Region& r) { return {r.x1, r.y1, r.x2, r.y2}; }
    bool is_integral() const noexcept;
    /// Throws InvalidRegion when a corner is not an integer.
    Region to_region() const;
    /// Smallest integer region covering the box.
    Region enclosing() const;

    friend bool operator==(const ExactBox&, const ExactBox&) = default;
};

/// Maps a parent frame into a child frame: child = scale * (parent - offset).
/// A zoom on region R by factor k is {k, R.x1, R.y1}. Composing the transforms
/// of a chain yields the root-to-view map, whose offsets are root pixels.
struct FrameTransform {
    Rational scale{1};
    Rational offset_x{0};
    Rational offset_y{0};

    static FrameTransform identity() { return {}; }
    static FrameTransform zoom(const Region& region, int factor);

    /// Apply `first`, then `second`.
    static FrameTransform compose(const FrameTransform& first, const FrameTransform& second);

    ExactBox to_child(const ExactBox& parent) const;
    ExactBox to_parent(const ExactBox& child) const;

    friend bool operator==(const FrameTransform&, const FrameTransform&) = default;
};

/// Root-to-deepest map of a zoom chain (identity for an empty chain).
FrameTransform compose_chain(std::span<const FrameTransform> chain);

/// Maps a region given in the deepest frame of `chain` back to root pixels.
/// Exact whenever the result is integral; otherwise rounds outward.
Region to_root_frame(const Region& region, std::span<const FrameTransform> chain);
ExactBox to_root_frame_exact(const ExactBox& box, std::span<const FrameTransform> chain);
ExactBox from_root_frame_exact(const ExactBox& box, std::span<const FrameTransform> chain);

std::string to_string(const Rational& r);

}  // namespace focusloop
