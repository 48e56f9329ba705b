#include "focusloop/geometry.hpp"

#include "focusloop/error.hpp"

#include <cassert>

namespace focusloop {

namespace {

std::int64_t floor_of(const Rational& r) {
    std::int64_t q = r.numerator() / r.denominator();
    if (r.numerator() % r.denominator() != 0 && r.numerator() < 0) --q;
    return q;
}

std::int64_t ceil_of(const Rational& r) {
    std::int64_t q = r.numerator() / r.denominator();
    if (r.numerator() % r.denominator() != 0 && r.numerator() > 0) ++q;
    return q;
}

}  // namespace

std::string Region::to_string() const {
    return "[" + std::to_string(x1) + ", " + std::to_string(y1) + ", " + std::to_string(x2) + ", " +
           std::to_string(y2) + "]";
}

bool ExactBox::is_integral() const noexcept {
    return x1.denominator() == 1 && y1.denominator() == 1 && x2.denominator() == 1 &&
           y2.denominator() == 1;
}

Region ExactBox::to_region() const {
    if (!is_integral()) throw Error(ErrorCode::InvalidRegion, "box has fractional corners");
    return {static_cast<int>(x1.numerator()), static_cast<int>(y1.numerator()),
            static_cast<int>(x2.numerator()), static_cast<int>(y2.numerator())};
}

Region ExactBox::enclosing() const {
    return {static_cast<int>(floor_of(x1)), static_cast<int>(floor_of(y1)),
            static_cast<int>(ceil_of(x2)), static_cast<int>(ceil_of(y2))};
}

FrameTransform FrameTransform::zoom(const Region& region, int factor) {
    if (factor < 1) throw Error(ErrorCode::InvalidArgument, "zoom factor must be >= 1");
    return {Rational(factor), Rational(region.x1), Rational(region.y1)};
}

FrameTransform FrameTransform::compose(const FrameTransform& first, const FrameTransform& second) {
    // c = s2 * (s1 * (p - o1) - o2) = s1 s2 * (p - (o1 + o2 / s1))
    return {first.scale * second.scale, first.offset_x + second.offset_x / first.scale,
            first.offset_y + second.offset_y / first.scale};
}

ExactBox FrameTransform::to_child(const ExactBox& p) const {
    return {scale * (p.x1 - offset_x), scale * (p.y1 - offset_y), scale * (p.x2 - offset_x),
            scale * (p.y2 - offset_y)};
}

ExactBox FrameTransform::to_parent(const ExactBox& c) const {
    return {c.x1 / scale + offset_x, c.y1 / scale + offset_y, c.x2 / scale + offset_x,
            c.y2 / scale + offset_y};
}

FrameTransform compose_chain(std::span<const FrameTransform> chain) {
    FrameTransform acc = FrameTransform::identity();
    for (const auto& t : chain) acc = FrameTransform::compose(acc, t);
    return acc;
}

ExactBox to_root_frame_exact(const ExactBox& box, std::span<const FrameTransform> chain) {
    ExactBox cur = box;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) cur = it->to_parent(cur);
    return cur;
}

ExactBox from_root_frame_exact(const ExactBox& box, std::span<const FrameTransform> chain) {
    ExactBox cur = box;
    for (const auto& t : chain) cur = t.to_child(cur);
    return cur;
}

Region to_root_frame(const Region& region, std::span<const FrameTransform> chain) {
    const ExactBox root = to_root_frame_exact(ExactBox::of(region), chain);
    Region out = root.enclosing();
    // scale > 0 keeps a non-empty box non-empty
    assert(!region.non_degenerate() || out.non_degenerate());
    return out;
}

std::string to_string(const Rational& r) {
    if (r.denominator() == 1) return std::to_string(r.numerator());
    return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

}  // namespace focusloop
