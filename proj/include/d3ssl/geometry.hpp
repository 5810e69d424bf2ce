#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d3ssl/rng.hpp"

namespace d3ssl::geometry {

// Axis-aligned box in continuous pixel coordinates, origin top-left.
// Pixel (col, row) belongs to the box iff its center (col+0.5, row+0.5)
// lies in [x1, x2) x [y1, y2).
struct BBox
{
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x1 + x2); }
    double center_y() const { return 0.5 * (y1 + y2); }
    bool valid() const { return x1 < x2 && y1 < y2; }
    bool inside(double W, double H) const { return x1 >= 0.0 && y1 >= 0.0 && x2 <= W && y2 <= H; }
    bool contains(const BBox& other) const
    {
        return other.x1 >= x1 && other.y1 >= y1 && other.x2 <= x2 && other.y2 <= y2;
    }

    BBox scaled(double sx, double sy) const { return {x1 * sx, y1 * sy, x2 * sx, y2 * sy}; }
    BBox translated(double dx, double dy) const { return {x1 + dx, y1 + dy, x2 + dx, y2 + dy}; }

    std::string to_string() const;

    friend bool operator==(const BBox&, const BBox&) = default;
};

// Integer pixel offset shared by a set of boxes.
struct Shift
{
    int tx = 0;
    int ty = 0;

    friend bool operator==(const Shift&, const Shift&) = default;
};

inline BBox apply(const BBox& b, Shift t)
{
    return b.translated(t.tx, t.ty);
}

// Binary H x W grid.
class Mask
{
public:
    Mask() = default;
    Mask(int width, int height, std::uint8_t fill = 0);

    int width() const { return m_width; }
    int height() const { return m_height; }
    std::uint8_t& at(int x, int y) { return m_bits[static_cast<std::size_t>(y) * m_width + x]; }
    std::uint8_t at(int x, int y) const { return m_bits[static_cast<std::size_t>(y) * m_width + x]; }
    std::span<const std::uint8_t> bits() const { return m_bits; }
    std::size_t popcount() const;

    // Sets every pixel whose center lies inside b.
    void paint(const BBox& b, std::uint8_t value = 1);

    Mask translated(Shift t) const;

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    int m_width = 0;
    int m_height = 0;
    std::vector<std::uint8_t> m_bits;
};

// Half-open index range [begin, end) of pixels whose centers fall in
// [lo, hi), clipped to [0, limit).
struct PixelSpan
{
    int begin = 0;
    int end = 0;
    bool empty() const { return end <= begin; }
};
PixelSpan pixel_span(double lo, double hi, int limit);

std::optional<BBox> intersect(const BBox& a, const BBox& b);

double iou(const BBox& a, const BBox& b);

// area(region ∩ proposal) / area(proposal)
double coverage_fraction(const BBox& region, const BBox& proposal);

// Throws DegenerateBox when nothing is left after clipping to [0,W]x[0,H].
BBox clamp_box(const BBox& b, double W, double H);

// Maps b into the coordinates of a view produced by cropping `crop` and
// resizing it to out_w x out_h. Returns nullopt (dropped) when the visible
// part of b is smaller than min_visible of its area.
std::optional<BBox> remap_box_to_view(const BBox& b, const BBox& crop, int out_w, int out_h,
                                      double min_visible = 0.5);

// Inverse of the affine part of remap_box_to_view.
BBox unmap_box_from_view(const BBox& v, const BBox& crop, int out_w, int out_h);

// Draws one integer shift that keeps every box inside [0,W]x[0,H].
// Throws EmptyProposalSet on an empty set.
Shift sample_shared_shift(std::span<const BBox> boxes, int W, int H, Rng& rng);

struct ShiftRange
{
    int tx_min, tx_max, ty_min, ty_max;
};
ShiftRange feasible_shift_range(std::span<const BBox> boxes, int W, int H);

} // namespace d3ssl::geometry
