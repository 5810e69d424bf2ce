#include "d3ssl/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "d3ssl/error.hpp"

namespace d3ssl::geometry {

std::string BBox::to_string() const
{
    std::ostringstream os;
    os << "(" << x1 << "," << y1 << "," << x2 << "," << y2 << ")";
    return os.str();
}

Mask::Mask(int width, int height, std::uint8_t fill)
    : m_width(width)
    , m_height(height)
    , m_bits(static_cast<std::size_t>(width) * height, fill)
{
}

std::size_t Mask::popcount() const
{
    return static_cast<std::size_t>(std::count(m_bits.begin(), m_bits.end(), std::uint8_t{1}));
}

PixelSpan pixel_span(double lo, double hi, int limit)
{
    // center c + 0.5 in [lo, hi)  <=>  c in [lo - 0.5, hi - 0.5)
    int begin = static_cast<int>(std::ceil(lo - 0.5));
    int end = static_cast<int>(std::ceil(hi - 0.5));
    return {std::clamp(begin, 0, limit), std::clamp(end, 0, limit)};
}

void Mask::paint(const BBox& b, std::uint8_t value)
{
    const PixelSpan xs = pixel_span(b.x1, b.x2, m_width);
    const PixelSpan ys = pixel_span(b.y1, b.y2, m_height);
    for (int y = ys.begin; y < ys.end; ++y)
        for (int x = xs.begin; x < xs.end; ++x)
            at(x, y) = value;
}

Mask Mask::translated(Shift t) const
{
    Mask out(m_width, m_height);
    for (int y = 0; y < m_height; ++y)
    {
        const int sy = y - t.ty;
        if (sy < 0 || sy >= m_height)
            continue;
        for (int x = 0; x < m_width; ++x)
        {
            const int sx = x - t.tx;
            if (sx >= 0 && sx < m_width)
                out.at(x, y) = at(sx, sy);
        }
    }
    return out;
}

std::optional<BBox> intersect(const BBox& a, const BBox& b)
{
    BBox r{std::max(a.x1, b.x1), std::max(a.y1, b.y1), std::min(a.x2, b.x2), std::min(a.y2, b.y2)};
    if (!r.valid())
        return std::nullopt;
    return r;
}

double iou(const BBox& a, const BBox& b)
{
    const auto inter = intersect(a, b);
    if (!inter)
        return 0.0;
    const double i = inter->area();
    const double u = a.area() + b.area() - i;
    return u > 0.0 ? i / u : 0.0;
}

double coverage_fraction(const BBox& region, const BBox& proposal)
{
    const auto inter = intersect(region, proposal);
    if (!inter || proposal.area() <= 0.0)
        return 0.0;
    return inter->area() / proposal.area();
}

BBox clamp_box(const BBox& b, double W, double H)
{
    BBox r{std::clamp(b.x1, 0.0, W), std::clamp(b.y1, 0.0, H), std::clamp(b.x2, 0.0, W), std::clamp(b.y2, 0.0, H)};
    if (!r.valid())
        throw DegenerateBox("box " + b.to_string() + " is empty after clamping to " + std::to_string(W) + "x" +
                            std::to_string(H));
    return r;
}

std::optional<BBox> remap_box_to_view(const BBox& b, const BBox& crop, int out_w, int out_h, double min_visible)
{
    const auto visible = intersect(b, crop);
    if (!visible || b.area() <= 0.0)
        return std::nullopt;
    if (visible->area() / b.area() < min_visible)
        return std::nullopt;
    const double sx = out_w / crop.width();
    const double sy = out_h / crop.height();
    return visible->translated(-crop.x1, -crop.y1).scaled(sx, sy);
}

BBox unmap_box_from_view(const BBox& v, const BBox& crop, int out_w, int out_h)
{
    const double sx = crop.width() / out_w;
    const double sy = crop.height() / out_h;
    return v.scaled(sx, sy).translated(crop.x1, crop.y1);
}

ShiftRange feasible_shift_range(std::span<const BBox> boxes, int W, int H)
{
    if (boxes.empty())
        throw EmptyProposalSet("cannot sample a shared shift for an empty box set");
    double min_x1 = boxes[0].x1, min_y1 = boxes[0].y1, max_x2 = boxes[0].x2, max_y2 = boxes[0].y2;
    for (const auto& b : boxes)
    {
        min_x1 = std::min(min_x1, b.x1);
        min_y1 = std::min(min_y1, b.y1);
        max_x2 = std::max(max_x2, b.x2);
        max_y2 = std::max(max_y2, b.y2);
    }
    // Integer shifts only, so composition is an exact pixel copy.
    ShiftRange r{static_cast<int>(std::ceil(-min_x1)), static_cast<int>(std::floor(W - max_x2)),
                 static_cast<int>(std::ceil(-min_y1)), static_cast<int>(std::floor(H - max_y2))};
    if (r.tx_min > r.tx_max || r.ty_min > r.ty_max)
        throw DegenerateBox("boxes exceed the image bounds; no feasible shift");
    return r;
}

Shift sample_shared_shift(std::span<const BBox> boxes, int W, int H, Rng& rng)
{
    const ShiftRange r = feasible_shift_range(boxes, W, H);
    const int tx = uniform_int(rng, r.tx_min, r.tx_max);
    const int ty = uniform_int(rng, r.ty_min, r.ty_max);
    return {tx, ty};
}

} // namespace d3ssl::geometry
