#include "d3ssl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d3ssl/error.hpp"
#include "d3ssl/image.hpp"

namespace d3ssl::augment {

using geometry::pixel_span;
using geometry::PixelSpan;

namespace {

void check_unit_range(const Range& r, const char* name, bool allow_zero_lo = false)
{
    const bool lo_ok = allow_zero_lo ? r.lo >= 0.0 : r.lo > 0.0;
    if (!lo_ok || r.hi > 1.0 || r.lo > r.hi)
        throw ConfigError(std::string(name) + " must be an ordered range within (0,1]");
}

bool inside_any(double cx, double cy, std::span<const BBox> regions)
{
    for (const auto& r : regions)
        if (cx >= r.x1 && cx < r.x2 && cy >= r.y1 && cy < r.y2)
            return true;
    return false;
}

template <typename Fn>
void for_each_pixel(const BBox& b, int W, int H, Fn&& fn)
{
    const PixelSpan xs = pixel_span(b.x1, b.x2, W);
    const PixelSpan ys = pixel_span(b.y1, b.y2, H);
    for (int y = ys.begin; y < ys.end; ++y)
        for (int x = xs.begin; x < xs.end; ++x)
            fn(x, y);
}

// Torchvision-style random resized crop on the integer pixel grid.
BBox sample_crop(int W, int H, Rng& rng, const AugConfig& cfg)
{
    const double area = static_cast<double>(W) * H;
    const double log_lo = std::log(cfg.crop_aspect.lo);
    const double log_hi = std::log(cfg.crop_aspect.hi);
    for (int attempt = 0; attempt < 10; ++attempt)
    {
        const double target = area * uniform(rng, cfg.crop_scale.lo, cfg.crop_scale.hi);
        const double aspect = std::exp(uniform(rng, log_lo, log_hi));
        const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
        const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
        if (w > 0 && h > 0 && w <= W && h <= H)
        {
            const int x = uniform_int(rng, 0, W - w);
            const int y = uniform_int(rng, 0, H - h);
            return {double(x), double(y), double(x + w), double(y + h)};
        }
    }
    return {0.0, 0.0, double(W), double(H)};
}

} // namespace

void AugConfig::validate() const
{
    if (view_size <= 0 || view_size % 2 != 0)
        throw ConfigError("view_size must be a positive even number");
    check_unit_range(crop_scale, "crop_scale");
    if (crop_aspect.lo <= 0.0 || crop_aspect.lo > crop_aspect.hi)
        throw ConfigError("crop_aspect must be an ordered positive range");
    if (min_visible < 0.0 || min_visible > 1.0)
        throw ConfigError("min_visible must lie in [0,1]");
    check_unit_range(prc_range, "prc_range");
    if (prc_range.hi >= 1.0)
        throw ConfigError("prc_range must lie strictly inside (0,1)");
    if (prc_cover_threshold < 0.0 || prc_cover_threshold > 1.0)
        throw ConfigError("prc_cover_threshold must lie in [0,1]");
    if (cutouts_per_proposal < 0)
        throw ConfigError("cutouts_per_proposal must be non-negative");
    check_unit_range(prm_scale_range, "prm_scale_range");
    if (prm_aspect_range.lo <= 0.0 || prm_aspect_range.lo > 1.0 || prm_aspect_range.hi < 1.0)
        throw ConfigError("prm_aspect_range must straddle 1");
    check_unit_range(rbj_scale_range, "rbj_scale_range");
    if (rbj_shift_frac < 0.0 || rbj_shift_frac >= 0.5)
        throw ConfigError("rbj_shift_frac must lie in [0,0.5)");
}

ViewSet make_views(const Tensor& image, std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg)
{
    if (image.empty())
        throw ShapeError("make_views: empty image");
    const int V = cfg.view_size;
    const int W = image.width();
    const int H = image.height();
    const BBox full{0.0, 0.0, double(W), double(H)};

    ViewSet views;
    views.crop = sample_crop(W, H, rng, cfg);
    for (int i = 0; i < static_cast<int>(proposals.size()); ++i)
    {
        const auto in_v2 = geometry::remap_box_to_view(proposals[i], views.crop, V, V, cfg.min_visible);
        if (!in_v2)
            continue;
        const auto in_v1 = geometry::remap_box_to_view(proposals[i], full, V, V, 0.0);
        if (!in_v1)
            continue;
        views.kept.push_back(i);
        views.boxes_v1.push_back(*in_v1);
        views.boxes_v2.push_back(*in_v2);
        views.boxes_v2s.push_back(in_v2->scaled(0.5, 0.5));
    }
    if (views.kept.empty())
        throw NoSurvivingProposals("no proposal survives crop " + views.crop.to_string());

    views.x1 = image::resize(image, V, V);
    views.x2 = image::crop_resize(image, views.crop, V, V);
    views.x2s = image::downsample2x(views.x2);
    return views;
}

std::vector<CutoutRecord> plan_cutouts(std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg)
{
    std::vector<int> order(proposals.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return proposals[a].area() > proposals[b].area(); });

    std::vector<CutoutRecord> plan;
    for (std::size_t rank = 0; rank < order.size(); ++rank)
    {
        const BBox& p = proposals[order[rank]];
        for (int c = 0; c < cfg.cutouts_per_proposal; ++c)
        {
            CutoutRecord rec;
            rec.proposal = order[rank];
            rec.area_fraction = uniform(rng, cfg.prc_range.lo, cfg.prc_range.hi);
            const double side = std::sqrt(rec.area_fraction);
            const double w = p.width() * side;
            const double h = p.height() * side;
            const double x = uniform(rng, p.x1, p.x2 - w);
            const double y = uniform(rng, p.y1, p.y2 - h);
            rec.rect = {x, y, x + w, y + h};
            for (std::size_t later = rank + 1; later < order.size(); ++later)
            {
                const BBox& smaller = proposals[order[later]];
                if (geometry::coverage_fraction(rec.rect, smaller) > cfg.prc_cover_threshold)
                    rec.restored.push_back(*geometry::intersect(rec.rect, smaller));
            }
            plan.push_back(std::move(rec));
        }
    }
    return plan;
}

void apply_cutouts(Tensor& image, std::span<const CutoutRecord> plan, float fill)
{
    for (const auto& rec : plan)
        for_each_pixel(rec.rect, image.width(), image.height(), [&](int x, int y) {
            if (inside_any(x + 0.5, y + 0.5, rec.restored))
                return;
            for (int c = 0; c < image.channels(); ++c)
                image.at(c, y, x) = fill;
        });
}

void apply_cutouts(Mask& mask, std::span<const CutoutRecord> plan)
{
    for (const auto& rec : plan)
        for_each_pixel(rec.rect, mask.width(), mask.height(), [&](int x, int y) {
            if (!inside_any(x + 0.5, y + 0.5, rec.restored))
                mask.at(x, y) = 0;
        });
}

PrcResult prc(const Tensor& image, std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg)
{
    PrcResult out{image, plan_cutouts(proposals, rng, cfg)};
    apply_cutouts(out.image, out.cutouts, cfg.prc_fill);
    return out;
}

Mask prc(const Mask& mask, std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg)
{
    Mask out = mask;
    apply_cutouts(out, plan_cutouts(proposals, rng, cfg));
    return out;
}

std::string to_string(Direction d)
{
    switch (d)
    {
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Left: return "left";
    case Direction::Right: return "right";
    }
    return "?";
}

PrmResult prm(const Tensor& image, std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg)
{
    const int W = image.width();
    const int H = image.height();
    PrmResult out{image, std::vector<BBox>(proposals.begin(), proposals.end()), {}};

    for (int i = 0; i < static_cast<int>(proposals.size()); ++i)
    {
        const BBox& box = proposals[i];
        const PixelSpan cols = pixel_span(box.x1, box.x2, W);
        const PixelSpan rows = pixel_span(box.y1, box.y2, H);
        if (cols.empty() || rows.empty())
            continue;

        // Directions with at least one background pixel beyond the edge.
        std::vector<Direction> feasible;
        if (rows.begin > 0) feasible.push_back(Direction::Up);
        if (rows.end < H) feasible.push_back(Direction::Down);
        if (cols.begin > 0) feasible.push_back(Direction::Left);
        if (cols.end < W) feasible.push_back(Direction::Right);
        if (feasible.empty())
            continue;
        const Direction dir = feasible[uniform_int(rng, 0, static_cast<int>(feasible.size()) - 1)];
        const bool vertical_edge = dir == Direction::Left || dir == Direction::Right;

        // Rectangle of the configured area and aspect; half of its depth
        // lies inside the box, and it must fit along the edge.
        double w = 0.0, h = 0.0;
        bool found = false;
        for (int attempt = 0; attempt < 16 && !found; ++attempt)
        {
            const double area = box.area() * uniform(rng, cfg.prm_scale_range.lo, cfg.prm_scale_range.hi);
            const double aspect = uniform(rng, cfg.prm_aspect_range.lo, cfg.prm_aspect_range.hi);
            w = std::sqrt(area * aspect);
            h = std::sqrt(area / aspect);
            found = vertical_edge ? (h <= box.height() && 0.5 * w <= box.width())
                                  : (w <= box.width() && 0.5 * h <= box.height());
        }
        if (!found)
            continue;

        PrmRecord rec;
        rec.proposal = i;
        rec.direction = dir;
        if (vertical_edge)
        {
            const double y0 = uniform(rng, box.y1, box.y2 - h);
            const double edge = dir == Direction::Left ? box.x1 : box.x2;
            rec.rect = {edge - 0.5 * w, y0, edge + 0.5 * w, y0 + h};
        }
        else
        {
            const double x0 = uniform(rng, box.x1, box.x2 - w);
            const double edge = dir == Direction::Up ? box.y1 : box.y2;
            rec.rect = {x0, edge - 0.5 * h, x0 + w, edge + 0.5 * h};
        }

        const BBox inner = *geometry::intersect(rec.rect, box);
        PixelSpan ic = pixel_span(inner.x1, inner.x2, W);
        PixelSpan ir = pixel_span(inner.y1, inner.y2, H);
        ic = {std::max(ic.begin, cols.begin), std::min(ic.end, cols.end)};
        ir = {std::max(ir.begin, rows.begin), std::min(ir.end, rows.end)};
        if (ic.empty() || ir.empty())
            continue;

        // Copy depth is bounded by the background available past the edge.
        int dx = 0, dy = 0;
        switch (dir)
        {
        case Direction::Left:
            rec.shift = std::min(ic.end - ic.begin, cols.begin);
            ic.end = ic.begin + rec.shift;
            dx = -rec.shift;
            break;
        case Direction::Right:
            rec.shift = std::min(ic.end - ic.begin, W - cols.end);
            ic.begin = ic.end - rec.shift;
            dx = rec.shift;
            break;
        case Direction::Up:
            rec.shift = std::min(ir.end - ir.begin, rows.begin);
            ir.end = ir.begin + rec.shift;
            dy = -rec.shift;
            break;
        case Direction::Down:
            rec.shift = std::min(ir.end - ir.begin, H - rows.end);
            ir.begin = ir.end - rec.shift;
            dy = rec.shift;
            break;
        }
        rec.replaced = {double(ic.begin), double(ir.begin), double(ic.end), double(ir.end)};

        if (cfg.prm_mode == PrmMode::PasteBackground)
        {
            for (int c = 0; c < image.channels(); ++c)
                for (int y = ir.begin; y < ir.end; ++y)
                    for (int x = ic.begin; x < ic.end; ++x)
                        out.image.at(c, y, x) = image.at(c, y + dy, x + dx);
        }
        else
        {
            // Grow the box over the background strip that would have been copied.
            BBox& b = out.boxes[i];
            switch (dir)
            {
            case Direction::Left: b.x1 = std::max(0.0, b.x1 - rec.shift); break;
            case Direction::Right: b.x2 = std::min(double(W), b.x2 + rec.shift); break;
            case Direction::Up: b.y1 = std::max(0.0, b.y1 - rec.shift); break;
            case Direction::Down: b.y2 = std::min(double(H), b.y2 + rec.shift); break;
            }
        }
        out.records.push_back(rec);
    }
    return out;
}

BBox rbj_apply(const BBox& box, const JitterDraw& draw)
{
    const double w = box.width() * draw.scale_x;
    const double h = box.height() * draw.scale_y;
    const double cx = box.center_x() + draw.shift_x * box.width();
    const double cy = box.center_y() + draw.shift_y * box.height();
    const BBox jittered{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    const auto inside = geometry::intersect(jittered, box);
    return inside ? *inside : box;
}

BBox rbj(const BBox& box, Rng& rng, const AugConfig& cfg)
{
    JitterDraw d;
    d.scale_x = uniform(rng, cfg.rbj_scale_range.lo, cfg.rbj_scale_range.hi);
    d.scale_y = uniform(rng, cfg.rbj_scale_range.lo, cfg.rbj_scale_range.hi);
    d.shift_x = uniform(rng, -cfg.rbj_shift_frac, cfg.rbj_shift_frac);
    d.shift_y = uniform(rng, -cfg.rbj_shift_frac, cfg.rbj_shift_frac);
    return rbj_apply(box, d);
}

Mask build_foreground_mask(std::span<const BBox> boxes, int W, int H)
{
    Mask m(W, H);
    for (const auto& b : boxes)
        m.paint(b);
    return m;
}

Tensor compose(const Tensor& x2, const Mask& m, const Tensor& xb, const Mask& m_hat, Shift t)
{
    if (!x2.same_shape(xb) || m.width() != x2.width() || m.height() != x2.height() ||
        m_hat.width() != x2.width() || m_hat.height() != x2.height())
        throw ShapeMismatch("compose: x2 " + x2.shape_string() + ", xb " + xb.shape_string() + " and masks differ");

    Tensor x3 = xb;
    const int W = x2.width();
    const int H = x2.height();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
        {
            if (!m_hat.at(x, y))
                continue;
            const int sx = x - t.tx;
            const int sy = y - t.ty;
            if (sx < 0 || sx >= W || sy < 0 || sy >= H)
                throw ShapeMismatch("compose: shifted mask reads outside x2");
            for (int c = 0; c < x2.channels(); ++c)
                x3.at(c, y, x) = x2.at(c, sy, sx);
        }
    return x3;
}

} // namespace d3ssl::augment
