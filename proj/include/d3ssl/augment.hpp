#pragma once

#include <span>
#include <string>
#include <vector>

#include "d3ssl/geometry.hpp"
#include "d3ssl/rng.hpp"
#include "d3ssl/tensor.hpp"

namespace d3ssl::augment {

using geometry::BBox;
using geometry::Mask;
using geometry::Shift;

struct Range
{
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double v) const { return v >= lo && v <= hi; }
};

// How PRM injects background into a proposal.
enum class PrmMode
{
    PasteBackground, // copy the adjacent background strip over the box border
    ExpandRoi,       // leave pixels alone, grow the box over the strip instead
};

struct AugConfig
{
    int view_size = 224;                  // x1 and x2 side; x2s is half of it
    Range crop_scale{0.4, 1.0};           // area fraction of the x2 crop
    Range crop_aspect{3.0 / 4.0, 4.0 / 3.0};
    double min_visible = 0.5;             // box survival threshold in the x2 crop

    Range prc_range{0.2, 0.5};            // cutout area / proposal area
    double prc_cover_threshold = 0.3;
    int cutouts_per_proposal = 1;
    float prc_fill = 0.0f;

    Range prm_scale_range{0.2, 0.6};      // strip area / proposal area
    Range prm_aspect_range{3.0 / 4.0, 4.0 / 3.0};
    PrmMode prm_mode = PrmMode::PasteBackground;

    Range rbj_scale_range{0.8, 1.0};
    double rbj_shift_frac = 0.1;

    // Throws ConfigError when a range is out of (0,1] or inverted.
    void validate() const;
};

struct ViewSet
{
    Tensor x1;                  // whole image, view_size^2
    Tensor x2;                  // random resized crop, view_size^2
    Tensor x2s;                 // x2 downsampled 2x
    BBox crop;                  // x2's crop in source coordinates
    std::vector<BBox> boxes_v1;
    std::vector<BBox> boxes_v2;
    std::vector<BBox> boxes_v2s;
    std::vector<int> kept;      // source proposal index of each surviving box
};

// Throws NoSurvivingProposals when every proposal is dropped by the crop.
ViewSet make_views(const Tensor& image, std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg);

// --- proposal-based random cutout -------------------------------------------

struct CutoutRecord
{
    int proposal = 0;               // index into the caller's proposal list
    BBox rect;                      // erased rectangle
    double area_fraction = 0.0;     // rect area / proposal area
    std::vector<BBox> restored;     // parts of rect given back to smaller proposals
};

// Samples the cutouts for a proposal set (processed largest first) without
// touching pixels, so the same plan can be applied to images and masks.
std::vector<CutoutRecord> plan_cutouts(std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg);

// Erases each planned rectangle except its restored parts.
void apply_cutouts(Tensor& image, std::span<const CutoutRecord> plan, float fill);
void apply_cutouts(Mask& mask, std::span<const CutoutRecord> plan);

struct PrcResult
{
    Tensor image;
    std::vector<CutoutRecord> cutouts;
};

PrcResult prc(const Tensor& image, std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg);
Mask prc(const Mask& mask, std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg);

// --- proposal-based random mask ---------------------------------------------

enum class Direction
{
    Up,
    Down,
    Left,
    Right,
};

std::string to_string(Direction d);

struct PrmRecord
{
    int proposal = 0;
    Direction direction = Direction::Left;
    BBox rect;         // sampled rectangle, straddling the box edge
    BBox replaced;     // pixel region inside the box that was overwritten
    int shift = 0;     // source offset in pixels, away from the box
};

struct PrmResult
{
    Tensor image;
    std::vector<BBox> boxes;   // unchanged in PasteBackground mode
    std::vector<PrmRecord> records;
};

PrmResult prm(const Tensor& image, std::span<const BBox> proposals, Rng& rng, const AugConfig& cfg);

// --- restricted box jitter --------------------------------------------------

struct JitterDraw
{
    double scale_x = 1.0;
    double scale_y = 1.0;
    double shift_x = 0.0;   // fraction of the box width
    double shift_y = 0.0;
};

// Deterministic core of RBJ: rescale about the shifted center and
// intersect with the input box.
BBox rbj_apply(const BBox& box, const JitterDraw& draw);
BBox rbj(const BBox& box, Rng& rng, const AugConfig& cfg);

// --- de-positioning composition ---------------------------------------------

Mask build_foreground_mask(std::span<const BBox> boxes, int W, int H);

// x3(p) = x2(p - t) where m_hat(p) = 1, xb(p) elsewhere.
Tensor compose(const Tensor& x2, const Mask& m, const Tensor& xb, const Mask& m_hat, Shift t);

} // namespace d3ssl::augment
