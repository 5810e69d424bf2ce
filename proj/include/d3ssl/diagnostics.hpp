#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d3ssl/encoder.hpp"
#include "d3ssl/feature.hpp"
#include "d3ssl/tensor.hpp"

namespace d3ssl::diagnostics {

using encoder::Encoder;
using encoder::Parameters;
using geometry::BBox;

// Per-object feature at a backbone stage: RoIAlign of the stage map at the
// box, averaged over the pooled grid. Not normalized.
Feature stage_feature(const Encoder& enc, const std::vector<Tensor>& maps, int stage, const BBox& box);

// cos(a_with_b, b) / cos(a_alone, b). Throws ZeroSimilarity when
// |cos(a_alone, b)| < 1e-8.
double coupling_ratio(const Feature& a_with_b, const Feature& a_alone, const Feature& b);

// Mean cosine similarity between features[4] (the center of a row-major
// 3x3 grid) and the other eight. Throws ShapeError unless given nine.
double mean_center_similarity(std::span<const Feature> features);

// --- coupling ----------------------------------------------------------------

struct CouplingScene
{
    Tensor with_b;  // A and B side by side on black
    Tensor alone;   // A alone at the same position
    BBox box_a;
    BBox box_b;
};

// A's right edge abuts B's left edge at the canvas center, both vertically
// centered. Crops must have equal height and fit the canvas.
CouplingScene coupling_scene(const Tensor& a, const Tensor& b, int canvas);

// CR of A with respect to B at each stage (1-based).
std::vector<double> coupling_rates(const Encoder& enc, const Parameters& params, const Tensor& a, const Tensor& b,
                                   int canvas, std::span<const int> stages);
double coupling_rate(const Encoder& enc, const Parameters& params, const Tensor& a, const Tensor& b, int canvas,
                     int stage);

// --- positional bias ---------------------------------------------------------

// The patch repeated in a 3x3 grid. Throws ShapeError unless the patch is
// square and the canvas side is a multiple of the C4 stride.
Tensor tile_3x3(const Tensor& patch);

// MCS per stage. Throws ShapeError unless the patch side is a multiple of
// every probed stage's stride.
std::vector<double> grid_mcs_stages(const Encoder& enc, const Parameters& params, const Tensor& patch,
                                    std::span<const int> stages);
double grid_mcs(const Encoder& enc, const Parameters& params, const Tensor& patch, int stage);

// --- fixtures and reports ----------------------------------------------------

struct CouplingPair
{
    Tensor a;
    Tensor b;
};

struct FixtureSpec
{
    int pairs = 24;
    int patches = 24;
    int canvas = 64;        // coupling canvas side
    int object_size = 24;   // coupling crop side
    int patch_size = 32;    // MCS patch side
};

struct FixtureSet
{
    std::uint64_t seed = 0;
    FixtureSpec spec;
    std::vector<CouplingPair> pairs;   // A and B of different classes
    std::vector<Tensor> patches;       // small synthetic scenes
};

FixtureSet make_fixtures(std::uint64_t seed, const FixtureSpec& spec = {});

struct StageReport
{
    int stage = 0;
    double cr = 0.0;          // geometric mean over pairs
    double cr_log_std = 0.0;  // std of log CR
    double mcs = 0.0;         // arithmetic mean over patches
    double mcs_std = 0.0;
    int cr_samples = 0;
    int mcs_samples = 0;

    friend bool operator==(const StageReport&, const StageReport&) = default;
};

struct DiagnosticsReport
{
    std::string checkpoint;
    std::uint64_t fixture_seed = 0;
    int sample_count = 0;
    std::vector<StageReport> stages;

    double mean_cr() const;
    double mean_mcs() const;
    std::string to_json() const;
    static DiagnosticsReport from_json(const std::string& text); // throws DataError

    friend bool operator==(const DiagnosticsReport&, const DiagnosticsReport&) = default;
};

inline constexpr int kMinFixtures = 20;

enum class Probe
{
    Coupling = 1,
    Position = 2,
    Both = 3,
};

// Throws InsufficientFixtures when fewer than 20 pairs (coupling) or
// patches (position) are supplied.
DiagnosticsReport probe_report(const Encoder& enc, const Parameters& params, const FixtureSet& fixtures,
                               std::span<const int> stages, Probe probe = Probe::Both);

// One line per series over the probed stages, written as PNG.
struct Series
{
    std::string label;
    std::vector<double> values;
};

void plot_stage_curves(const std::filesystem::path& path, const std::string& title, std::span<const int> stages,
                       std::span<const Series> series);

} // namespace d3ssl::diagnostics
