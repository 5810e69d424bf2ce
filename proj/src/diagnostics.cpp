#include "d3ssl/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

#include "d3ssl/data.hpp"
#include "d3ssl/error.hpp"
#include "d3ssl/image.hpp"
#include "d3ssl/nn.hpp"

namespace d3ssl::diagnostics {

Feature stage_feature(const Encoder& enc, const std::vector<Tensor>& maps, int stage, const BBox& box)
{
    if (stage < 1 || stage > static_cast<int>(maps.size()))
        throw ShapeError("stage " + std::to_string(stage) + " is not available");
    const Tensor pooled = nn::roi_align(maps[static_cast<std::size_t>(stage - 1)], box, enc.roi_spec(stage));
    const Tensor avg = nn::global_avg_pool(pooled);
    return Feature(std::vector<float>(avg.data(), avg.data() + avg.size()));
}

double coupling_ratio(const Feature& a_with_b, const Feature& a_alone, const Feature& b)
{
    const double den = cosine_similarity(a_alone, b);
    if (std::abs(den) < 1e-8)
        throw ZeroSimilarity("cos(f(A alone), f(B)) is zero");
    return cosine_similarity(a_with_b, b) / den;
}

double mean_center_similarity(std::span<const Feature> features)
{
    if (features.size() != 9)
        throw ShapeError("MCS needs 9 grid features, got " + std::to_string(features.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < 9; ++i)
        if (i != 4)
            s += cosine_similarity(features[4], features[i]);
    return s / 8.0;
}

// --- coupling ----------------------------------------------------------------

CouplingScene coupling_scene(const Tensor& a, const Tensor& b, int canvas)
{
    if (a.height() != b.height() || a.channels() != 3 || b.channels() != 3)
        throw ShapeError("coupling crops must be RGB with equal height");
    if (a.width() > canvas / 2 || b.width() > canvas / 2 || a.height() > canvas)
        throw ShapeError("coupling crops do not fit a " + std::to_string(canvas) + " canvas");
    const int xa = canvas / 2 - a.width();
    const int xb = canvas / 2;
    const int y = (canvas - a.height()) / 2;
    CouplingScene s;
    s.with_b = Tensor(3, canvas, canvas);
    s.alone = Tensor(3, canvas, canvas);
    image::paste(a, s.with_b, xa, y);
    image::paste(b, s.with_b, xb, y);
    image::paste(a, s.alone, xa, y);
    s.box_a = {double(xa), double(y), double(xa + a.width()), double(y + a.height())};
    s.box_b = {double(xb), double(y), double(xb + b.width()), double(y + b.height())};
    return s;
}

std::vector<double> coupling_rates(const Encoder& enc, const Parameters& params, const Tensor& a, const Tensor& b,
                                   int canvas, std::span<const int> stages)
{
    const CouplingScene s = coupling_scene(a, b, canvas);
    const auto with_b = enc.forward_backbone(params, s.with_b);
    const auto alone = enc.forward_backbone(params, s.alone);
    std::vector<double> out;
    for (const int stage : stages)
        out.push_back(coupling_ratio(stage_feature(enc, with_b, stage, s.box_a),
                                     stage_feature(enc, alone, stage, s.box_a),
                                     stage_feature(enc, with_b, stage, s.box_b)));
    return out;
}

double coupling_rate(const Encoder& enc, const Parameters& params, const Tensor& a, const Tensor& b, int canvas,
                     int stage)
{
    const int stages[] = {stage};
    return coupling_rates(enc, params, a, b, canvas, stages)[0];
}

// --- positional bias ---------------------------------------------------------

Tensor tile_3x3(const Tensor& patch)
{
    if (patch.width() != patch.height() || patch.channels() != 3)
        throw ShapeError("MCS patch must be square RGB, got " + patch.shape_string());
    const int P = patch.width();
    Tensor out(3, 3 * P, 3 * P);
    for (int gy = 0; gy < 3; ++gy)
        for (int gx = 0; gx < 3; ++gx)
            image::paste(patch, out, gx * P, gy * P);
    return out;
}

std::vector<double> grid_mcs_stages(const Encoder& enc, const Parameters& params, const Tensor& patch,
                                    std::span<const int> stages)
{
    const int P = patch.width();
    for (const int stage : stages)
    {
        if (stage < 1 || stage > encoder::kStages)
            throw ShapeError("stage " + std::to_string(stage) + " is not available");
        const int stride = enc.config().backbone.stage_stride(stage);
        if (P % stride != 0)
            throw ShapeError("patch side " + std::to_string(P) + " is not a multiple of the stage " +
                             std::to_string(stage) + " stride " + std::to_string(stride));
    }
    const auto maps = enc.forward_backbone(params, tile_3x3(patch));
    std::vector<double> out;
    for (const int stage : stages)
    {
        std::vector<Feature> cells;
        for (int gy = 0; gy < 3; ++gy)
            for (int gx = 0; gx < 3; ++gx)
                cells.push_back(stage_feature(enc, maps, stage,
                                              BBox{double(gx * P), double(gy * P), double((gx + 1) * P),
                                                   double((gy + 1) * P)}));
        out.push_back(mean_center_similarity(cells));
    }
    return out;
}

double grid_mcs(const Encoder& enc, const Parameters& params, const Tensor& patch, int stage)
{
    const int stages[] = {stage};
    return grid_mcs_stages(enc, params, patch, stages)[0];
}

// --- fixtures and reports ----------------------------------------------------

FixtureSet make_fixtures(std::uint64_t seed, const FixtureSpec& spec)
{
    FixtureSet set;
    set.seed = seed;
    set.spec = spec;
    const auto palette = data::default_palette();
    const int n_classes = static_cast<int>(palette.size());
    for (int i = 0; i < spec.pairs; ++i)
    {
        Rng rng = derive_rng(seed, {1, static_cast<std::uint64_t>(i)});
        const int ca = uniform_int(rng, 0, n_classes - 1);
        int cb = uniform_int(rng, 0, n_classes - 2);
        if (cb >= ca)
            ++cb;
        Tensor a = data::render_object(palette[static_cast<std::size_t>(ca)], spec.object_size, spec.object_size,
                                       rng, 0.04f);
        Tensor b = data::render_object(palette[static_cast<std::size_t>(cb)], spec.object_size, spec.object_size,
                                       rng, 0.04f);
        set.pairs.push_back({std::move(a), std::move(b)});
    }
    data::SceneSpec scene;
    scene.width = scene.height = spec.patch_size;
    scene.min_size = std::max(4, spec.patch_size / 4);
    scene.max_size = std::max(scene.min_size, spec.patch_size * 3 / 4);
    scene.max_objects = 2;
    for (int i = 0; i < spec.patches; ++i)
    {
        Rng rng = derive_rng(seed, {2, static_cast<std::uint64_t>(i)});
        set.patches.push_back(data::synth_scene(rng, scene).image);
    }
    return set;
}

namespace {

double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v)
        s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v)
{
    if (v.size() < 2)
        return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v)
        s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

} // namespace

double DiagnosticsReport::mean_cr() const
{
    std::vector<double> v;
    for (const auto& s : stages)
        v.push_back(s.cr);
    return mean_of(v);
}

double DiagnosticsReport::mean_mcs() const
{
    std::vector<double> v;
    for (const auto& s : stages)
        v.push_back(s.mcs);
    return mean_of(v);
}

std::string DiagnosticsReport::to_json() const
{
    nlohmann::ordered_json j;
    j["checkpoint"] = checkpoint;
    j["fixture_seed"] = fixture_seed;
    j["sample_count"] = sample_count;
    j["mean_cr"] = mean_cr();
    j["mean_mcs"] = mean_mcs();
    j["stages"] = nlohmann::ordered_json::array();
    for (const auto& s : stages)
    {
        nlohmann::ordered_json e;
        e["stage"] = s.stage;
        e["cr"] = s.cr;
        e["cr_log_std"] = s.cr_log_std;
        e["mcs"] = s.mcs;
        e["mcs_std"] = s.mcs_std;
        e["cr_samples"] = s.cr_samples;
        e["mcs_samples"] = s.mcs_samples;
        j["stages"].push_back(std::move(e));
    }
    return j.dump(2);
}

DiagnosticsReport DiagnosticsReport::from_json(const std::string& text)
{
    try
    {
        const auto j = nlohmann::json::parse(text);
        DiagnosticsReport r;
        r.checkpoint = j.at("checkpoint").get<std::string>();
        r.fixture_seed = j.at("fixture_seed").get<std::uint64_t>();
        r.sample_count = j.at("sample_count").get<int>();
        for (const auto& e : j.at("stages"))
            r.stages.push_back({e.at("stage").get<int>(), e.at("cr").get<double>(), e.at("cr_log_std").get<double>(),
                                e.at("mcs").get<double>(), e.at("mcs_std").get<double>(),
                                e.at("cr_samples").get<int>(), e.at("mcs_samples").get<int>()});
        return r;
    }
    catch (const nlohmann::json::exception& e)
    {
        throw DataError(std::string("malformed diagnostics report: ") + e.what());
    }
}

DiagnosticsReport probe_report(const Encoder& enc, const Parameters& params, const FixtureSet& fixtures,
                               std::span<const int> stages, Probe probe)
{
    const bool coupling = static_cast<int>(probe) & static_cast<int>(Probe::Coupling);
    const bool position = static_cast<int>(probe) & static_cast<int>(Probe::Position);
    if (coupling && fixtures.pairs.size() < static_cast<std::size_t>(kMinFixtures))
        throw InsufficientFixtures("coupling probe needs at least " + std::to_string(kMinFixtures) + " pairs, got " +
                                   std::to_string(fixtures.pairs.size()));
    if (position && fixtures.patches.size() < static_cast<std::size_t>(kMinFixtures))
        throw InsufficientFixtures("position probe needs at least " + std::to_string(kMinFixtures) +
                                   " patches, got " + std::to_string(fixtures.patches.size()));

    DiagnosticsReport report;
    report.fixture_seed = fixtures.seed;
    std::vector<std::vector<double>> log_cr(stages.size()), mcs(stages.size());
    if (coupling)
        for (const auto& pair : fixtures.pairs)
        {
            const auto cr = coupling_rates(enc, params, pair.a, pair.b, fixtures.spec.canvas, stages);
            for (std::size_t s = 0; s < stages.size(); ++s)
                log_cr[s].push_back(std::log(cr[s]));
        }
    if (position)
        for (const auto& patch : fixtures.patches)
        {
            const auto m = grid_mcs_stages(enc, params, patch, stages);
            for (std::size_t s = 0; s < stages.size(); ++s)
                mcs[s].push_back(m[s]);
        }
    for (std::size_t s = 0; s < stages.size(); ++s)
    {
        StageReport r;
        r.stage = stages[s];
        r.cr = coupling ? std::exp(mean_of(log_cr[s])) : 0.0;
        r.cr_log_std = std_of(log_cr[s]);
        r.mcs = position ? mean_of(mcs[s]) : 0.0;
        r.mcs_std = std_of(mcs[s]);
        r.cr_samples = static_cast<int>(log_cr[s].size());
        r.mcs_samples = static_cast<int>(mcs[s].size());
        report.stages.push_back(r);
    }
    report.sample_count = static_cast<int>(std::max(coupling ? fixtures.pairs.size() : 0,
                                                    position ? fixtures.patches.size() : 0));
    return report;
}

void plot_stage_curves(const std::filesystem::path& path, const std::string& title, std::span<const int> stages,
                       std::span<const Series> series)
{
    const int W = 680, H = 420, left = 70, right = 200, top = 50, bottom = 60;
    cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
    double lo = 1e300, hi = -1e300;
    for (const auto& s : series)
        for (double v : s.values)
        {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(lo <= hi))
        lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-6)
        lo -= 0.05, hi += 0.05;
    const double pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;

    const int pw = W - left - right, ph = H - top - bottom;
    auto px = [&](std::size_t i) {
        return left + (stages.size() <= 1 ? pw / 2 : static_cast<int>(pw * i / (stages.size() - 1)));
    };
    auto py = [&](double v) { return top + static_cast<int>(std::lround(ph * (hi - v) / (hi - lo))); };

    const cv::Scalar ink(40, 40, 40);
    cv::rectangle(img, {left, top}, {left + pw, top + ph}, ink, 1);
    for (int t = 0; t <= 4; ++t)
    {
        const double v = lo + (hi - lo) * t / 4.0;
        const int y = py(v);
        cv::line(img, {left - 4, y}, {left, y}, ink, 1);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4g", v);
        cv::putText(img, buf, {6, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1, cv::LINE_AA);
    }
    for (std::size_t i = 0; i < stages.size(); ++i)
    {
        const int x = px(i);
        cv::line(img, {x, top + ph}, {x, top + ph + 4}, ink, 1);
        cv::putText(img, "C" + std::to_string(stages[i]), {x - 8, top + ph + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                    ink, 1, cv::LINE_AA);
    }
    cv::putText(img, title, {left, 30}, cv::FONT_HERSHEY_SIMPLEX, 0.6, ink, 1, cv::LINE_AA);
    cv::putText(img, "layer", {left + pw / 2 - 20, H - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.45, ink, 1, cv::LINE_AA);

    const cv::Scalar palette[] = {{200, 80, 30}, {40, 40, 210}, {40, 160, 40}, {150, 60, 160}, {20, 150, 200}};
    for (std::size_t k = 0; k < series.size(); ++k)
    {
        const cv::Scalar color = palette[k % std::size(palette)];
        std::vector<cv::Point> pts;
        for (std::size_t i = 0; i < std::min(stages.size(), series[k].values.size()); ++i)
            pts.emplace_back(px(i), py(series[k].values[i]));
        if (pts.size() > 1)
            cv::polylines(img, pts, false, color, 2, cv::LINE_AA);
        for (const auto& p : pts)
            cv::circle(img, p, 4, color, cv::FILLED, cv::LINE_AA);
        const int ly = top + 20 + static_cast<int>(k) * 22;
        cv::line(img, {left + pw + 15, ly - 4}, {left + pw + 40, ly - 4}, color, 2, cv::LINE_AA);
        const std::string label = series[k].label.size() > 20 ? series[k].label.substr(0, 19) + "~" : series[k].label;
        cv::putText(img, label, {left + pw + 46, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.45, ink, 1, cv::LINE_AA);
    }
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img))
        throw DataError("cannot write plot " + path.string());
}

} // namespace d3ssl::diagnostics
