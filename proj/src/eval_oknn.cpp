#include "d3ssl/eval_oknn.hpp"

#include <algorithm>
#include <future>
#include <map>
#include <numeric>

#include "json.hpp"

#include "d3ssl/error.hpp"
#include "d3ssl/image.hpp"
#include "d3ssl/nn.hpp"
#include "d3ssl/rng.hpp"

namespace d3ssl::oknn {

namespace {

constexpr int kOknnRoi = 7;

Feature normalized(const Tensor& pooled)
{
    double s = 0.0;
    for (float v : pooled.values())
        s += static_cast<double>(v) * v;
    std::vector<float> out(pooled.values().begin(), pooled.values().end());
    if (s > 0.0)
    {
        const double n = std::sqrt(s);
        for (auto& v : out)
            v = static_cast<float>(v / n);
    }
    return Feature(std::move(out));
}

// Runs fn(i) for i in [0, n) over `workers` threads, strided.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn)
{
    workers = std::min<int>(std::max(workers, 1), static_cast<int>(std::max<std::size_t>(n, 1)));
    if (workers <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::vector<std::future<void>> jobs;
    for (int w = 0; w < workers; ++w)
        jobs.push_back(std::async(std::launch::async, [&, w] {
            for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(workers))
                fn(i);
        }));
    for (auto& j : jobs)
        j.get();
}

std::vector<BBox> boxes_of(const LabeledImage& img)
{
    std::vector<BBox> out;
    for (const auto& o : img.objects)
        out.push_back(o.box);
    return out;
}

} // namespace

void OknnConfig::validate() const
{
    if (k < 1)
        throw ConfigError("k must be at least 1, got " + std::to_string(k));
    if (per_image < 1)
        throw ConfigError("n must be at least 1, got " + std::to_string(per_image));
    if (workers < 1)
        throw ConfigError("workers must be at least 1");
}

std::vector<Feature> extract_object_features(const Encoder& enc, const Parameters& params, const Tensor& image,
                                             std::span<const BBox> boxes)
{
    for (const auto& b : boxes)
        if (!b.valid())
            throw DegenerateBox("object box " + b.to_string() + " is degenerate");
    const auto maps = enc.forward_backbone(params, image);
    nn::RoiAlignSpec spec = enc.roi_spec(encoder::kStages);
    spec.out_size = kOknnRoi;
    std::vector<Feature> out;
    for (const auto& b : boxes)
        out.push_back(normalized(nn::global_avg_pool(nn::roi_align(maps.back(), b, spec))));
    return out;
}

Feature extract_object_feature(const Encoder& enc, const Parameters& params, const Tensor& image, const BBox& box)
{
    return extract_object_features(enc, params, image, std::span(&box, 1))[0];
}

Tensor replace_background(const Tensor& image, std::span<const BBox> boxes, const Tensor& noise_image)
{
    if (noise_image.channels() != image.channels())
        throw ShapeError("noise image has " + std::to_string(noise_image.channels()) + " channels, image has " +
                         std::to_string(image.channels()));
    const Tensor noise = (noise_image.width() == image.width() && noise_image.height() == image.height())
                             ? noise_image
                             : image::resize(noise_image, image.width(), image.height());
    Tensor out = image;
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
        {
            const double cx = x + 0.5, cy = y + 0.5;
            const bool covered = std::any_of(boxes.begin(), boxes.end(), [&](const BBox& b) {
                return cx >= b.x1 && cx < b.x2 && cy >= b.y1 && cy < b.y2;
            });
            if (!covered)
                for (int c = 0; c < image.channels(); ++c)
                    out.at(c, y, x) = noise.at(c, y, x);
        }
    return out;
}

Feature disturbed_extract(const Encoder& enc, const Parameters& params, const Tensor& image,
                          std::span<const BBox> gt_boxes, const Tensor& noise_image, const BBox& target_box)
{
    if (!target_box.valid())
        throw DegenerateBox("target box " + target_box.to_string() + " is degenerate");
    if (std::find(gt_boxes.begin(), gt_boxes.end(), target_box) == gt_boxes.end())
        throw ConfigError("target box " + target_box.to_string() + " is not a ground-truth box");
    return extract_object_feature(enc, params, replace_background(image, gt_boxes, noise_image), target_box);
}

std::vector<LabeledImage> load_labeled(const data::Dataset& ds, const data::Dataset* label_space)
{
    std::map<std::string, int> ids;
    if (label_space)
        for (const auto& c : label_space->categories)
            ids.emplace(c.name, c.id);
    std::vector<LabeledImage> out;
    for (std::size_t i = 0; i < ds.images.size(); ++i)
    {
        LabeledImage img{ds.images[i].id, ds.load_image(i), ds.images[i].objects};
        if (label_space)
            for (auto& o : img.objects)
            {
                const auto it = ids.find(ds.class_key(o.class_id));
                o.class_id = it == ids.end() ? -1 : it->second;
            }
        out.push_back(std::move(img));
    }
    return out;
}

FeatureBank build_feature_bank(const Encoder& enc, const Parameters& params, std::span<const LabeledImage> images,
                               const OknnConfig& cfg)
{
    cfg.validate();
    std::vector<std::vector<std::size_t>> chosen(images.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < images.size(); ++i)
    {
        std::vector<std::size_t> idx(images[i].objects.size());
        std::iota(idx.begin(), idx.end(), 0);
        if (idx.size() > static_cast<std::size_t>(cfg.per_image))
        {
            Rng rng = derive_rng(cfg.seed, {0x0B4E, i});
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(static_cast<std::size_t>(cfg.per_image));
            std::sort(idx.begin(), idx.end());
        }
        total += idx.size();
        chosen[i] = std::move(idx);
    }
    if (total == 0)
        throw EmptyDataset("no labeled objects to build an O-KNN bank from");

    std::vector<std::vector<Feature>> feats(images.size());
    parallel_for(images.size(), cfg.workers, [&](std::size_t i) {
        std::vector<BBox> boxes;
        for (std::size_t j : chosen[i])
            boxes.push_back(images[i].objects[j].box);
        if (!boxes.empty())
            feats[i] = extract_object_features(enc, params, images[i].image, boxes);
    });

    FeatureBank bank;
    bank.per_image = cfg.per_image;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t n = 0; n < chosen[i].size(); ++n)
        {
            bank.features.push_back(std::move(feats[i][n]));
            bank.labels.push_back(images[i].objects[chosen[i][n]].class_id);
            bank.image_ids.push_back(images[i].id);
        }
    return bank;
}

Prediction oknn_classify(const Feature& query, const FeatureBank& bank, int k)
{
    if (bank.size() == 0)
        throw EmptyBank("O-KNN bank is empty");
    if (k < 1 || static_cast<std::size_t>(k) > bank.size())
        throw ConfigError("k = " + std::to_string(k) + " outside [1, " + std::to_string(bank.size()) + "]");

    std::vector<std::pair<double, std::size_t>> sims(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i)
        sims[i] = {cosine_similarity(query, bank.features[i]), i};
    std::partial_sort(sims.begin(), sims.begin() + k, sims.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first)
            return a.first > b.first;
        return bank.labels[a.second] != bank.labels[b.second] ? bank.labels[a.second] < bank.labels[b.second]
                                                              : a.second < b.second;
    });

    std::map<int, double> scores;
    for (int n = 0; n < k; ++n)
        scores[bank.labels[sims[static_cast<std::size_t>(n)].second]] += sims[static_cast<std::size_t>(n)].first;
    std::vector<std::pair<int, double>> ranked(scores.begin(), scores.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

    Prediction p;
    p.top1 = ranked.front().first;
    for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked.size()); ++i)
        p.top5.push_back(ranked[i].first);
    return p;
}

std::string OknnResult::to_json() const
{
    nlohmann::ordered_json j;
    j["top1"] = top1;
    j["top5"] = top5;
    j["queries"] = queries;
    j["bank_size"] = bank_size;
    j["k"] = k;
    j["n"] = per_image;
    j["disturbed"] = disturbed;
    return j.dump(2);
}

OknnResult oknn_score(const Encoder& enc, const Parameters& params, std::span<const LabeledImage> train,
                      std::span<const LabeledImage> eval, const OknnConfig& cfg, bool disturbed)
{
    const FeatureBank bank = build_feature_bank(enc, params, train, cfg);
    const int k = cfg.k;
    if (static_cast<std::size_t>(k) > bank.size())
        throw ConfigError("k = " + std::to_string(k) + " exceeds the bank size " + std::to_string(bank.size()));

    std::vector<int> noise_index(eval.size(), -1);
    if (disturbed)
        for (std::size_t i = 0; i < eval.size(); ++i)
        {
            Rng rng = derive_rng(cfg.seed, {0xD157, i});
            std::vector<int> candidates;
            for (std::size_t t = 0; t < train.size(); ++t)
                if (train[t].id != eval[i].id)
                    candidates.push_back(static_cast<int>(t));
            if (candidates.empty())
                candidates.push_back(0);
            noise_index[i] = candidates[static_cast<std::size_t>(
                uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1))];
        }

    std::vector<std::vector<Prediction>> preds(eval.size());
    parallel_for(eval.size(), cfg.workers, [&](std::size_t i) {
        const auto boxes = boxes_of(eval[i]);
        if (boxes.empty())
            return;
        const Tensor img = disturbed ? replace_background(eval[i].image, boxes,
                                                          train[static_cast<std::size_t>(noise_index[i])].image)
                                     : eval[i].image;
        for (const auto& f : extract_object_features(enc, params, img, boxes))
            preds[i].push_back(oknn_classify(f, bank, k));
    });

    OknnResult r;
    r.bank_size = bank.size();
    r.k = k;
    r.per_image = cfg.per_image;
    r.disturbed = disturbed;
    long hit1 = 0, hit5 = 0;
    for (std::size_t i = 0; i < eval.size(); ++i)
        for (std::size_t n = 0; n < preds[i].size(); ++n)
        {
            const int truth = eval[i].objects[n].class_id;
            ++r.queries;
            hit1 += preds[i][n].top1 == truth;
            hit5 += std::find(preds[i][n].top5.begin(), preds[i][n].top5.end(), truth) != preds[i][n].top5.end();
        }
    if (r.queries == 0)
        throw EmptyDataset("evaluation set has no labeled objects");
    r.top1 = static_cast<double>(hit1) / r.queries;
    r.top5 = static_cast<double>(hit5) / r.queries;
    return r;
}

} // namespace d3ssl::oknn
