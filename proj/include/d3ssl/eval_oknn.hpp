#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "d3ssl/data.hpp"
#include "d3ssl/encoder.hpp"
#include "d3ssl/feature.hpp"
#include "d3ssl/tensor.hpp"

namespace d3ssl::oknn {

using encoder::Encoder;
using encoder::Parameters;
using geometry::BBox;

struct OknnConfig
{
    int k = 20;
    int per_image = 4;       // N
    std::uint64_t seed = 0;  // per-image subsampling and disturbance images
    int workers = 1;

    // Throws ConfigError.
    void validate() const;
};

// Unit-norm C5 feature of a box: RoIAlign 7x7, average pool, normalize.
// The projector is not used. A feature that pools to zero stays zero.
// Throws DegenerateBox.
Feature extract_object_feature(const Encoder& enc, const Parameters& params, const Tensor& image, const BBox& box);

// Same, for several boxes sharing one backbone pass.
std::vector<Feature> extract_object_features(const Encoder& enc, const Parameters& params, const Tensor& image,
                                             std::span<const BBox> boxes);

// Pixels whose centers lie outside every box take the noise image's value;
// the noise image is resized to the image first when the sizes differ.
Tensor replace_background(const Tensor& image, std::span<const BBox> boxes, const Tensor& noise_image);

// extract_object_feature on replace_background(image, gt_boxes, noise).
// Throws ConfigError unless target_box is one of gt_boxes.
Feature disturbed_extract(const Encoder& enc, const Parameters& params, const Tensor& image,
                          std::span<const BBox> gt_boxes, const Tensor& noise_image, const BBox& target_box);

struct LabeledImage
{
    std::string id;
    Tensor image;
    std::vector<data::Object> objects; // class_id is the label
};

// Loads every image of `ds`. With `label_space`, category ids are remapped
// by name onto label_space's ids; unmatched names become -1.
std::vector<LabeledImage> load_labeled(const data::Dataset& ds, const data::Dataset* label_space = nullptr);

struct FeatureBank
{
    std::vector<Feature> features;
    std::vector<int> labels;
    std::vector<std::string> image_ids; // source image per entry
    int per_image = 0;

    std::size_t size() const { return features.size(); }
};

// At most cfg.per_image objects per image, a seeded uniform subsample when
// an image has more. Throws EmptyDataset when no object is available.
FeatureBank build_feature_bank(const Encoder& enc, const Parameters& params, std::span<const LabeledImage> images,
                               const OknnConfig& cfg);

struct Prediction
{
    int top1 = -1;
    std::vector<int> top5; // best first, at most five labels
};

// Cosine k-NN over the bank. Each class scores the sum of its neighbors'
// similarities; ties go to the smaller class id. Throws EmptyBank, and
// ConfigError when k is outside [1, bank size].
Prediction oknn_classify(const Feature& query, const FeatureBank& bank, int k);

struct OknnResult
{
    double top1 = 0.0;
    double top5 = 0.0;
    int queries = 0;
    std::size_t bank_size = 0;
    int k = 0;
    int per_image = 0;
    bool disturbed = false;

    std::string to_json() const;
};

// Builds the bank from `train` and classifies every object of `eval`. With
// `disturbed`, each eval image's background is replaced by another
// randomly chosen train image before extraction.
OknnResult oknn_score(const Encoder& enc, const Parameters& params, std::span<const LabeledImage> train,
                      std::span<const LabeledImage> eval, const OknnConfig& cfg, bool disturbed);

} // namespace d3ssl::oknn
