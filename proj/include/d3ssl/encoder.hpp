#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "d3ssl/feature.hpp"
#include "d3ssl/geometry.hpp"
#include "d3ssl/nn.hpp"
#include "d3ssl/tensor.hpp"

namespace d3ssl::encoder {

enum class Variant
{
    Toy,
    ResNet50C4,
};

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(nn::Padding p);
nn::Padding padding_from_string(const std::string& s);

inline constexpr int kStages = 5;

struct BackboneSpec
{
    Variant variant = Variant::Toy;
    std::array<int, kStages> widths{8, 16, 32, 64, 128};
    std::array<int, kStages> strides{2, 2, 2, 2, 2};
    std::array<int, kStages> kernels{3, 3, 3, 3, 3};
    nn::Padding padding = nn::Padding::Zero;

    static BackboneSpec toy(nn::Padding padding = nn::Padding::Zero);
    static BackboneSpec resnet50_c4();

    // Cumulative stride of stage `stage` (1-based) relative to the input.
    int stage_stride(int stage) const;
    int c4_stride() const { return stage_stride(4); }

    friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

struct EncoderConfig
{
    BackboneSpec backbone;
    int feature_dim = 128;
    int roi_size = 7;
    int sampling_ratio = 2;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct Parameters
{
    std::vector<float> values;

    std::size_t size() const { return values.size(); }
    friend bool operator==(const Parameters&, const Parameters&) = default;
};

// Backbone f^E (stages 1-4), RoI pooling on C4, and head f^H (stage 5,
// global average pool, two-layer projector, unit normalization). The
// object holds architecture only; parameters are passed in explicitly.
class Encoder
{
public:
    explicit Encoder(EncoderConfig cfg);

    const EncoderConfig& config() const { return m_cfg; }
    const nn::ParamLayout& layout() const { return m_layout; }
    std::size_t parameter_count() const { return m_layout.total(); }

    Parameters initialize(std::uint64_t seed) const;
    Parameters zeros() const;

    int stage_channels(int stage) const;
    nn::RoiAlignSpec roi_spec(int stage) const;

    // C1..C5 over the whole image. Throws ShapeError unless the image is
    // 3-channel with sides divisible by the C4 stride.
    std::vector<Tensor> forward_backbone(const Parameters& params, const Tensor& image) const;

    // Unit-norm region embedding: C4 -> RoIAlign -> stage 5 -> pool -> projector.
    Feature extract_region_feature(const Parameters& params, const Tensor& image, const geometry::BBox& box) const;

    // --- training path: one backbone pass per view, many regions per view ---

    struct ViewPass
    {
        Tensor c4;
        Tensor c4_grad;
        nn::Trace trace;
        bool recorded = false;
    };

    struct RegionPass
    {
        Feature z;
        geometry::BBox box;
        Tensor projected; // pre-normalization projector output
        int c5_height = 0;
        int c5_width = 0;
        nn::Trace trace;
    };

    ViewPass begin_view(const Parameters& params, const Tensor& image, bool record) const;
    RegionPass forward_region(const Parameters& params, const ViewPass& view, const geometry::BBox& box,
                              bool record) const;
    // Backpropagates dL/dz into the head parameters and view.c4_grad.
    void backward_region(const Parameters& params, std::span<float> grads, RegionPass& region,
                         std::span<const double> dz, ViewPass& view) const;
    // Backpropagates the accumulated view.c4_grad through stages 1-4.
    void backward_view(const Parameters& params, std::span<float> grads, ViewPass& view) const;

private:
    void check_input(const Tensor& image) const;

    EncoderConfig m_cfg;
    nn::ParamLayout m_layout;
    std::array<nn::Sequential, kStages> m_stages;
    nn::Sequential m_projector;
};

// Student (online) and teacher (momentum) parameters of one encoder.
struct EncoderPair
{
    Parameters student;
    Parameters teacher;
    double momentum = 0.99;
};

// teacher <- m * teacher + (1 - m) * student. Throws ShapeMismatch.
void momentum_update(EncoderPair& pair);

} // namespace d3ssl::encoder
