#include "d3ssl/encoder.hpp"

#include <memory>

#include "d3ssl/error.hpp"

namespace d3ssl::encoder {

std::string to_string(Variant v)
{
    return v == Variant::Toy ? "toy" : "resnet50-c4";
}

Variant variant_from_string(const std::string& s)
{
    if (s == "toy")
        return Variant::Toy;
    if (s == "resnet50-c4")
        return Variant::ResNet50C4;
    throw ConfigError("unknown backbone variant '" + s + "'");
}

std::string to_string(nn::Padding p)
{
    return p == nn::Padding::Zero ? "zero" : "circular";
}

nn::Padding padding_from_string(const std::string& s)
{
    if (s == "zero")
        return nn::Padding::Zero;
    if (s == "circular")
        return nn::Padding::Circular;
    throw ConfigError("unknown padding mode '" + s + "'");
}

BackboneSpec BackboneSpec::toy(nn::Padding padding)
{
    BackboneSpec s;
    s.padding = padding;
    return s;
}

BackboneSpec BackboneSpec::resnet50_c4()
{
    BackboneSpec s;
    s.variant = Variant::ResNet50C4;
    s.widths = {64, 256, 512, 1024, 2048};
    s.strides = {2, 2, 2, 2, 2};
    s.kernels = {7, 3, 3, 3, 3};
    return s;
}

int BackboneSpec::stage_stride(int stage) const
{
    int s = 1;
    for (int i = 0; i < stage; ++i)
        s *= strides[i];
    return s;
}

namespace {

nn::Sequential resnet_stage(nn::ParamLayout& layout, int stage, int in, int out, int blocks, int stride,
                            nn::Padding padding)
{
    nn::Sequential seq;
    const std::string prefix = "stage" + std::to_string(stage);
    for (int b = 0; b < blocks; ++b)
    {
        seq.append(std::make_unique<nn::Bottleneck>(layout, prefix + ".block" + std::to_string(b), b == 0 ? in : out,
                                                    out / 4, out, b == 0 ? stride : 1, padding));
    }
    return seq;
}

} // namespace

Encoder::Encoder(EncoderConfig cfg)
    : m_cfg(cfg)
{
    const BackboneSpec& bb = m_cfg.backbone;
    if (m_cfg.feature_dim <= 0 || m_cfg.roi_size <= 0 || m_cfg.sampling_ratio <= 0)
        throw ConfigError("feature_dim, roi_size and sampling_ratio must be positive");

    if (bb.variant == Variant::Toy)
    {
        int in = 3;
        for (int s = 0; s < kStages; ++s)
        {
            if (bb.widths[s] <= 0 || bb.strides[s] <= 0 || bb.kernels[s] <= 0 || bb.kernels[s] % 2 == 0)
                throw ConfigError("toy backbone needs positive widths/strides and odd kernels");
            const std::string name = "stage" + std::to_string(s + 1) + ".conv";
            m_stages[s].append(
                std::make_unique<nn::Conv2d>(m_layout, name, in, bb.widths[s], bb.kernels[s], bb.strides[s], bb.padding));
            m_stages[s].append(std::make_unique<nn::Relu>());
            in = bb.widths[s];
        }
    }
    else
    {
        const BackboneSpec ref = BackboneSpec::resnet50_c4();
        if (bb.widths != ref.widths || bb.strides != ref.strides || bb.kernels != ref.kernels)
            throw ConfigError("resnet50-c4 uses fixed widths, strides and kernels");
        m_stages[0].append(std::make_unique<nn::Conv2d>(m_layout, "stage1.conv", 3, 64, 7, 2, bb.padding));
        m_stages[0].append(std::make_unique<nn::Relu>());
        m_stages[1] = [&] {
            nn::Sequential seq;
            seq.append(std::make_unique<nn::MaxPool>());
            for (int b = 0; b < 3; ++b)
                seq.append(std::make_unique<nn::Bottleneck>(m_layout, "stage2.block" + std::to_string(b),
                                                            b == 0 ? 64 : 256, 64, 256, 1, bb.padding));
            return seq;
        }();
        m_stages[2] = resnet_stage(m_layout, 3, 256, 512, 4, 2, bb.padding);
        m_stages[3] = resnet_stage(m_layout, 4, 512, 1024, 6, 2, bb.padding);
        m_stages[4] = resnet_stage(m_layout, 5, 1024, 2048, 3, 2, bb.padding);
    }

    const int c5 = stage_channels(5);
    m_projector.append(std::make_unique<nn::Linear>(m_layout, "head.fc1", c5, c5));
    m_projector.append(std::make_unique<nn::Relu>());
    m_projector.append(std::make_unique<nn::Linear>(m_layout, "head.fc2", c5, m_cfg.feature_dim, 1.0));
}

int Encoder::stage_channels(int stage) const
{
    return m_cfg.backbone.widths.at(stage - 1);
}

nn::RoiAlignSpec Encoder::roi_spec(int stage) const
{
    nn::RoiAlignSpec spec;
    spec.out_size = m_cfg.roi_size;
    spec.sampling_ratio = m_cfg.sampling_ratio;
    spec.stride = m_cfg.backbone.stage_stride(stage);
    spec.boundary = m_cfg.backbone.padding == nn::Padding::Circular ? nn::Boundary::Wrap : nn::Boundary::Clamp;
    return spec;
}

Parameters Encoder::initialize(std::uint64_t seed) const
{
    Parameters p = zeros();
    Rng rng(seed);
    for (const auto& stage : m_stages)
        stage.initialize(p.values, rng);
    m_projector.initialize(p.values, rng);
    return p;
}

Parameters Encoder::zeros() const
{
    return Parameters{std::vector<float>(m_layout.total(), 0.0f)};
}

void Encoder::check_input(const Tensor& image) const
{
    const int s = m_cfg.backbone.c4_stride();
    if (image.channels() != 3 || image.height() % s != 0 || image.width() % s != 0 || image.empty())
        throw ShapeError("input " + image.shape_string() + " must be RGB with sides divisible by " +
                         std::to_string(s));
}

std::vector<Tensor> Encoder::forward_backbone(const Parameters& params, const Tensor& image) const
{
    check_input(image);
    std::vector<Tensor> maps;
    Tensor h = image;
    for (const auto& stage : m_stages)
    {
        h = stage.forward(params.values, h, nullptr);
        maps.push_back(h);
    }
    return maps;
}

Encoder::ViewPass Encoder::begin_view(const Parameters& params, const Tensor& image, bool record) const
{
    check_input(image);
    ViewPass view;
    view.recorded = record;
    Tensor h = image;
    for (int s = 0; s < 4; ++s)
        h = m_stages[s].forward(params.values, h, record ? &view.trace : nullptr);
    view.c4 = std::move(h);
    if (record)
        view.c4_grad = Tensor(view.c4.channels(), view.c4.height(), view.c4.width());
    return view;
}

Encoder::RegionPass Encoder::forward_region(const Parameters& params, const ViewPass& view, const geometry::BBox& box,
                                            bool record) const
{
    RegionPass region;
    region.box = box;
    nn::Trace* trace = record ? &region.trace : nullptr;
    const Tensor pooled_roi = nn::roi_align(view.c4, box, roi_spec(4));
    const Tensor c5 = m_stages[4].forward(params.values, pooled_roi, trace);
    region.c5_height = c5.height();
    region.c5_width = c5.width();
    region.projected = m_projector.forward(params.values, nn::global_avg_pool(c5), trace);
    const Tensor z = nn::l2_normalize(region.projected);
    region.z = Feature(std::vector<float>(z.values().begin(), z.values().end()));
    return region;
}

void Encoder::backward_region(const Parameters& params, std::span<float> grads, RegionPass& region,
                              std::span<const double> dz, ViewPass& view) const
{
    if (!view.recorded)
        throw std::logic_error("backward through an unrecorded view");
    Tensor g(static_cast<int>(dz.size()), 1, 1);
    for (std::size_t i = 0; i < dz.size(); ++i)
        g.data()[i] = static_cast<float>(dz[i]);
    const Tensor z = Tensor::vector(region.z.values());
    g = nn::l2_normalize_backward(region.projected, z, g);
    g = m_projector.backward(params.values, grads, g, region.trace);
    g = nn::global_avg_pool_backward(g, region.c5_height, region.c5_width);
    g = m_stages[4].backward(params.values, grads, g, region.trace);
    nn::roi_align_backward(g, region.box, roi_spec(4), view.c4_grad);
}

void Encoder::backward_view(const Parameters& params, std::span<float> grads, ViewPass& view) const
{
    Tensor g = view.c4_grad;
    for (int s = 3; s >= 0; --s)
        g = m_stages[s].backward(params.values, grads, g, view.trace);
}

Feature Encoder::extract_region_feature(const Parameters& params, const Tensor& image, const geometry::BBox& box) const
{
    const ViewPass view = begin_view(params, image, false);
    return forward_region(params, view, box, false).z;
}

void momentum_update(EncoderPair& pair)
{
    auto& t = pair.teacher.values;
    const auto& s = pair.student.values;
    if (t.size() != s.size())
        throw ShapeMismatch("teacher has " + std::to_string(t.size()) + " parameters, student " +
                            std::to_string(s.size()));
    const double keep = pair.momentum;
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(t[i] + (1.0 - keep) * (static_cast<double>(s[i]) - t[i]));
}

} // namespace d3ssl::encoder
