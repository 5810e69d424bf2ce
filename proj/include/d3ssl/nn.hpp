#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "d3ssl/geometry.hpp"
#include "d3ssl/rng.hpp"
#include "d3ssl/tensor.hpp"

// Minimal single-sample CNN toolkit with hand-written backward passes.
//
// Parameters of a network live in one flat float vector; modules only hold
// offsets into it. That keeps the teacher/student pair, momentum updates,
// optimizer state and checkpoints plain elementwise array operations.
namespace d3ssl::nn {

enum class Padding
{
    Zero,
    Circular,
};

struct ParamEntry
{
    std::string name;
    std::size_t offset = 0;
    std::size_t count = 0;
    std::vector<int> shape;
};

class ParamLayout
{
public:
    std::size_t add(std::string name, std::vector<int> shape);
    const std::vector<ParamEntry>& entries() const { return m_entries; }
    std::size_t total() const { return m_total; }
    // Throws std::out_of_range for unknown names.
    const ParamEntry& find(const std::string& name) const;

private:
    std::vector<ParamEntry> m_entries;
    std::size_t m_total = 0;
};

// Saved activations of a forward pass, consumed in reverse by backward.
class Trace
{
public:
    void push(Tensor t) { m_tensors.push_back(std::move(t)); }
    Tensor pop();
    void push_indices(std::vector<int> idx) { m_indices.push_back(std::move(idx)); }
    std::vector<int> pop_indices();
    bool empty() const { return m_tensors.empty() && m_indices.empty(); }

private:
    std::vector<Tensor> m_tensors;
    std::vector<std::vector<int>> m_indices;
};

class Module
{
public:
    virtual ~Module() = default;

    // `trace` may be null for inference.
    virtual Tensor forward(std::span<const float> params, const Tensor& x, Trace* trace) const = 0;
    // Accumulates parameter gradients into `grads` and returns dL/dx.
    virtual Tensor backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                            Trace& trace) const = 0;
    virtual void initialize(std::span<float> params, Rng& rng) const = 0;
};

using ModulePtr = std::unique_ptr<Module>;

class Conv2d final : public Module
{
public:
    Conv2d(ParamLayout& layout, const std::string& name, int in, int out, int kernel, int stride,
           Padding padding, bool zero_init = false);

    Tensor forward(std::span<const float> params, const Tensor& x, Trace* trace) const override;
    Tensor backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                    Trace& trace) const override;
    void initialize(std::span<float> params, Rng& rng) const override;

    int in_channels() const { return m_in; }
    int out_channels() const { return m_out; }
    int output_size(int input) const { return (input + 2 * m_pad - m_kernel) / m_stride + 1; }

private:
    void im2col(const Tensor& x, int oh, int ow, std::vector<float>& col) const;
    void col2im(const std::vector<float>& col, int oh, int ow, Tensor& dx) const;

    int m_in, m_out, m_kernel, m_stride, m_pad;
    Padding m_padding;
    bool m_zero_init;
    std::size_t m_weight, m_bias;
};

class Relu final : public Module
{
public:
    Tensor forward(std::span<const float> params, const Tensor& x, Trace* trace) const override;
    Tensor backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                    Trace& trace) const override;
    void initialize(std::span<float>, Rng&) const override {}
};

// 3x3, stride 2, padding 1 (ResNet stem).
class MaxPool final : public Module
{
public:
    Tensor forward(std::span<const float> params, const Tensor& x, Trace* trace) const override;
    Tensor backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                    Trace& trace) const override;
    void initialize(std::span<float>, Rng&) const override {}
};

// Fully connected layer on a (n,1,1) tensor.
class Linear final : public Module
{
public:
    Linear(ParamLayout& layout, const std::string& name, int in, int out, double init_gain = 2.0);

    Tensor forward(std::span<const float> params, const Tensor& x, Trace* trace) const override;
    Tensor backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                    Trace& trace) const override;
    void initialize(std::span<float> params, Rng& rng) const override;

private:
    int m_in, m_out;
    double m_gain;
    std::size_t m_weight, m_bias;
};

class Sequential final : public Module
{
public:
    Sequential() = default;
    explicit Sequential(std::vector<ModulePtr> modules);
    void append(ModulePtr m) { m_modules.push_back(std::move(m)); }
    bool empty() const { return m_modules.empty(); }

    Tensor forward(std::span<const float> params, const Tensor& x, Trace* trace) const override;
    Tensor backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                    Trace& trace) const override;
    void initialize(std::span<float> params, Rng& rng) const override;

private:
    std::vector<ModulePtr> m_modules;
};

// ResNet bottleneck: relu(1x1 -> 3x3(stride) -> 1x1 + shortcut). No
// normalization layers; the last conv starts at zero so every block is the
// identity map (or its projection) at initialization.
class Bottleneck final : public Module
{
public:
    Bottleneck(ParamLayout& layout, const std::string& name, int in, int mid, int out, int stride,
               Padding padding);

    Tensor forward(std::span<const float> params, const Tensor& x, Trace* trace) const override;
    Tensor backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                    Trace& trace) const override;
    void initialize(std::span<float> params, Rng& rng) const override;

private:
    Sequential m_main;
    ModulePtr m_shortcut; // null for identity
};

// --- stateless ops with explicit backward ---------------------------------

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& dy, int height, int width);

// y = x / |x|
Tensor l2_normalize(const Tensor& x);
Tensor l2_normalize_backward(const Tensor& x, const Tensor& y, const Tensor& dy);

enum class Boundary
{
    Clamp, // samples beyond the border clamp to the edge (zero past one cell)
    Wrap,  // periodic feature map, matches circular padding
};

struct RoiAlignSpec
{
    int out_size = 7;
    int sampling_ratio = 2; // samples per bin along each axis
    double stride = 16.0;   // feature-map stride relative to image pixels
    Boundary boundary = Boundary::Clamp;
};

// Bilinear RoI pooling with half-pixel-aligned coordinates: image point u
// maps to feature coordinate u / stride - 0.5. Throws DegenerateBox.
Tensor roi_align(const Tensor& feat, const geometry::BBox& box, const RoiAlignSpec& spec);
// Accumulates dL/dfeat.
void roi_align_backward(const Tensor& dout, const geometry::BBox& box, const RoiAlignSpec& spec, Tensor& dfeat);

} // namespace d3ssl::nn
