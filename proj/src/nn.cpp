#include "d3ssl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Core>

#include "d3ssl/error.hpp"

namespace d3ssl::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

int wrap_index(int i, int n)
{
    const int r = i % n;
    return r < 0 ? r + n : r;
}

void fill_normal(std::span<float> out, double stddev, Rng& rng)
{
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : out)
        v = static_cast<float>(dist(rng));
}

} // namespace

std::size_t ParamLayout::add(std::string name, std::vector<int> shape)
{
    std::size_t count = 1;
    for (int d : shape)
        count *= static_cast<std::size_t>(d);
    m_entries.push_back({std::move(name), m_total, count, std::move(shape)});
    m_total += count;
    return m_entries.back().offset;
}

const ParamEntry& ParamLayout::find(const std::string& name) const
{
    for (const auto& e : m_entries)
        if (e.name == name)
            return e;
    throw std::out_of_range("no parameter named " + name);
}

Tensor Trace::pop()
{
    if (m_tensors.empty())
        throw std::logic_error("trace underflow");
    Tensor t = std::move(m_tensors.back());
    m_tensors.pop_back();
    return t;
}

std::vector<int> Trace::pop_indices()
{
    if (m_indices.empty())
        throw std::logic_error("trace underflow");
    auto v = std::move(m_indices.back());
    m_indices.pop_back();
    return v;
}

// --- Conv2d -------------------------------------------------------------------

Conv2d::Conv2d(ParamLayout& layout, const std::string& name, int in, int out, int kernel, int stride,
               Padding padding, bool zero_init)
    : m_in(in)
    , m_out(out)
    , m_kernel(kernel)
    , m_stride(stride)
    , m_pad(kernel / 2)
    , m_padding(padding)
    , m_zero_init(zero_init)
{
    m_weight = layout.add(name + ".weight", {out, in, kernel, kernel});
    m_bias = layout.add(name + ".bias", {out});
}

void Conv2d::initialize(std::span<float> params, Rng& rng) const
{
    auto w = params.subspan(m_weight, static_cast<std::size_t>(m_out) * m_in * m_kernel * m_kernel);
    if (m_zero_init)
        std::fill(w.begin(), w.end(), 0.0f);
    else
        fill_normal(w, std::sqrt(2.0 / (m_in * m_kernel * m_kernel)), rng);
    auto b = params.subspan(m_bias, m_out);
    std::fill(b.begin(), b.end(), 0.0f);
}

void Conv2d::im2col(const Tensor& x, int oh, int ow, std::vector<float>& col) const
{
    const int H = x.height();
    const int W = x.width();
    const int K = m_kernel;
    const std::size_t P = static_cast<std::size_t>(oh) * ow;
    col.assign(static_cast<std::size_t>(m_in) * K * K * P, 0.0f);

    std::vector<int> ix(static_cast<std::size_t>(K) * ow);
    for (int kx = 0; kx < K; ++kx)
        for (int ox = 0; ox < ow; ++ox)
        {
            int v = ox * m_stride - m_pad + kx;
            if (m_padding == Padding::Circular)
                v = wrap_index(v, W);
            else if (v < 0 || v >= W)
                v = -1;
            ix[static_cast<std::size_t>(kx) * ow + ox] = v;
        }

    for (int c = 0; c < m_in; ++c)
        for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx)
            {
                float* row = col.data() + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * P;
                const int* cols = ix.data() + static_cast<std::size_t>(kx) * ow;
                for (int oy = 0; oy < oh; ++oy)
                {
                    int iy = oy * m_stride - m_pad + ky;
                    if (m_padding == Padding::Circular)
                        iy = wrap_index(iy, H);
                    else if (iy < 0 || iy >= H)
                        continue;
                    const float* src = x.data() + (static_cast<std::size_t>(c) * H + iy) * W;
                    float* dst = row + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox)
                        if (cols[ox] >= 0)
                            dst[ox] = src[cols[ox]];
                }
            }
}

void Conv2d::col2im(const std::vector<float>& col, int oh, int ow, Tensor& dx) const
{
    const int H = dx.height();
    const int W = dx.width();
    const int K = m_kernel;
    const std::size_t P = static_cast<std::size_t>(oh) * ow;

    std::vector<int> ix(static_cast<std::size_t>(K) * ow);
    for (int kx = 0; kx < K; ++kx)
        for (int ox = 0; ox < ow; ++ox)
        {
            int v = ox * m_stride - m_pad + kx;
            if (m_padding == Padding::Circular)
                v = wrap_index(v, W);
            else if (v < 0 || v >= W)
                v = -1;
            ix[static_cast<std::size_t>(kx) * ow + ox] = v;
        }

    for (int c = 0; c < m_in; ++c)
        for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx)
            {
                const float* row = col.data() + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * P;
                const int* cols = ix.data() + static_cast<std::size_t>(kx) * ow;
                for (int oy = 0; oy < oh; ++oy)
                {
                    int iy = oy * m_stride - m_pad + ky;
                    if (m_padding == Padding::Circular)
                        iy = wrap_index(iy, H);
                    else if (iy < 0 || iy >= H)
                        continue;
                    float* dst = dx.data() + (static_cast<std::size_t>(c) * H + iy) * W;
                    const float* src = row + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox)
                        if (cols[ox] >= 0)
                            dst[cols[ox]] += src[ox];
                }
            }
}

Tensor Conv2d::forward(std::span<const float> params, const Tensor& x, Trace* trace) const
{
    if (x.channels() != m_in)
        throw ShapeError("conv expects " + std::to_string(m_in) + " channels, got " + x.shape_string());
    const int oh = output_size(x.height());
    const int ow = output_size(x.width());
    if (oh <= 0 || ow <= 0)
        throw ShapeError("conv input too small: " + x.shape_string());

    const int rows = m_in * m_kernel * m_kernel;
    const int P = oh * ow;
    Tensor y(m_out, oh, ow);
    ConstMapMat weight(params.data() + m_weight, m_out, rows);
    MapMat out(y.data(), m_out, P);

    if (m_kernel == 1 && m_stride == 1)
    {
        out.noalias() = weight * ConstMapMat(x.data(), rows, P);
    }
    else
    {
        std::vector<float> col;
        im2col(x, oh, ow, col);
        out.noalias() = weight * ConstMapMat(col.data(), rows, P);
    }
    for (int o = 0; o < m_out; ++o)
        out.row(o).array() += params[m_bias + o];

    if (trace)
        trace->push(x);
    return y;
}

Tensor Conv2d::backward(std::span<const float> params, std::span<float> grads, const Tensor& dy, Trace& trace) const
{
    const Tensor x = trace.pop();
    const int oh = dy.height();
    const int ow = dy.width();
    const int rows = m_in * m_kernel * m_kernel;
    const int P = oh * ow;

    ConstMapMat weight(params.data() + m_weight, m_out, rows);
    ConstMapMat d_out(dy.data(), m_out, P);
    MapMat d_weight(grads.data() + m_weight, m_out, rows);
    for (int o = 0; o < m_out; ++o)
    {
        // Fixed summation order; Eigen's redux peels by address.
        const float* row = dy.data() + static_cast<std::size_t>(o) * P;
        float s = 0.0f;
        for (int i = 0; i < P; ++i)
            s += row[i];
        grads[m_bias + o] += s;
    }

    Tensor dx(m_in, x.height(), x.width());
    if (m_kernel == 1 && m_stride == 1)
    {
        d_weight.noalias() += d_out * ConstMapMat(x.data(), rows, P).transpose();
        MapMat(dx.data(), rows, P).noalias() = weight.transpose() * d_out;
        return dx;
    }

    std::vector<float> col;
    im2col(x, oh, ow, col);
    d_weight.noalias() += d_out * ConstMapMat(col.data(), rows, P).transpose();
    MapMat(col.data(), rows, P).noalias() = weight.transpose() * d_out;
    col2im(col, oh, ow, dx);
    return dx;
}

// --- Relu ---------------------------------------------------------------------

Tensor Relu::forward(std::span<const float>, const Tensor& x, Trace* trace) const
{
    Tensor y = x;
    for (auto& v : y.values())
        v = v > 0.0f ? v : 0.0f;
    if (trace)
        trace->push(y);
    return y;
}

Tensor Relu::backward(std::span<const float>, std::span<float>, const Tensor& dy, Trace& trace) const
{
    const Tensor y = trace.pop();
    Tensor dx = dy;
    auto out = dx.values();
    auto act = y.values();
    for (std::size_t i = 0; i < out.size(); ++i)
        if (act[i] <= 0.0f)
            out[i] = 0.0f;
    return dx;
}

// --- MaxPool ------------------------------------------------------------------

Tensor MaxPool::forward(std::span<const float>, const Tensor& x, Trace* trace) const
{
    const int H = x.height();
    const int W = x.width();
    const int oh = (H - 1) / 2 + 1;
    const int ow = (W - 1) / 2 + 1;
    Tensor y(x.channels(), oh, ow);
    std::vector<int> arg;
    if (trace)
        arg = {x.channels(), H, W};
    for (int c = 0; c < x.channels(); ++c)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
            {
                float best = -std::numeric_limits<float>::infinity();
                int best_idx = 0;
                for (int ky = -1; ky <= 1; ++ky)
                    for (int kx = -1; kx <= 1; ++kx)
                    {
                        const int iy = 2 * oy + ky;
                        const int ix = 2 * ox + kx;
                        if (iy < 0 || iy >= H || ix < 0 || ix >= W)
                            continue;
                        if (x.at(c, iy, ix) > best)
                        {
                            best = x.at(c, iy, ix);
                            best_idx = (c * H + iy) * W + ix;
                        }
                    }
                y.at(c, oy, ox) = best;
                if (trace)
                    arg.push_back(best_idx);
            }
    if (trace)
        trace->push_indices(std::move(arg));
    return y;
}

Tensor MaxPool::backward(std::span<const float>, std::span<float>, const Tensor& dy, Trace& trace) const
{
    const auto arg = trace.pop_indices();
    Tensor dx(arg[0], arg[1], arg[2]);
    auto g = dy.values();
    for (std::size_t i = 0; i < g.size(); ++i)
        dx.data()[arg[3 + i]] += g[i];
    return dx;
}

// --- Linear -------------------------------------------------------------------

Linear::Linear(ParamLayout& layout, const std::string& name, int in, int out, double init_gain)
    : m_in(in)
    , m_out(out)
    , m_gain(init_gain)
{
    m_weight = layout.add(name + ".weight", {out, in});
    m_bias = layout.add(name + ".bias", {out});
}

void Linear::initialize(std::span<float> params, Rng& rng) const
{
    fill_normal(params.subspan(m_weight, static_cast<std::size_t>(m_out) * m_in), std::sqrt(m_gain / m_in), rng);
    auto b = params.subspan(m_bias, m_out);
    std::fill(b.begin(), b.end(), 0.0f);
}

Tensor Linear::forward(std::span<const float> params, const Tensor& x, Trace* trace) const
{
    if (static_cast<int>(x.size()) != m_in)
        throw ShapeError("linear expects " + std::to_string(m_in) + " inputs, got " + x.shape_string());
    Tensor y(m_out, 1, 1);
    Eigen::Map<Eigen::VectorXf> out(y.data(), m_out);
    out.noalias() = ConstMapMat(params.data() + m_weight, m_out, m_in) *
                    Eigen::Map<const Eigen::VectorXf>(x.data(), m_in);
    out += Eigen::Map<const Eigen::VectorXf>(params.data() + m_bias, m_out);
    if (trace)
        trace->push(x);
    return y;
}

Tensor Linear::backward(std::span<const float> params, std::span<float> grads, const Tensor& dy, Trace& trace) const
{
    const Tensor x = trace.pop();
    Eigen::Map<const Eigen::VectorXf> g(dy.data(), m_out);
    Eigen::Map<const Eigen::VectorXf> in(x.data(), m_in);
    MapMat(grads.data() + m_weight, m_out, m_in).noalias() += g * in.transpose();
    Eigen::Map<Eigen::VectorXf>(grads.data() + m_bias, m_out) += g;
    Tensor dx(x.channels(), x.height(), x.width());
    Eigen::Map<Eigen::VectorXf>(dx.data(), m_in).noalias() =
        ConstMapMat(params.data() + m_weight, m_out, m_in).transpose() * g;
    return dx;
}

// --- Sequential ---------------------------------------------------------------

Sequential::Sequential(std::vector<ModulePtr> modules)
    : m_modules(std::move(modules))
{
}

Tensor Sequential::forward(std::span<const float> params, const Tensor& x, Trace* trace) const
{
    Tensor h = x;
    for (const auto& m : m_modules)
        h = m->forward(params, h, trace);
    return h;
}

Tensor Sequential::backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                            Trace& trace) const
{
    Tensor g = dy;
    for (auto it = m_modules.rbegin(); it != m_modules.rend(); ++it)
        g = (*it)->backward(params, grads, g, trace);
    return g;
}

void Sequential::initialize(std::span<float> params, Rng& rng) const
{
    for (const auto& m : m_modules)
        m->initialize(params, rng);
}

// --- Bottleneck ---------------------------------------------------------------

Bottleneck::Bottleneck(ParamLayout& layout, const std::string& name, int in, int mid, int out, int stride,
                       Padding padding)
{
    m_main.append(std::make_unique<Conv2d>(layout, name + ".conv1", in, mid, 1, 1, padding));
    m_main.append(std::make_unique<Relu>());
    m_main.append(std::make_unique<Conv2d>(layout, name + ".conv2", mid, mid, 3, stride, padding));
    m_main.append(std::make_unique<Relu>());
    m_main.append(std::make_unique<Conv2d>(layout, name + ".conv3", mid, out, 1, 1, padding, true));
    if (in != out || stride != 1)
        m_shortcut = std::make_unique<Conv2d>(layout, name + ".shortcut", in, out, 1, stride, padding);
}

void Bottleneck::initialize(std::span<float> params, Rng& rng) const
{
    m_main.initialize(params, rng);
    if (m_shortcut)
        m_shortcut->initialize(params, rng);
}

Tensor Bottleneck::forward(std::span<const float> params, const Tensor& x, Trace* trace) const
{
    Tensor y = m_main.forward(params, x, trace);
    y += m_shortcut ? m_shortcut->forward(params, x, trace) : x;
    for (auto& v : y.values())
        v = v > 0.0f ? v : 0.0f;
    if (trace)
        trace->push(y);
    return y;
}

Tensor Bottleneck::backward(std::span<const float> params, std::span<float> grads, const Tensor& dy,
                            Trace& trace) const
{
    const Tensor y = trace.pop();
    Tensor g = dy;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (y.data()[i] <= 0.0f)
            g.data()[i] = 0.0f;
    Tensor dx = m_shortcut ? m_shortcut->backward(params, grads, g, trace) : g;
    dx += m_main.backward(params, grads, g, trace);
    return dx;
}

// --- stateless ops ------------------------------------------------------------

Tensor global_avg_pool(const Tensor& x)
{
    Tensor y(x.channels(), 1, 1);
    const double n = static_cast<double>(x.plane_size());
    for (int c = 0; c < x.channels(); ++c)
    {
        double s = 0.0;
        for (float v : x.plane(c))
            s += v;
        y.at(c, 0, 0) = static_cast<float>(s / n);
    }
    return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, int height, int width)
{
    Tensor dx(dy.channels(), height, width);
    const float inv = 1.0f / static_cast<float>(height * width);
    for (int c = 0; c < dy.channels(); ++c)
    {
        const float g = dy.at(c, 0, 0) * inv;
        for (auto& v : dx.plane(c))
            v = g;
    }
    return dx;
}

Tensor l2_normalize(const Tensor& x)
{
    double s = 0.0;
    for (float v : x.values())
        s += static_cast<double>(v) * v;
    const double norm = std::max(std::sqrt(s), 1e-12);
    Tensor y = x;
    for (auto& v : y.values())
        v = static_cast<float>(v / norm);
    return y;
}

Tensor l2_normalize_backward(const Tensor& x, const Tensor& y, const Tensor& dy)
{
    double s = 0.0, proj = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        s += static_cast<double>(x.data()[i]) * x.data()[i];
        proj += static_cast<double>(y.data()[i]) * dy.data()[i];
    }
    const double norm = std::max(std::sqrt(s), 1e-12);
    Tensor dx(x.channels(), x.height(), x.width());
    for (std::size_t i = 0; i < x.size(); ++i)
        dx.data()[i] = static_cast<float>((dy.data()[i] - y.data()[i] * proj) / norm);
    return dx;
}

namespace {

struct Tap
{
    int index;
    float weight;
};

// Per output bin along one axis: the feature indices and weights whose
// separable product reproduces the averaged bilinear samples.
std::vector<std::vector<Tap>> axis_taps(double start, double bin, int out, int samples, int extent,
                                        Boundary boundary)
{
    std::vector<std::vector<Tap>> taps(out);
    const float share = 1.0f / static_cast<float>(samples);
    for (int p = 0; p < out; ++p)
        for (int s = 0; s < samples; ++s)
        {
            double u = start + p * bin + (s + 0.5) * bin / samples;
            if (boundary == Boundary::Wrap)
            {
                const double lo = std::floor(u);
                const float frac = static_cast<float>(u - lo);
                const int i = wrap_index(static_cast<int>(lo), extent);
                const int j = wrap_index(static_cast<int>(lo) + 1, extent);
                taps[p].push_back({i, share * (1.0f - frac)});
                taps[p].push_back({j, share * frac});
                continue;
            }
            if (u < -1.0 || u > extent)
                continue;
            if (u <= 0.0)
                u = 0.0;
            int lo = static_cast<int>(std::floor(u));
            int hi = lo + 1;
            if (lo >= extent - 1)
            {
                lo = hi = extent - 1;
                u = lo;
            }
            const float frac = static_cast<float>(u - lo);
            taps[p].push_back({lo, share * (1.0f - frac)});
            taps[p].push_back({hi, share * frac});
        }
    return taps;
}

} // namespace

Tensor roi_align(const Tensor& feat, const geometry::BBox& box, const RoiAlignSpec& spec)
{
    if (!box.valid())
        throw DegenerateBox("roi_align on degenerate box " + box.to_string());
    const int n = spec.out_size;
    const double bin_w = box.width() / spec.stride / n;
    const double bin_h = box.height() / spec.stride / n;
    const auto xt = axis_taps(box.x1 / spec.stride - 0.5, bin_w, n, spec.sampling_ratio, feat.width(), spec.boundary);
    const auto yt = axis_taps(box.y1 / spec.stride - 0.5, bin_h, n, spec.sampling_ratio, feat.height(), spec.boundary);

    Tensor out(feat.channels(), n, n);
    for (int c = 0; c < feat.channels(); ++c)
    {
        const auto plane = feat.plane(c);
        for (int py = 0; py < n; ++py)
            for (int px = 0; px < n; ++px)
            {
                float acc = 0.0f;
                for (const Tap& ty : yt[py])
                {
                    const float* row = plane.data() + static_cast<std::size_t>(ty.index) * feat.width();
                    float r = 0.0f;
                    for (const Tap& tx : xt[px])
                        r += tx.weight * row[tx.index];
                    acc += ty.weight * r;
                }
                out.at(c, py, px) = acc;
            }
    }
    return out;
}

void roi_align_backward(const Tensor& dout, const geometry::BBox& box, const RoiAlignSpec& spec, Tensor& dfeat)
{
    const int n = spec.out_size;
    const double bin_w = box.width() / spec.stride / n;
    const double bin_h = box.height() / spec.stride / n;
    const auto xt = axis_taps(box.x1 / spec.stride - 0.5, bin_w, n, spec.sampling_ratio, dfeat.width(), spec.boundary);
    const auto yt = axis_taps(box.y1 / spec.stride - 0.5, bin_h, n, spec.sampling_ratio, dfeat.height(), spec.boundary);

    for (int c = 0; c < dfeat.channels(); ++c)
    {
        auto plane = dfeat.plane(c);
        for (int py = 0; py < n; ++py)
            for (int px = 0; px < n; ++px)
            {
                const float g = dout.at(c, py, px);
                for (const Tap& ty : yt[py])
                {
                    float* row = plane.data() + static_cast<std::size_t>(ty.index) * dfeat.width();
                    for (const Tap& tx : xt[px])
                        row[tx.index] += g * ty.weight * tx.weight;
                }
            }
    }
}

} // namespace d3ssl::nn
