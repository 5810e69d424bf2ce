#include "d3ssl/tensor.hpp"

#include <algorithm>

#include "d3ssl/error.hpp"

namespace d3ssl {

Tensor::Tensor(int channels, int height, int width, float fill)
    : m_channels(channels)
    , m_height(height)
    , m_width(width)
{
    if (channels < 0 || height < 0 || width < 0)
        throw ShapeError("negative tensor dimension");
    m_data.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Tensor Tensor::vector(std::span<const float> values)
{
    Tensor t(static_cast<int>(values.size()), 1, 1);
    std::copy(values.begin(), values.end(), t.m_data.begin());
    return t;
}

void Tensor::fill(float value)
{
    std::fill(m_data.begin(), m_data.end(), value);
}

Tensor& Tensor::operator+=(const Tensor& other)
{
    if (!same_shape(other))
        throw ShapeMismatch("tensor add: " + shape_string() + " vs " + other.shape_string());
    for (std::size_t i = 0; i < m_data.size(); ++i)
        m_data[i] += other.m_data[i];
    return *this;
}

std::string Tensor::shape_string() const
{
    return "(" + std::to_string(m_channels) + "," + std::to_string(m_height) + "," + std::to_string(m_width) + ")";
}

} // namespace d3ssl
