#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace d3ssl {

// Dense planar (channel, row, column) float buffer. Used for images (3
// channels, values in [0,1]), feature maps and flat vectors (H = W = 1).
class Tensor
{
public:
    Tensor() = default;
    Tensor(int channels, int height, int width, float fill = 0.0f);

    static Tensor vector(std::span<const float> values);

    int channels() const { return m_channels; }
    int height() const { return m_height; }
    int width() const { return m_width; }
    std::size_t size() const { return m_data.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(m_height) * m_width; }
    bool empty() const { return m_data.empty(); }

    float& at(int c, int y, int x) { return m_data[index(c, y, x)]; }
    float at(int c, int y, int x) const { return m_data[index(c, y, x)]; }

    float* data() { return m_data.data(); }
    const float* data() const { return m_data.data(); }
    std::span<float> values() { return m_data; }
    std::span<const float> values() const { return m_data; }
    std::span<float> plane(int c) { return {m_data.data() + c * plane_size(), plane_size()}; }
    std::span<const float> plane(int c) const { return {m_data.data() + c * plane_size(), plane_size()}; }

    bool same_shape(const Tensor& other) const
    {
        return m_channels == other.m_channels && m_height == other.m_height && m_width == other.m_width;
    }

    void fill(float value);
    Tensor& operator+=(const Tensor& other);

    std::string shape_string() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t index(int c, int y, int x) const
    {
        return (static_cast<std::size_t>(c) * m_height + y) * m_width + x;
    }

    int m_channels = 0;
    int m_height = 0;
    int m_width = 0;
    std::vector<float> m_data;
};

} // namespace d3ssl
