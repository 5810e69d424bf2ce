#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace d3ssl {

// d-dimensional embedding. Projected features are unit-norm; the type
// itself does not enforce it so raw pooled features can share it.
class Feature
{
public:
    Feature() = default;
    explicit Feature(std::vector<float> values)
        : m_values(std::move(values))
    {
    }

    std::size_t size() const { return m_values.size(); }
    bool empty() const { return m_values.empty(); }
    float operator[](std::size_t i) const { return m_values[i]; }
    std::span<const float> values() const { return m_values; }
    std::span<float> values() { return m_values; }

    double dot(const Feature& other) const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < m_values.size(); ++i)
            s += static_cast<double>(m_values[i]) * other.m_values[i];
        return s;
    }

    double norm() const { return std::sqrt(dot(*this)); }

    friend bool operator==(const Feature&, const Feature&) = default;

private:
    std::vector<float> m_values;
};

inline double cosine_similarity(const Feature& a, const Feature& b)
{
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0)
        return 0.0;
    return a.dot(b) / (na * nb);
}

} // namespace d3ssl
