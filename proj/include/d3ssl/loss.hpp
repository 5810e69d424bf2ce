#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "d3ssl/feature.hpp"

namespace d3ssl::loss {

inline constexpr double kUnitNormTolerance = 1e-4;

struct LossConfig
{
    double temperature = 0.2;
    std::size_t bank_capacity = 4096;

    void validate() const;
};

// FIFO of unit-norm teacher features used as negatives.
class MemoryBank
{
public:
    explicit MemoryBank(std::size_t capacity = 4096);

    std::size_t capacity() const { return m_capacity; }
    std::size_t size() const { return m_entries.size(); }
    bool empty() const { return m_entries.empty(); }

    // Throws NonUnitNorm; evicts the oldest entries beyond capacity.
    void enqueue(const Feature& f);
    const std::deque<Feature>& entries() const { return m_entries; }
    // Oldest first.
    std::vector<Feature> snapshot() const { return {m_entries.begin(), m_entries.end()}; }

private:
    std::size_t m_capacity;
    std::deque<Feature> m_entries;
};

void bank_update(MemoryBank& bank, std::span<const Feature> features);

// Immutable row-major copy of a negative set, in double precision.
class NegativeSet
{
public:
    NegativeSet() = default;
    // Throws NonUnitNorm, or ShapeMismatch on mixed dimensions.
    explicit NegativeSet(std::span<const Feature> features);

    std::size_t size() const { return m_rows; }
    std::size_t dim() const { return m_dim; }
    const double* row(std::size_t i) const { return m_data.data() + i * m_dim; }
    const std::vector<double>& data() const { return m_data; }

private:
    std::size_t m_rows = 0;
    std::size_t m_dim = 0;
    std::vector<double> m_data;
};

// Unchecked InfoNCE on raw vectors:
//   -log( exp(z.z+/t) / sum_{j in {z-} u {z+}} exp(z.z_j/t) ).
// Writes the gradients w.r.t. z and z+ when the output spans are non-empty.
double info_nce_kernel(std::span<const double> z, std::span<const double> z_pos, const NegativeSet& negatives,
                       double tau, std::span<double> d_z = {}, std::span<double> d_pos = {});

// Throws EmptyFeature, NonUnitNorm (tolerance 1e-4), ShapeMismatch.
double info_nce(const Feature& z, const Feature& z_pos, std::span<const Feature> negatives, double tau);

struct NceTerm
{
    double loss = 0.0;
    std::vector<double> d_anchor;
    std::vector<double> d_positive;
};

// Validates z and z_pos; the negative set validated itself on construction.
NceTerm info_nce_grad(const Feature& z, const Feature& z_pos, const NegativeSet& negatives, double tau);

// L_nce(z_s1, z_t2) + L_nce(z_s2, z_t1)
double decoupling_loss(const Feature& z_s1, const Feature& z_s2, const Feature& z_t1, const Feature& z_t2,
                       std::span<const Feature> negatives, double tau);

// L_nce(z_s3, z_t2) + L_nce(z_s3, z_t1)
double depositioning_loss(const Feature& z_s3, const Feature& z_t1, const Feature& z_t2,
                          std::span<const Feature> negatives, double tau);

// (1/K) sum_i (dp_i + dc_i). Throws EmptyProposalSet, ShapeMismatch.
double total_loss(std::span<const double> per_box_dc, std::span<const double> per_box_dp);

} // namespace d3ssl::loss
