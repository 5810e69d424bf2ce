#include "d3ssl/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "d3ssl/error.hpp"

namespace d3ssl::loss {

namespace {

void check_unit(const Feature& f, const char* what)
{
    if (f.empty())
        throw EmptyFeature(std::string(what) + " is empty");
    const double n = f.norm();
    if (std::abs(n - 1.0) > kUnitNormTolerance)
        throw NonUnitNorm(std::string(what) + " has norm " + std::to_string(n));
}

std::vector<double> widen(const Feature& f)
{
    return {f.values().begin(), f.values().end()};
}

} // namespace

void LossConfig::validate() const
{
    if (!(temperature > 0.0))
        throw ConfigError("temperature must be positive");
    if (bank_capacity == 0)
        throw ConfigError("bank_capacity must be positive");
}

MemoryBank::MemoryBank(std::size_t capacity)
    : m_capacity(capacity)
{
}

void MemoryBank::enqueue(const Feature& f)
{
    check_unit(f, "bank feature");
    if (!m_entries.empty() && m_entries.front().size() != f.size())
        throw ShapeMismatch("bank feature dimension changed");
    m_entries.push_back(f);
    while (m_entries.size() > m_capacity)
        m_entries.pop_front();
}

void bank_update(MemoryBank& bank, std::span<const Feature> features)
{
    for (const auto& f : features)
        bank.enqueue(f);
}

NegativeSet::NegativeSet(std::span<const Feature> features)
    : m_rows(features.size())
    , m_dim(features.empty() ? 0 : features.front().size())
{
    m_data.reserve(m_rows * m_dim);
    for (const auto& f : features)
    {
        check_unit(f, "negative");
        if (f.size() != m_dim)
            throw ShapeMismatch("negatives have mixed dimensions");
        m_data.insert(m_data.end(), f.values().begin(), f.values().end());
    }
}

double info_nce_kernel(std::span<const double> z, std::span<const double> z_pos, const NegativeSet& negatives,
                       double tau, std::span<double> d_z, std::span<double> d_pos)
{
    const std::size_t d = z.size();
    const std::size_t n = negatives.size();
    Eigen::Map<const Eigen::VectorXd> anchor(z.data(), static_cast<Eigen::Index>(d));
    Eigen::Map<const Eigen::VectorXd> positive(z_pos.data(), static_cast<Eigen::Index>(d));

    Eigen::VectorXd logits(static_cast<Eigen::Index>(n) + 1);
    double pos_dot = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        pos_dot += z[i] * z_pos[i];
    logits[0] = pos_dot / tau;
    if (n > 0)
    {
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> neg(
            negatives.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        logits.tail(static_cast<Eigen::Index>(n)).noalias() = neg * anchor / tau;
    }

    const double peak = logits.maxCoeff();
    Eigen::VectorXd weights = (logits.array() - peak).exp();
    double total = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i)
        total += weights[i];
    const double loss = peak + std::log(total) - logits[0];

    if (!d_z.empty() || !d_pos.empty())
    {
        weights /= total; // softmax
        if (!d_z.empty())
        {
            Eigen::Map<Eigen::VectorXd> gz(d_z.data(), static_cast<Eigen::Index>(d));
            gz = (weights[0] - 1.0) * positive;
            if (n > 0)
            {
                Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> neg(
                    negatives.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
                gz.noalias() += neg.transpose() * weights.tail(static_cast<Eigen::Index>(n));
            }
            gz /= tau;
        }
        if (!d_pos.empty())
        {
            Eigen::Map<Eigen::VectorXd> gp(d_pos.data(), static_cast<Eigen::Index>(d));
            gp = (weights[0] - 1.0) / tau * anchor;
        }
    }
    return loss;
}

double info_nce(const Feature& z, const Feature& z_pos, std::span<const Feature> negatives, double tau)
{
    check_unit(z, "anchor");
    check_unit(z_pos, "positive");
    if (z.size() != z_pos.size())
        throw ShapeMismatch("anchor and positive dimensions differ");
    const NegativeSet negs(negatives);
    if (negs.size() > 0 && negs.dim() != z.size())
        throw ShapeMismatch("negative dimension differs from anchor");
    const auto a = widen(z);
    const auto p = widen(z_pos);
    return info_nce_kernel(a, p, negs, tau);
}

NceTerm info_nce_grad(const Feature& z, const Feature& z_pos, const NegativeSet& negatives, double tau)
{
    check_unit(z, "anchor");
    check_unit(z_pos, "positive");
    if (z.size() != z_pos.size() || (negatives.size() > 0 && negatives.dim() != z.size()))
        throw ShapeMismatch("feature dimensions differ");
    NceTerm term;
    term.d_anchor.resize(z.size());
    term.d_positive.resize(z.size());
    const auto a = widen(z);
    const auto p = widen(z_pos);
    term.loss = info_nce_kernel(a, p, negatives, tau, term.d_anchor, term.d_positive);
    return term;
}

double decoupling_loss(const Feature& z_s1, const Feature& z_s2, const Feature& z_t1, const Feature& z_t2,
                       std::span<const Feature> negatives, double tau)
{
    return info_nce(z_s1, z_t2, negatives, tau) + info_nce(z_s2, z_t1, negatives, tau);
}

double depositioning_loss(const Feature& z_s3, const Feature& z_t1, const Feature& z_t2,
                          std::span<const Feature> negatives, double tau)
{
    return info_nce(z_s3, z_t2, negatives, tau) + info_nce(z_s3, z_t1, negatives, tau);
}

double total_loss(std::span<const double> per_box_dc, std::span<const double> per_box_dp)
{
    if (per_box_dc.empty())
        throw EmptyProposalSet("total_loss needs at least one box");
    if (per_box_dc.size() != per_box_dp.size())
        throw ShapeMismatch("per-box loss lists differ in length");
    double sum = 0.0;
    for (std::size_t i = 0; i < per_box_dc.size(); ++i)
        sum += per_box_dp[i] + per_box_dc[i];
    return sum / static_cast<double>(per_box_dc.size());
}

} // namespace d3ssl::loss
