#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "d3ssl/error.hpp"
#include "d3ssl/loss.hpp"
#include "d3ssl/rng.hpp"
#include "support/oracles.hpp"

using namespace d3ssl;
using namespace d3ssl::loss;

namespace {

Feature basis(std::size_t d, std::size_t i)
{
    std::vector<float> v(d, 0.0f);
    v[i] = 1.0f;
    return Feature(std::move(v));
}

std::vector<double> random_unit(Rng& rng, std::size_t d)
{
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(d);
    double s = 0;
    for (auto& x : v)
    {
        x = n(rng);
        s += x * x;
    }
    for (auto& x : v)
        x /= std::sqrt(s);
    return v;
}

Feature random_feature(Rng& rng, std::size_t d)
{
    const auto v = random_unit(rng, d);
    std::vector<float> f(v.begin(), v.end());
    // Renormalize in float so the stored vector is unit to float precision.
    double s = 0;
    for (float x : f)
        s += double(x) * x;
    for (auto& x : f)
        x = static_cast<float>(x / std::sqrt(s));
    return Feature(std::move(f));
}

std::vector<Feature> random_features(Rng& rng, std::size_t n, std::size_t d)
{
    std::vector<Feature> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(random_feature(rng, d));
    return out;
}

} // namespace

TEST_CASE("closed-form values")
{
    const Feature e1 = basis(4, 0), e2 = basis(4, 1), e3 = basis(4, 2);
    CHECK(std::abs(info_nce(e1, e1, {}, 0.2)) < 1e-6);
    const std::vector<Feature> one_orthogonal{e2};
    CHECK(std::abs(info_nce(e1, e1, one_orthogonal, 1.0) - std::log1p(std::exp(-1.0))) < 1e-6);
    CHECK(std::abs(info_nce(e1, e1, one_orthogonal, 1.0) - 0.313262) < 1e-6);
    const std::vector<Feature> third{e3};
    CHECK(std::abs(info_nce(e1, e2, third, 1.0) - std::log(2.0)) < 1e-6);
    CHECK(std::abs(info_nce(e1, e2, third, 1.0) - 0.693147) < 1e-6);
}

TEST_CASE("input validation")
{
    const Feature e1 = basis(3, 0);
    CHECK_THROWS_AS(info_nce(Feature{}, e1, {}, 0.2), EmptyFeature);
    CHECK_THROWS_AS(info_nce(Feature({1.0f, 1.0f, 0.0f}), e1, {}, 0.2), NonUnitNorm);
    CHECK_THROWS_AS(info_nce(e1, Feature({0.5f, 0.0f, 0.0f}), {}, 0.2), NonUnitNorm);
    const std::vector<Feature> bad_neg{Feature({0.0f, 2.0f, 0.0f})};
    CHECK_THROWS_AS(info_nce(e1, e1, bad_neg, 0.2), NonUnitNorm);
    CHECK_THROWS_AS(info_nce(e1, basis(4, 0), {}, 0.2), ShapeMismatch);
    const std::vector<Feature> wrong_dim{basis(5, 1)};
    CHECK_THROWS_AS(info_nce(e1, e1, wrong_dim, 0.2), ShapeMismatch);
    // Within tolerance is accepted.
    CHECK_NOTHROW(info_nce(Feature({1.00005f, 0.0f, 0.0f}), e1, {}, 0.2));

    CHECK_NOTHROW(LossConfig{}.validate());
    CHECK_THROWS_AS((LossConfig{0.0, 16}).validate(), ConfigError);
    CHECK_THROWS_AS((LossConfig{0.2, 0}).validate(), ConfigError);
}

TEST_CASE("matches the naive oracle")
{
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial)
    {
        const std::size_t d = static_cast<std::size_t>(uniform_int(rng, 2, 64));
        const auto negs = random_features(rng, static_cast<std::size_t>(uniform_int(rng, 0, 40)), d);
        const Feature z = random_feature(rng, d), p = random_feature(rng, d);
        const double tau = uniform(rng, 0.1, 1.0);
        REQUIRE(std::abs(info_nce(z, p, negs, tau) - oracle::naive_nce(z, p, negs, tau)) < 1e-9);
    }
}

TEST_CASE("gradients match central differences")
{
    Rng rng(2);
    const double eps = 1e-3;
    for (int trial = 0; trial < 100; ++trial)
    {
        const std::size_t d = static_cast<std::size_t>(uniform_int(rng, 4, 32));
        const auto negs_f = random_features(rng, static_cast<std::size_t>(uniform_int(rng, 1, 16)), d);
        const NegativeSet negs(negs_f);
        const auto z = random_unit(rng, d);
        const auto p = random_unit(rng, d);
        const double tau = uniform(rng, 0.2, 1.0);

        std::vector<double> gz(d), gp(d);
        info_nce_kernel(z, p, negs, tau, gz, gp);
        for (int which = 0; which < 2; ++which)
        {
            const auto& g = which == 0 ? gz : gp;
            double diff = 0, norm = 0;
            for (std::size_t i = 0; i < d; ++i)
            {
                auto zp = z, zm = z, pp = p, pm = p;
                (which == 0 ? zp : pp)[i] += eps;
                (which == 0 ? zm : pm)[i] -= eps;
                const double num = (info_nce_kernel(which == 0 ? zp : z, which == 0 ? p : pp, negs, tau) -
                                    info_nce_kernel(which == 0 ? zm : z, which == 0 ? p : pm, negs, tau)) /
                                   (2 * eps);
                diff += (num - g[i]) * (num - g[i]);
                norm += g[i] * g[i];
            }
            REQUIRE(std::sqrt(diff) / std::sqrt(norm) < 1e-4);
        }
    }
}

TEST_CASE("info_nce_grad agrees with the kernel")
{
    Rng rng(3);
    const auto negs_f = random_features(rng, 10, 16);
    const NegativeSet negs(negs_f);
    const Feature z = random_feature(rng, 16), p = random_feature(rng, 16);
    const NceTerm t = info_nce_grad(z, p, negs, 0.2);
    CHECK(t.loss == doctest::Approx(info_nce(z, p, negs_f, 0.2)).epsilon(1e-12));
    CHECK(t.d_anchor.size() == 16);
    CHECK(t.d_positive.size() == 16);
}

TEST_CASE("permutation invariance and monotonicity")
{
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial)
    {
        auto negs = random_features(rng, 12, 8);
        const Feature z = random_feature(rng, 8), p = random_feature(rng, 8);
        const double base = info_nce(z, p, negs, 0.2);
        std::shuffle(negs.begin(), negs.end(), rng);
        REQUIRE(info_nce(z, p, negs, 0.2) == doctest::Approx(base).epsilon(1e-12));
        negs.push_back(random_feature(rng, 8));
        REQUIRE(info_nce(z, p, negs, 0.2) >= base);
    }
}

TEST_CASE("de-coupling and de-positioning compositions")
{
    Rng rng(5);
    const Feature a = random_feature(rng, 16);
    CHECK(std::abs(decoupling_loss(a, a, a, a, {}, 0.2)) < 1e-6);
    CHECK(std::abs(depositioning_loss(a, a, a, {}, 0.2)) < 1e-6);

    for (int trial = 0; trial < 100; ++trial)
    {
        const auto bank = random_features(rng, 8, 16);
        const Feature s1 = random_feature(rng, 16), s2 = random_feature(rng, 16);
        const Feature t1 = random_feature(rng, 16), t2 = random_feature(rng, 16);
        const Feature s3 = random_feature(rng, 16);
        const double dc = decoupling_loss(s1, s2, t1, t2, bank, 0.2);
        REQUIRE(std::abs(dc - (oracle::naive_nce(s1, t2, bank, 0.2) + oracle::naive_nce(s2, t1, bank, 0.2))) < 1e-6);
        // Swapping the (s1,t2) and (s2,t1) pairs.
        REQUIRE(decoupling_loss(s2, s1, t2, t1, bank, 0.2) == doctest::Approx(dc).epsilon(1e-12));
        const double dp = depositioning_loss(s3, t1, t2, bank, 0.2);
        REQUIRE(std::abs(dp - (oracle::naive_nce(s3, t2, bank, 0.2) + oracle::naive_nce(s3, t1, bank, 0.2))) < 1e-6);
        REQUIRE(depositioning_loss(s3, t2, t1, bank, 0.2) == doctest::Approx(dp).epsilon(1e-12));
    }
}

TEST_CASE("total loss")
{
    const std::vector<double> one_dc{1.5}, one_dp{2.0};
    CHECK(total_loss(one_dc, one_dp) == doctest::Approx(3.5));
    const std::vector<double> zeros{0.0, 0.0, 0.0};
    CHECK(total_loss(zeros, zeros) == 0.0);
    const std::vector<double> dc{1.0, 2.0}, dp{3.0, 4.0};
    CHECK(total_loss(dc, dp) == doctest::Approx(5.0));
    CHECK_THROWS_AS(total_loss(std::vector<double>{}, std::vector<double>{}), EmptyProposalSet);
    CHECK_THROWS_AS(total_loss(dc, one_dp), ShapeMismatch);

    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial)
    {
        std::vector<std::pair<double, double>> terms(static_cast<std::size_t>(uniform_int(rng, 1, 9)));
        for (auto& [a, b] : terms)
        {
            a = uniform(rng, 0, 10);
            b = uniform(rng, 0, 10);
        }
        auto split = [](const auto& t, std::vector<double>& x, std::vector<double>& y) {
            x.clear();
            y.clear();
            for (const auto& [a, b] : t)
            {
                x.push_back(a);
                y.push_back(b);
            }
        };
        std::vector<double> x, y;
        split(terms, x, y);
        const double base = total_loss(x, y);
        std::shuffle(terms.begin(), terms.end(), rng);
        split(terms, x, y);
        REQUIRE(total_loss(x, y) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("memory bank")
{
    MemoryBank bank(4);
    CHECK(bank.empty());
    const Feature z = basis(6, 0);
    // An empty bank still gives a well-defined loss.
    CHECK(std::isfinite(info_nce(z, basis(6, 1), bank.snapshot(), 0.2)));

    for (std::size_t i = 0; i < 6; ++i)
        bank.enqueue(basis(6, i));
    REQUIRE(bank.size() == 4);
    const auto snap = bank.snapshot();
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(snap[i] == basis(6, i + 2));

    CHECK_THROWS_AS(bank.enqueue(Feature(std::vector<float>(6, 1.0f))), NonUnitNorm);
    CHECK_THROWS_AS(bank.enqueue(basis(5, 0)), ShapeMismatch);

    // A step reads its negatives before enqueueing its own teacher features.
    MemoryBank step_bank(16);
    Rng rng(7);
    const auto previous = random_features(rng, 3, 6);
    bank_update(step_bank, previous);
    const auto negatives = step_bank.snapshot();
    const auto current = random_features(rng, 2, 6);
    bank_update(step_bank, current);
    CHECK(negatives.size() == 3);
    for (const auto& c : current)
        CHECK(std::find(negatives.begin(), negatives.end(), c) == negatives.end());
    CHECK(step_bank.size() == 5);
}
