#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "lrnoise/errors.hpp"
#include "lrnoise/rng.hpp"

using namespace lrnoise;
using lrnoise::testing::mean_of;
using lrnoise::testing::var_of;

TEST_CASE("identical seed gives identical sequence") {
    RngStream a(1234), b(1234);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
    RngStream c(1234), d(1235);
    bool all_equal = true;
    for (int i = 0; i < 64; ++i) all_equal &= (c.next_u64() == d.next_u64());
    CHECK_FALSE(all_equal);
}

TEST_CASE("split streams are reproducible and distinct") {
    RngStream root(7);
    RngStream a = root.split(0);
    RngStream b = root.split(1);
    RngStream a2 = RngStream(7).split(0);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == a2.next_u64());
    RngStream a3 = RngStream(7).split(0);
    bool all_equal = true;
    for (int i = 0; i < 64; ++i) all_equal &= (a3.next_u64() == b.next_u64());
    CHECK_FALSE(all_equal);
}

TEST_CASE("fork advances the parent so repeated forks differ") {
    RngStream root(99);
    RngStream f1 = root.fork();
    RngStream f2 = root.fork();
    bool all_equal = true;
    for (int i = 0; i < 64; ++i) all_equal &= (f1.next_u64() == f2.next_u64());
    CHECK_FALSE(all_equal);
}

TEST_CASE("split streams are empirically independent") {
    const int n = 1000000;
    RngStream root(2024);
    RngStream a = root.split(10), b = root.split(11);
    double sab = 0.0, sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = a.uniform01() - 0.5;
        double y = b.uniform01() - 0.5;
        sab += x * y;
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
    }
    double cov = sab / n - (sa / n) * (sb / n);
    double corr = cov / std::sqrt((saa / n - (sa / n) * (sa / n)) * (sbb / n - (sb / n) * (sb / n)));
    CHECK(std::fabs(corr) < 0.01);
}

TEST_CASE("uniform01 moments") {
    RngStream rng(5);
    const int n = 1000000;
    std::vector<double> xs(n);
    for (auto& x : xs) {
        x = rng.uniform01();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    CHECK(mean_of(xs) == doctest::Approx(0.5).epsilon(0.005));
    CHECK(var_of(xs) == doctest::Approx(1.0 / 12.0).epsilon(0.01));
}

TEST_CASE("normal moments") {
    RngStream rng(6);
    const int n = 1000000;
    std::vector<double> xs(n);
    for (auto& x : xs) x = rng.normal(2.0, 1.5);
    CHECK(mean_of(xs) == doctest::Approx(2.0).epsilon(0.01));
    CHECK(var_of(xs) == doctest::Approx(2.25).epsilon(0.01));
}

TEST_CASE("poisson moments on both sampling branches") {
    // lambda below the inversion threshold
    {
        RngStream rng(7);
        const int n = 400000;
        std::vector<double> xs(n);
        for (auto& x : xs) x = static_cast<double>(rng.poisson(4.5));
        CHECK(mean_of(xs) == doctest::Approx(4.5).epsilon(0.01));
        CHECK(var_of(xs) == doctest::Approx(4.5).epsilon(0.02));
    }
    // lambda above it (Gaussian approximation)
    {
        RngStream rng(8);
        const int n = 400000;
        std::vector<double> xs(n);
        for (auto& x : xs) x = static_cast<double>(rng.poisson(200.0));
        CHECK(mean_of(xs) == doctest::Approx(200.0).epsilon(0.005));
        CHECK(var_of(xs) == doctest::Approx(200.0).epsilon(0.02));
    }
}

TEST_CASE("poisson edge cases and threshold config") {
    RngStream rng(9);
    CHECK(rng.poisson(0.0) == 0);
    CHECK_THROWS_AS(rng.poisson(-1.0), ParamError);

    double old = RngStream::poisson_inversion_threshold();
    RngStream::set_poisson_inversion_threshold(1000.0);
    CHECK(RngStream::poisson_inversion_threshold() == 1000.0);
    RngStream a(10);
    CHECK(a.poisson(100.0) >= 0);  // inversion branch at high lambda still valid
    RngStream::set_poisson_inversion_threshold(old);
    CHECK_THROWS_AS(RngStream::set_poisson_inversion_threshold(-1.0), ParamError);
}
