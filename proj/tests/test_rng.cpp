#include <doctest.h>

#include "codetect/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

using namespace codetect;

namespace {

/// Mean of n samples drawn by `draw`, for 3-sigma statistical checks.
template <typename F>
double sample_mean(F&& draw, int n) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += draw();
    return sum / n;
}

} // namespace

TEST_CASE("seed derivation is deterministic and stream-separated") {
    CHECK(mix_seed(42) == mix_seed(42));
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));

    // No collisions across a block of (stream, index) pairs.
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 8; ++s)
        for (std::uint64_t i = 0; i < 64; ++i) seen.insert(derive_seed(7, s, i));
    CHECK(seen.size() == 8 * 64);
}

TEST_CASE("identical seeds give identical streams, different seeds differ") {
    Rng a(123), b(123), c(124);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t x = a.next_u64();
        all_equal = all_equal && x == b.next_u64();
        any_diff = any_diff || x != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform01 stays in [0,1) and uniform respects bounds") {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.uniform(-2.5, 3.5);
        CHECK(v >= -2.5);
        CHECK(v < 3.5);
    }
    // Mean of U[0,1) is 1/2 with variance 1/12; 3 sigma over 10k draws.
    Rng rng2(6);
    const double m = sample_mean([&] { return rng2.uniform01(); }, 10000);
    CHECK(std::abs(m - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / 10000.0));
}

TEST_CASE("uniform_int is in range and roughly uniform") {
    Rng rng(7);
    CHECK(rng.uniform_int(0) == 0);
    std::vector<int> counts(10, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const std::uint64_t x = rng.uniform_int(10);
        REQUIRE(x < 10);
        ++counts[static_cast<std::size_t>(x)];
    }
    // Each bucket is Binomial(n, 1/10); 4-sigma bounds keep flakiness out.
    const double mu = n / 10.0;
    const double sigma = std::sqrt(n * 0.1 * 0.9);
    for (const int c : counts) CHECK(std::abs(c - mu) < 4.0 * sigma);
}

TEST_CASE("normal matches its first two moments") {
    Rng rng(11);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal(2.0, 3.0);
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean - 2.0) < 3.0 * 3.0 / std::sqrt(static_cast<double>(n)));
    // Var of the sample variance of a Gaussian is ~2 sigma^4 / n.
    CHECK(std::abs(var - 9.0) < 3.0 * std::sqrt(2.0 * 81.0 / n));
}

TEST_CASE("poisson hits its mean and never draws for lambda <= 0") {
    Rng rng(13);
    const int n = 20000;
    const double lambda = 1.3;
    const double m = sample_mean([&] { return rng.poisson(lambda); }, n);
    CHECK(std::abs(m - lambda) < 3.0 * std::sqrt(lambda / n));

    // lambda = 0 consumes no entropy: the stream continues as if the call
    // never happened, so existing datasets stay reproducible when new
    // Poisson-rate knobs default to 0.
    Rng a(99), b(99);
    CHECK(a.poisson(0.0) == 0);
    CHECK(a.poisson(-1.0) == 0);
    CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("beta matches its mean") {
    Rng rng(17);
    const double a = 8.0, b = 2.0;
    const int n = 20000;
    const double m = sample_mean([&] { return rng.beta(a, b); }, n);
    const double mean = a / (a + b);
    const double var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
    CHECK(std::abs(m - mean) < 3.0 * std::sqrt(var / n));
    Rng rng2(18);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng2.beta(2.0, 4.0);
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
}

TEST_CASE("shuffle permutes, is deterministic, and spreads elements evenly") {
    Rng a(21), b(21);
    std::vector<int> va{1, 2, 3, 4, 5, 6, 7, 8}, vb = va, sorted = va;
    a.shuffle(va);
    b.shuffle(vb);
    CHECK(va == vb);
    std::vector<int> check = va;
    std::sort(check.begin(), check.end());
    CHECK(check == sorted);

    // Element 0 should land in every slot about n/5 times.
    Rng rng(23);
    const int trials = 20000;
    std::vector<int> slot(5, 0);
    for (int t = 0; t < trials; ++t) {
        std::vector<int> v{0, 1, 2, 3, 4};
        rng.shuffle(v);
        for (int i = 0; i < 5; ++i)
            if (v[static_cast<std::size_t>(i)] == 0) ++slot[static_cast<std::size_t>(i)];
    }
    const double mu = trials / 5.0;
    const double sigma = std::sqrt(trials * 0.2 * 0.8);
    for (const int c : slot) CHECK(std::abs(c - mu) < 4.0 * sigma);
}
