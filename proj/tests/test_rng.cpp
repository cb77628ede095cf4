#include <doctest.h>

#include <cmath>
#include <vector>

#include "memtrain/rng.hpp"

using namespace memtrain;

TEST_SUITE("rng") {

TEST_CASE("same key, same sequence") {
    StreamKey k = root_key(1234).sub(5, 6);
    Rng a = k.rng();
    Rng b = k.rng();
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("sibling streams differ") {
    StreamKey k = root_key(1234);
    Rng a = k.sub(1).rng();
    Rng b = k.sub(2).rng();
    int same = 0;
    for (int i = 0; i < 64; ++i)
        if (a.next_u64() == b.next_u64()) ++same;
    CHECK(same == 0);
}

TEST_CASE("uniform range and mean") {
    Rng rng = root_key(77).rng();
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("normal moments") {
    Rng rng = root_key(99).rng();
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        s2 += z * z;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

} // TEST_SUITE
