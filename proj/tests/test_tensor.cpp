#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "recon/rng.hpp"
#include "recon/tensor.hpp"

using namespace recon;

TEST_CASE("rng determinism and fork independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng base(7);
    Rng f1 = base.fork(1), f2 = base.fork(2);
    CHECK(f1.next_u64() != f2.next_u64());
    // forking does not consume from the parent
    Rng base2(7);
    base2.fork(1);
    Rng base3(7);
    CHECK(base2.next_u64() == base3.next_u64());
}

TEST_CASE("rng normal moments") {
    Rng r(123);
    double sum = 0, sumsq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sumsq += x * x;
    }
    CHECK(std::fabs(sum / n) < 0.01);
    CHECK(std::fabs(sumsq / n - 1.0) < 0.02);
}

TEST_CASE("tensor shape/data invariant") {
    CHECK_THROWS(Tensor::from({2, 3}, {1.0, 2.0}));
    Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(t.numel() == 24);
    t(1, 2, 3) = 5.0;
    CHECK(t.data[23] == 5.0);
}

TEST_CASE("TNSR v1 round trip") {
    Rng r(9);
    Tensor t = Tensor::randn({3, 5, 7}, r);
    std::string path = (std::filesystem::temp_directory_path() / "roundtrip.tnsr").string();
    save_tnsr(path, t);
    Tensor u = load_tnsr(path);
    REQUIRE(u.shape == t.shape);
    for (size_t i = 0; i < t.data.size(); ++i) CHECK(u.data[i] == t.data[i]);

    // header must be the documented ASCII line
    std::FILE* f = std::fopen(path.c_str(), "rb");
    char line[128] = {0};
    REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
    std::fclose(f);
    CHECK(std::string(line) == "TNSR 1 3 3 5 7 f64 row-major\n");
    std::filesystem::remove(path);
}

TEST_CASE("TNSR rejects garbage") {
    std::string path = (std::filesystem::temp_directory_path() / "bad.tnsr").string();
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("BLOB 9 nope\n", f);
    std::fclose(f);
    CHECK_THROWS(load_tnsr(path));
    std::filesystem::remove(path);
}
