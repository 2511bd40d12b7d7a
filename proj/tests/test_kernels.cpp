#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "visil/kernels.hpp"

using namespace visil;

namespace {

void check_near(const Tensorf& got, const oracle::Grid& want, double tol) {
    REQUIRE(got.size() == want.size());
    for (Index i = 0; i < got.size(); ++i) REQUIRE(std::abs(static_cast<double>(got[i]) - want.v[i]) < tol);
}

}  // namespace

TEST_CASE("tensor_dot reduces to a dot product") {
    Tensorf a(Shape{1, 1, 3}, {1, 2, 3});
    Tensorf b(Shape{3, 1, 1}, {4, 5, 6});
    const Tensorf c = tensor_dot(a, b, 2, 0);
    CHECK(c.shape() == Shape{1, 1, 1, 1});
    CHECK(c[0] == 32.0f);
}

TEST_CASE("tensor_dot sums ones") {
    const Tensorf c = tensor_dot(Tensorf(Shape{2, 1, 2}, 1.0f), Tensorf(Shape{2, 1, 1}, 1.0f), 2, 0);
    CHECK(c.shape() == Shape{2, 1, 1, 1});
    for (float v : c.values()) CHECK(v == 2.0f);
}

TEST_CASE("tensor_dot matches the nested-loop oracle on a seeded pair") {
    std::mt19937_64 rng(7);
    const auto a = oracle::random_tensor<float>(Shape{2, 2, 3}, rng);
    const auto b = oracle::random_tensor<float>(Shape{3, 2, 2}, rng);
    check_near(tensor_dot(a, b, 2, 0), oracle::tensor_dot(oracle::from_tensor(a), oracle::from_tensor(b), 2, 0), 1e-6);
}

TEST_CASE("tensor_dot matches the oracle on every small shape") {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<Index> ext(1, 4);
    std::uniform_int_distribution<int> rank(1, 3);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const int ra = rank(rng), rb = rank(rng);
        std::vector<Index> da, db;
        for (int i = 0; i < ra; ++i) da.push_back(ext(rng));
        for (int i = 0; i < rb; ++i) db.push_back(ext(rng));
        const int axis_a = static_cast<int>(rng() % static_cast<unsigned>(ra));
        const int axis_b = static_cast<int>(rng() % static_cast<unsigned>(rb));
        db[static_cast<std::size_t>(axis_b)] = da[static_cast<std::size_t>(axis_a)];
        if (ra + rb - 2 > Shape::kMaxRank) continue;
        const Shape sa{std::span<const Index>(da)}, sb{std::span<const Index>(db)};
        if (sa.size() > 256 || sb.size() > 256) continue;
        const auto a = oracle::random_tensor<double>(sa, rng);
        const auto b = oracle::random_tensor<double>(sb, rng);
        const auto got = tensor_dot(a, b, axis_a, axis_b);
        const auto want = oracle::tensor_dot(oracle::from_tensor(a), oracle::from_tensor(b), axis_a, axis_b);
        REQUIRE(got.size() == want.size());
        for (Index i = 0; i < got.size(); ++i) REQUIRE(std::abs(got[i] - want.v[i]) < 1e-12);
        ++checked;
    }
    CHECK(checked > 100);
}

TEST_CASE("tensor_dot rejects mismatched axes") {
    CHECK_THROWS_AS(tensor_dot(Tensorf(Shape{2, 3}), Tensorf(Shape{2, 3}), 1, 0), ShapeError);
}

TEST_CASE("conv2d ones kernel on ones input") {
    const Tensorf out = conv2d(Tensorf(Shape{4, 4, 1}, 1.0f), Tensorf(Shape{3, 3, 1, 1}, 1.0f));
    REQUIRE(out.shape() == Shape{4, 4, 1});
    CHECK(out.at(1, 1, 0) == 9.0f);
    CHECK(out.at(2, 2, 0) == 9.0f);
    CHECK(out.at(0, 1, 0) == 6.0f);
    CHECK(out.at(2, 3, 0) == 6.0f);
    CHECK(out.at(0, 0, 0) == 4.0f);
    CHECK(out.at(3, 3, 0) == 4.0f);
}

TEST_CASE("conv2d identity kernel selects channel 0") {
    std::mt19937_64 rng(3);
    const auto in = oracle::random_tensor<float>(Shape{5, 6, 3}, rng);
    Tensorf k(Shape{1, 1, 3, 1});
    k[0] = 1.0f;
    const Tensorf out = conv2d(in, k);
    for (Index y = 0; y < 5; ++y)
        for (Index x = 0; x < 6; ++x) CHECK(out.at(y, x, 0) == in.at(y, x, 0));
}

TEST_CASE("conv2d matches the direct oracle for both paddings and strides") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 40; ++trial) {
        const Index h = 3 + static_cast<Index>(rng() % 7), w = 3 + static_cast<Index>(rng() % 7);
        const Index cin = 1 + static_cast<Index>(rng() % 3), cout = 1 + static_cast<Index>(rng() % 3);
        const Index k = trial % 2 ? 3 : 1, stride = 1 + trial % 3 / 2;
        const bool same = trial % 4 < 2;
        const auto in = oracle::random_tensor<double>(Shape{h, w, cin}, rng);
        const auto ker = oracle::random_tensor<double>(Shape{k, k, cin, cout}, rng);
        const auto got = conv2d(in, ker, stride, same ? Padding::same : Padding::valid);
        const auto want = oracle::conv2d(oracle::from_tensor(in), oracle::from_tensor(ker), stride, same);
        REQUIRE(std::vector<Index>(got.shape().extents().begin(), got.shape().extents().end()) == want.dims);
        for (Index i = 0; i < got.size(); ++i) REQUIRE(std::abs(got[i] - want.v[i]) < 1e-12);
    }
}

TEST_CASE("conv_output_extent") {
    CHECK(conv_output_extent(7, 3, 1, Padding::same) == 7);
    CHECK(conv_output_extent(7, 3, 2, Padding::same) == 4);
    CHECK(conv_output_extent(7, 3, 1, Padding::valid) == 5);
    CHECK(conv_output_extent(7, 3, 2, Padding::valid) == 3);
}

TEST_CASE("max_pool2d basics") {
    const Tensorf one = max_pool2d(Tensorf(Shape{2, 2, 1}, {1, 2, 3, 4}));
    REQUIRE(one.shape() == Shape{1, 1, 1});
    CHECK(one[0] == 4.0f);
    const Tensorf c = max_pool2d(Tensorf(Shape{4, 4, 1}, 2.5f));
    REQUIRE(c.shape() == Shape{2, 2, 1});
    for (float v : c.values()) CHECK(v == 2.5f);
}

TEST_CASE("max_pool2d matches window enumeration, including odd extents") {
    std::mt19937_64 rng(3);
    const auto in = oracle::random_tensor<float>(Shape{4, 6, 1}, rng);
    check_near(max_pool2d(in), oracle::max_pool(oracle::from_tensor(in), 2, 2), 1e-12);
    for (int trial = 0; trial < 30; ++trial) {
        const Index h = 2 + static_cast<Index>(rng() % 8), w = 2 + static_cast<Index>(rng() % 8);
        const auto t = oracle::random_tensor<float>(Shape{h, w, 2}, rng);
        const Tensorf got = max_pool2d(t);
        CHECK(got.dim(0) == (h + 1) / 2);
        CHECK(got.dim(1) == (w + 1) / 2);
        check_near(got, oracle::max_pool(oracle::from_tensor(t), 2, 2), 1e-12);
    }
    CHECK_THROWS_AS(max_pool2d(Tensorf(Shape{1, 4, 1})), ShapeError);
}

TEST_CASE("max_pool2d argmax takes the first maximum") {
    std::vector<Index> arg;
    max_pool2d(Tensorf(Shape{2, 2, 1}, {5, 5, 1, 5}), 2, 2, arg);
    REQUIRE(arg.size() == 1);
    CHECK(arg[0] == 0);
}

TEST_CASE("relu and hard_tanh") {
    const Tensorf h = hard_tanh(Tensorf(Shape{3}, {2.0f, -3.0f, 0.5f}));
    CHECK(h[0] == 1.0f);
    CHECK(h[1] == -1.0f);
    CHECK(h[2] == 0.5f);
    const Tensorf r = relu(Tensorf(Shape{2}, {-0.7f, 0.7f}));
    CHECK(r[0] == 0.0f);
    CHECK(r[1] == 0.7f);
}

TEST_CASE("elementwise ranges hold on random inputs") {
    std::mt19937_64 rng(5);
    const auto x = oracle::random_tensor<float>(Shape{1000}, rng, -10.0, 10.0);
    for (float v : hard_tanh(x).values()) CHECK((v >= -1.0f && v <= 1.0f));
    for (float v : relu(x).values()) CHECK(v >= 0.0f);
}

TEST_CASE("conv and pool shape arithmetic gives a quarter of the input") {
    for (Index x = 8; x <= 128; x += 5)
        for (Index y = 8; y <= 128; y += 7) {
            Tensorf t(Shape{x, y, 1});
            for (int p = 0; p < 2; ++p) t = max_pool2d(conv2d(t, Tensorf(Shape{3, 3, 1, 1})));
            CHECK(t.dim(0) == (x + 3) / 4);
            CHECK(t.dim(1) == (y + 3) / 4);
        }
}

TEST_CASE("kernels are deterministic") {
    std::mt19937_64 rng(9);
    const auto in = oracle::random_tensor<float>(Shape{9, 7, 4}, rng);
    const auto k = oracle::random_tensor<float>(Shape{3, 3, 4, 5}, rng);
    CHECK(conv2d(in, k) == conv2d(in, k));
    CHECK(max_pool2d(in) == max_pool2d(in));
}
