#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hdrdistill/gradcheck.hpp"
#include "hdrdistill/rng.hpp"
#include "hdrdistill/tensor.hpp"

using namespace hdrdistill;

namespace {

Tensor random_var(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::variable(shape, std::move(v));
}

}  // namespace

TEST_CASE("elementwise arithmetic") {
    Tensor a = Tensor::constant({2}, {1.0, 2.0});
    Tensor b = Tensor::constant({2}, {3.0, 4.0});
    Tensor c = a + b;
    CHECK(c.values()[0] == 4.0);
    CHECK(c.values()[1] == 6.0);

    Tensor x = Tensor::variable({3}, {0.5, -1.0, 2.0});
    Tensor y = x * 1.0;
    for (std::size_t i = 0; i < 3; i++) CHECK(y.values()[i] == x.values()[i]);
    backward(sum(y));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("product rule gradients") {
    Tensor a = Tensor::variable({1}, {2.0});
    Tensor b = Tensor::variable({1}, {3.0});
    backward(sum(a * b));
    CHECK(a.grad()[0] == 3.0);
    CHECK(b.grad()[0] == 2.0);
}

TEST_CASE("broadcasting over trailing axes") {
    Tensor a = Tensor::variable({2, 1}, {1.0, 2.0});
    Tensor b = Tensor::variable({2, 3}, {1, 1, 1, 2, 2, 2});
    Tensor c = a * b;
    REQUIRE(c.shape() == Shape{2, 3});
    CHECK(c.values() == std::vector<double>{1, 1, 1, 4, 4, 4});
    backward(sum(c));
    CHECK(a.grad()[0] == 3.0);  // summed over the broadcast axis
    CHECK(a.grad()[1] == 6.0);

    Tensor s = Tensor::variable({1}, {2.0});
    Tensor d = s * b;
    backward(sum(d));
    CHECK(s.grad()[0] == 9.0);

    CHECK_THROWS_AS(add(Tensor::constant({2}, 0.0), Tensor::constant({3}, 0.0)),
                    ShapeMismatchError);
}

TEST_CASE("transcendentals") {
    CHECK(exp(Tensor::scalar(0.0)).item() == 1.0);
    CHECK(exp(Tensor::scalar(-1.0)).item() == doctest::Approx(0.36787944117144233).epsilon(1e-15));
    Tensor x = Tensor::variable({1}, {1.0});
    Tensor y = log(x);
    CHECK(y.item() == 0.0);
    backward(sum(y));
    CHECK(x.grad()[0] == 1.0);
    CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
    CHECK_THROWS_AS(sqrt(Tensor::scalar(-1.0)), DomainError);
}

TEST_CASE("matmul") {
    Tensor i2 = Tensor::constant({2, 2}, {1, 0, 0, 1});
    Tensor r = matmul(i2, i2);
    CHECK(r.values() == std::vector<double>{1, 0, 0, 1});

    Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::constant({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.values() == std::vector<double>{3, 7});

    CHECK_THROWS_AS(matmul(Tensor::constant({2, 3}, 0.0), Tensor::constant({2, 3}, 0.0)),
                    ShapeMismatchError);

    RngStream rng(7, "matmul-gradcheck");
    Tensor ga = random_var({3, 4}, rng);
    Tensor gb = random_var({4, 2}, rng);
    double err = gradcheck(
        [](const std::vector<Tensor>& xs) { return sum(matmul(xs[0], xs[1])); }, {ga, gb});
    CHECK(err < 1e-6);
}

TEST_CASE("batched matmul") {
    RngStream rng(11, "batched-matmul");
    Tensor a = random_var({2, 2, 3}, rng);
    Tensor b = random_var({2, 3, 2}, rng);
    Tensor c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 2, 2});
    double err = gradcheck(
        [](const std::vector<Tensor>& xs) { return sum(square(matmul(xs[0], xs[1]))); }, {a, b});
    CHECK(err < 1e-6);
}

TEST_CASE("conv2d basics") {
    // 1x1 kernel of weight 1 is the identity.
    Tensor x = Tensor::constant({1, 2, 2}, {1, 2, 3, 4});
    Tensor w1 = Tensor::constant({1, 1, 1, 1}, {1.0});
    Tensor y = conv2d(x, w1, Tensor(), 1, 0);
    CHECK(y.values() == x.values());

    Tensor w0 = Tensor::constant({1, 1, 3, 3}, 0.0);
    Tensor z = conv2d(x, w0, Tensor(), 1, 1);
    for (double v : z.values()) CHECK(v == 0.0);

    CHECK_THROWS_AS(conv2d(x, Tensor::constant({1, 1, 2, 2}, 0.0), Tensor(), 1, 0),
                    ShapeMismatchError);
    CHECK_THROWS_AS(conv2d(x, Tensor::constant({1, 2, 1, 1}, 0.0), Tensor(), 1, 0),
                    ShapeMismatchError);
}

TEST_CASE("conv2d gradients vs finite differences") {
    RngStream rng(13, "conv-gradcheck");
    Tensor x = random_var({1, 2, 5, 5}, rng);
    Tensor w = random_var({3, 2, 3, 3}, rng);
    Tensor b = random_var({3}, rng);
    double err = gradcheck(
        [](const std::vector<Tensor>& xs) {
            return sum(square(conv2d(xs[0], xs[1], xs[2], 1, 1)));
        },
        {x, w, b});
    CHECK(err < 1e-5);
}

TEST_CASE("conv2d depthwise and strided") {
    RngStream rng(17, "conv-variants");
    Tensor x = random_var({4, 6, 6}, rng);
    Tensor w = random_var({4, 1, 3, 3}, rng);
    double err = gradcheck(
        [](const std::vector<Tensor>& xs) {
            return sum(square(conv2d(xs[0], xs[1], Tensor(), 1, 1, 4)));
        },
        {x, w});
    CHECK(err < 1e-5);

    Tensor w2 = random_var({2, 4, 3, 3}, rng);
    Tensor y = conv2d(x, w2, Tensor(), 2, 1);
    CHECK(y.shape() == Shape{2, 3, 3});
}

TEST_CASE("softmax") {
    Tensor u = softmax(Tensor::constant({3}, 0.0), 0);
    for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    Tensor big = softmax(Tensor::constant({2}, {1.0, 1001.0}), 0);
    CHECK(big.values()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(big.values()[1] == doctest::Approx(1.0).epsilon(1e-12));

    RngStream rng(19, "softmax-sum");
    for (int t = 0; t < 10; t++) {
        Tensor x = random_var({4, 5}, rng, -30.0, 30.0);
        Tensor y = softmax(x, 1);
        for (int r = 0; r < 4; r++) {
            double s = 0.0;
            for (int c = 0; c < 5; c++) s += y.values()[r * 5 + c];
            CHECK(std::fabs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("softmax jacobian vs finite differences") {
    RngStream rng(23, "softmax-grad");
    Tensor x = random_var({5}, rng);
    // Check J^T e_i for every output coordinate.
    double worst = 0.0;
    for (int i = 0; i < 5; i++) {
        std::vector<double> sel(5, 0.0);
        sel[i] = 1.0;
        Tensor mask = Tensor::constant({5}, sel);
        worst = std::max(worst, gradcheck(
                                    [mask](const std::vector<Tensor>& xs) {
                                        return sum(softmax(xs[0], 0) * mask);
                                    },
                                    {x}));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("reductions") {
    CHECK(sum(Tensor::constant({3}, {1, 2, 3})).item() == 6.0);
    CHECK(mean(Tensor::constant({4, 4}, 2.5)).item() == 2.5);

    Tensor x = Tensor::variable({3}, {5, 6, 7});
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);

    Tensor m = Tensor::variable({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor s = sum(m, {1});
    CHECK(s.values() == std::vector<double>{6, 15});
    Tensor sk = sum(m, {0}, true);
    CHECK(sk.shape() == Shape{1, 3});

    RngStream rng(29, "sum-grad");
    Tensor r = random_var({2, 3, 4}, rng);
    double err = gradcheck(
        [](const std::vector<Tensor>& xs) { return sum(square(sum(xs[0], {0, 2}))); }, {r});
    CHECK(err < 1e-6);
}

TEST_CASE("masked reduction via 0/1 mul") {
    Tensor img = Tensor::variable({4}, {1, 2, 3, 4});
    Tensor mask = Tensor::constant({4}, {0, 1, 1, 0});
    Tensor s = sum(img * mask);
    CHECK(s.item() == 5.0);
    backward(s);
    CHECK(img.grad() == std::vector<double>{0, 1, 1, 0});
}

TEST_CASE("cumsum") {
    Tensor h = Tensor::constant({4}, {0.25, 0.25, 0.25, 0.25});
    CHECK(cumsum(h, 0).values() == std::vector<double>{0.25, 0.5, 0.75, 1.0});
    RngStream rng(31, "cumsum-grad");
    Tensor x = random_var({2, 5}, rng);
    double err = gradcheck(
        [](const std::vector<Tensor>& xs) { return sum(square(cumsum(xs[0], 1))); }, {x});
    CHECK(err < 1e-6);
}

TEST_CASE("shape ops") {
    RngStream rng(37, "shape-grad");
    Tensor x = random_var({2, 6}, rng);
    Tensor y = reshape(x, {3, 4});
    CHECK(y.values() == x.values());
    CHECK_THROWS_AS(reshape(x, {5}), ShapeMismatchError);

    double err = gradcheck(
        [](const std::vector<Tensor>& xs) {
            return sum(square(transpose2(reshape(xs[0], {3, 4}))));
        },
        {x});
    CHECK(err < 1e-6);

    Tensor img = random_var({2, 2, 2}, rng);
    Tensor up = upsample_nearest2(img, 2);
    CHECK(up.shape() == Shape{2, 4, 4});
    err = gradcheck(
        [](const std::vector<Tensor>& xs) {
            return sum(square(upsample_nearest2(xs[0], 2)));
        },
        {img});
    CHECK(err < 1e-6);

    Tensor pool_in = random_var({1, 4, 4}, rng);
    Tensor down = avgpool2(pool_in);
    CHECK(down.shape() == Shape{1, 2, 2});
    err = gradcheck(
        [](const std::vector<Tensor>& xs) { return sum(square(avgpool2(xs[0]))); }, {pool_in});
    CHECK(err < 1e-6);
}

TEST_CASE("pointwise nonlinearities gradcheck") {
    RngStream rng(41, "unary-grad");
    Tensor x = random_var({3, 3}, rng, 0.1, 2.0);
    double err = gradcheck(
        [](const std::vector<Tensor>& xs) {
            return sum(square(tanh(xs[0])) + sigmoid(xs[0]) + sqrt(xs[0]) + log(xs[0]));
        },
        {x});
    CHECK(err < 1e-6);

    Tensor y = random_var({3, 3}, rng);
    err = gradcheck(
        [](const std::vector<Tensor>& xs) {
            return sum(abs(xs[0]) + clamp(xs[0], -0.5, 0.5));
        },
        {y});
    CHECK(err < 1e-6);
}

TEST_CASE("backward basics") {
    Tensor x = Tensor::variable({2}, {1.0, 2.0});
    Tensor loss = sum(square(x));
    backward(loss);
    CHECK(x.grad() == std::vector<double>{2.0, 4.0});

    CHECK_THROWS_AS(backward(loss), GraphConsumedError);
    CHECK_THROWS_AS(backward(Tensor::constant({2}, 0.0)), NotScalarError);

    // Loss with no dependence on x still leaves a populated zero gradient.
    x.zero_grad();
    Tensor z = sum(x * Tensor::constant({2}, 0.0));
    backward(z);
    CHECK(x.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("detach blocks gradient flow") {
    Tensor x = Tensor::variable({2}, {1.0, 2.0});
    Tensor d = (x * 2.0).detach();
    CHECK_FALSE(d.requires_grad());
    Tensor loss = sum(x * d);
    backward(loss);
    CHECK(x.grad() == std::vector<double>{2.0, 4.0});  // d treated as constant
}

TEST_CASE("forward determinism") {
    RngStream rng(43, "determinism");
    Tensor x = random_var({2, 3, 8, 8}, rng);
    Tensor w = random_var({4, 3, 3, 3}, rng);
    auto run = [&]() {
        return sum(square(softmax(reshape(conv2d(x, w, Tensor(), 1, 1), {4 * 2, 64}), 1)))
            .item();
    };
    double a = run();
    for (int i = 0; i < 5; i++) CHECK(run() == a);
}

TEST_CASE("gradcheck harness oracle cases") {
    RngStream rng(47, "gradcheck-oracle");
    Tensor x = random_var({6}, rng);
    double err_sum = gradcheck(
        [](const std::vector<Tensor>& xs) { return sum(xs[0]); }, {x});
    CHECK(err_sum < 1e-9);

    Tensor y = random_var({6}, rng);
    double err_exp = gradcheck(
        [](const std::vector<Tensor>& xs) { return sum(exp(xs[0])); }, {y});
    CHECK(err_exp < 1e-6);
}
