#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hdrdistill/optim.hpp"
#include "hdrdistill/raster_io.hpp"
#include "hdrdistill/rng.hpp"

using namespace hdrdistill;

TEST_CASE("zero gradients leave parameters unchanged") {
    Tensor p = Tensor::variable({4}, {1.0, -2.0, 3.0, 0.5});
    ParamGroup g;
    g.add("p", p);
    AdamState st;
    st.init(g);
    AdamHyper hp;
    // No backward ran: the tensor has no grad, treated as zero.
    adam_step(g, st, hp);
    CHECK(p.values() == std::vector<double>{1.0, -2.0, 3.0, 0.5});

    // Explicit zero gradient behaves the same.
    backward(sum(p * Tensor::constant({4}, 0.0)));
    adam_step(g, st, hp);
    CHECK(p.values() == std::vector<double>{1.0, -2.0, 3.0, 0.5});
}

TEST_CASE("first step moves by -sign(g) * lr to first order") {
    Tensor p = Tensor::variable({3}, {0.0, 0.0, 0.0});
    Tensor dir = Tensor::constant({3}, {2.5, -0.03, 7.0});
    ParamGroup g;
    g.add("p", p);
    AdamState st;
    st.init(g);
    AdamHyper hp;
    hp.lr = 1e-3;
    backward(sum(p * dir));  // grad = dir
    adam_step(g, st, hp);
    auto v = p.values();
    CHECK(v[0] == doctest::Approx(-hp.lr).epsilon(1e-6));
    CHECK(v[1] == doctest::Approx(hp.lr).epsilon(1e-6));
    CHECK(v[2] == doctest::Approx(-hp.lr).epsilon(1e-6));
}

TEST_CASE("200 steps on a 2-D quadratic converge") {
    Tensor x = Tensor::variable({2}, {1.0, -0.7});
    Tensor target = Tensor::constant({2}, {0.3, 0.1});
    ParamGroup g;
    g.add("x", x);
    AdamState st;
    st.init(g);
    AdamHyper hp;
    hp.lr = 0.05;
    for (int t = 0; t < 200; t++) {
        g.zero_grad();
        backward(sum(square(x - target)));
        adam_step(g, st, hp);
    }
    auto v = x.values();
    double dist = std::hypot(v[0] - 0.3, v[1] - 0.1);
    CHECK(dist < 1e-3);
}

TEST_CASE("state round trip through checkpoint tensors") {
    RngStream rng(3, "adam-io");
    Tensor a = Tensor::variable({3}, {0.1, 0.2, 0.3});
    Tensor b = Tensor::variable({2}, {-1.0, 1.0});
    ParamGroup g;
    g.add("a", a);
    g.add("b", b);
    AdamState st;
    st.init(g);
    AdamHyper hp;
    for (int t = 0; t < 5; t++) {
        g.zero_grad();
        backward(sum(square(a)) + sum(square(b)));
        adam_step(g, st, hp);
    }
    ParamGroup stored = adam_state_tensors(st, g, "adam");
    AdamState back;
    load_adam_state(back, g, stored, "adam");
    CHECK(back.step == st.step);
    CHECK(back.m == st.m);
    CHECK(back.v == st.v);
    ParamGroup incomplete;
    incomplete.add("adam.step", Tensor::constant({1}, {1.0}));
    AdamState broken;
    CHECK_THROWS_AS(load_adam_state(broken, g, incomplete, "adam"), CheckpointError);
}
