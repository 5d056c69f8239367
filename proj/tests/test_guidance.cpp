#include <doctest.h>

#include <cmath>

#include "isoguide/errors.hpp"
#include "isoguide/guidance.hpp"
#include "isoguide/rng.hpp"

using namespace isoguide;

namespace {

const Shape kShape{3, 4, 4};

Latent rnd(std::uint64_t seed, std::int64_t branch) { return sample_gaussian({seed, branch, 0}, kShape); }

void check_close(const Latent& a, const Latent& b, double tol) {
    REQUIRE(a.shape() == b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol * (1.0 + std::abs(b[i])));
}

Latent affine(std::initializer_list<std::pair<double, const Latent*>> terms) {
    Latent out(kShape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = 0.0;
        for (const auto& [w, x] : terms) v += w * (*x)[i];
        out[i] = static_cast<float>(v);
    }
    return out;
}

}  // namespace

TEST_CASE("cfg examples") {
    const Latent u = rnd(1, 0), c = rnd(1, 1);
    CHECK(cfg_combine(u, c, 1.0).bitwise_equal(c));
    CHECK(cfg_combine(u, c, 0.0).bitwise_equal(u));
    const Latent five = cfg_combine(Latent(kShape, 0.0f), Latent(kShape, 1.0f), 5.0);
    for (std::size_t i = 0; i < five.size(); ++i) CHECK(five[i] == 5.0f);
    CHECK_THROWS_AS(cfg_combine(u, Latent({1, 4, 4}), 1.0), ShapeError);
}

TEST_CASE("isolated attach examples") {
    const Latent u = rnd(2, 0), b = rnd(2, 1);
    for (double lam : {0.0, 1.0, 5.0, -2.0}) {
        check_close(isolated_attach_combine(u, b, {}, lam), cfg_combine(u, b, lam), 1e-6);
        const std::vector<Latent> same(3, b);
        check_close(isolated_attach_combine(u, b, same, lam), cfg_combine(u, b, lam), 1e-6);
    }
    const Latent d1 = rnd(2, 2), d2 = rnd(2, 3);
    const std::vector<Latent> items{affine({{1, &b}, {1, &d1}}), affine({{1, &b}, {1, &d2}})};
    const Latent got = isolated_attach_combine(Latent(kShape), b, items, 1.0);
    check_close(got, affine({{1, &b}, {1, &d1}, {1, &d2}}), 1e-6);
    CHECK_THROWS_AS(isolated_attach_combine(u, b, std::vector<Latent>{Latent({1, 1, 1})}, 1.0), ShapeError);
}

TEST_CASE("no-base and composable examples") {
    const Latent u = rnd(3, 0), e1 = rnd(3, 1), e2 = rnd(3, 2);
    for (double lam : {0.0, 1.0, 5.0}) {
        const std::vector<Latent> one{e1};
        CHECK(no_base_combine(u, one, lam).bitwise_equal(cfg_combine(u, e1, lam)));
        CHECK(composable_combine(u, one, lam).bitwise_equal(cfg_combine(u, e1, lam)));
        const std::vector<Latent> same(3, u);
        check_close(no_base_combine(u, same, lam), u, 1e-6);
    }
    const std::vector<Latent> two{e1, e2};
    check_close(no_base_combine(Latent(kShape), two, 1.0), affine({{1, &e1}, {1, &e2}}), 1e-6);
    CHECK(composable_combine(u, two, 3.0).bitwise_equal(no_base_combine(u, two, 3.0)));
    CHECK_THROWS_AS(no_base_combine(u, std::vector<Latent>{}, 1.0), ValidationError);
}

TEST_CASE("combiners are affine in every argument") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Latent u = rnd(seed, 0), b = rnd(seed, 1), e1 = rnd(seed, 2), e2 = rnd(seed, 3);
        const Latent u2 = rnd(seed, 4), e12 = rnd(seed, 5);
        const double lam = 0.5 + static_cast<double>(seed);
        const double a = 0.3;
        // f(a x + (1-a) y) = a f(x) + (1-a) f(y) when varying one argument.
        const Latent umix = affine({{a, &u}, {1 - a, &u2}});
        const std::vector<Latent> items{e1, e2};
        const Latent f1 = isolated_attach_combine(u, b, items, lam);
        const Latent f2 = isolated_attach_combine(u2, b, items, lam);
        check_close(isolated_attach_combine(umix, b, items, lam), affine({{a, &f1}, {1 - a, &f2}}), 1e-5);

        const Latent emix = affine({{a, &e1}, {1 - a, &e12}});
        const std::vector<Latent> items_b{e12, e2}, items_m{emix, e2};
        const Latent g1 = no_base_combine(u, items, lam), g2 = no_base_combine(u, items_b, lam);
        check_close(no_base_combine(u, items_m, lam), affine({{a, &g1}, {1 - a, &g2}}), 1e-5);

        const Latent c1 = cfg_combine(u, e1, lam), c2 = cfg_combine(u, e12, lam);
        check_close(cfg_combine(u, emix, lam), affine({{a, &c1}, {1 - a, &c2}}), 1e-5);
    }
}

TEST_CASE("doubling the scale doubles the scale-linear term") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Latent u = rnd(seed, 0), b = rnd(seed, 1), e1 = rnd(seed, 2), e2 = rnd(seed, 3);
        const std::vector<Latent> items{e1, e2};
        const double lam = 1.7;
        const Latent f1 = isolated_attach_combine(u, b, items, lam);
        const Latent f2 = isolated_attach_combine(u, b, items, 2 * lam);
        // f(2l) - f(l) = l (b - u + sum (e_i - b))
        const Latent lin = affine({{lam, &b}, {-lam, &u}, {lam, &e1}, {lam, &e2}, {-2 * lam, &b}});
        check_close(affine({{1, &f2}, {-1, &f1}}), lin, 1e-5);

        const Latent g1 = no_base_combine(u, items, lam), g2 = no_base_combine(u, items, 2 * lam);
        const Latent lin2 = affine({{lam, &e1}, {lam, &e2}, {-2 * lam, &u}});
        check_close(affine({{1, &g2}, {-1, &g1}}), lin2, 1e-5);
    }
}

TEST_CASE("attachment weights scale individual terms") {
    const Latent u = rnd(5, 0), b = rnd(5, 1), e1 = rnd(5, 2), e2 = rnd(5, 3);
    const std::vector<Latent> items{e1, e2};
    const std::vector<double> w{1.0, 1.0};
    CHECK(isolated_attach_combine(u, b, items, 2.0, w).bitwise_equal(isolated_attach_combine(u, b, items, 2.0)));
    const std::vector<double> w2{0.5, 2.0};
    const Latent got = isolated_attach_combine(u, b, items, 2.0, w2);
    check_close(got, affine({{-1, &u}, {2, &b}, {1, &e1}, {-1, &b}, {4, &e2}, {-4, &b}}), 1e-5);
    CHECK_THROWS_AS(isolated_attach_combine(u, b, items, 2.0, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("guidance mode parsing and validation") {
    CHECK(parse_guidance_kind("isolated-attach") == GuidanceKind::isolated_attach);
    CHECK(parse_guidance_kind("no-base") == GuidanceKind::no_base);
    CHECK(to_string(GuidanceKind::composable) == "composable");
    CHECK_THROWS_AS(parse_guidance_kind("magic"), ValidationError);
    CHECK(GuidanceMode{}.scale == 5.0);
    CHECK_THROWS_AS((GuidanceMode{GuidanceKind::cfg, std::nan(""), {}}.validate(0)), ValidationError);
    CHECK_THROWS_AS((GuidanceMode{GuidanceKind::isolated_attach, 1.0, {1.0}}.validate(2)), ValidationError);
    CHECK_NOTHROW((GuidanceMode{GuidanceKind::isolated_attach, 1.0, {1.0, 2.0}}.validate(2)));
}
