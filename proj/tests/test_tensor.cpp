#include <cmath>
#include <vector>

#include "doctest.h"
#include "stgcrn/rng.hpp"
#include "stgcrn/tensor.hpp"

using namespace stgcrn;

namespace {

Tensor rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::from_data(s, rng.uniform_vec(shape_numel(s), lo, hi));
}

Parameter rand_param(Shape s, Rng& rng, const std::string& name) {
    return Parameter(s, rng.uniform_vec(shape_numel(s), -1.0, 1.0), name);
}

// naive triple-loop reference, independent of the library kernel
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int64_t p, int64_t q, int64_t r) {
    std::vector<double> c(static_cast<size_t>(p * r), 0.0);
    for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < r; ++j) {
            double s = 0.0;
            for (int64_t k = 0; k < q; ++k) s += a[i * q + k] * b[k * r + j];
            c[i * r + j] = s;
        }
    return c;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity and hand-computed product") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor eye = Tensor::identity(2);
    Tensor r1 = matmul(a, eye);
    CHECK(r1.values() == std::vector<double>{1, 2, 3, 4});

    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor r2 = matmul(a, b);
    CHECK(r2.values() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul dimension error names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4, 2]") != std::string::npos);
    }
}

TEST_CASE("matmul against naive oracle on random shapes") {
    Rng rng(42);
    for (int iter = 0; iter < 20; ++iter) {
        int64_t p = rng.uniform_int(1, 6), q = rng.uniform_int(1, 6), r = rng.uniform_int(1, 6);
        Tensor a = rand_tensor({p, q}, rng);
        Tensor b = rand_tensor({q, r}, rng);
        Tensor c = matmul(a, b);
        auto expect = naive_matmul(a.values(), b.values(), p, q, r);
        for (size_t i = 0; i < expect.size(); ++i)
            CHECK(c.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul associativity exact on small integer tensors") {
    Rng rng(7);
    for (int iter = 0; iter < 10; ++iter) {
        auto rand_int_tensor = [&](Shape s) {
            std::vector<double> v(static_cast<size_t>(shape_numel(s)));
            for (auto& x : v) x = static_cast<double>(rng.uniform_int(-3, 3));
            return Tensor::from_data(s, v);
        };
        Tensor a = rand_int_tensor({3, 4});
        Tensor b = rand_int_tensor({4, 2});
        Tensor c = rand_int_tensor({2, 3});
        Tensor lhs = matmul(matmul(a, b), c);
        Tensor rhs = matmul(a, matmul(b, c));
        CHECK(lhs.values() == rhs.values());
    }
}

TEST_CASE("batched matmul equals per-slice results") {
    Rng rng(11);
    Tensor a = rand_tensor({3, 2, 4}, rng);
    Tensor b = rand_tensor({3, 4, 5}, rng);
    Tensor c = matmul(a, b);
    for (int64_t s = 0; s < 3; ++s) {
        Tensor as = Tensor::from_data({2, 4}, std::vector<double>(a.values().begin() + s * 8,
                                                                  a.values().begin() + (s + 1) * 8));
        Tensor bs = Tensor::from_data({4, 5}, std::vector<double>(b.values().begin() + s * 20,
                                                                  b.values().begin() + (s + 1) * 20));
        Tensor cs = matmul(as, bs);
        for (int64_t i = 0; i < 10; ++i) CHECK(c.values()[s * 10 + i] == cs.values()[i]);
    }

    // broadcast variants
    Tensor w = rand_tensor({4, 5}, rng);
    Tensor cb = matmul(a, w);
    for (int64_t s = 0; s < 3; ++s) {
        Tensor as = Tensor::from_data({2, 4}, std::vector<double>(a.values().begin() + s * 8,
                                                                  a.values().begin() + (s + 1) * 8));
        Tensor cs = matmul(as, w);
        for (int64_t i = 0; i < 10; ++i) CHECK(cb.values()[s * 10 + i] == cs.values()[i]);
    }
}

TEST_CASE("softmax rows: uniform, hand value, stability, row sums") {
    Tensor z = softmax_rows(Tensor::from_data({3}, {0, 0, 0}));
    for (double v : z.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Tensor s = softmax_rows(Tensor::from_data({2}, {1, 0}));
    const double e = std::exp(1.0);
    CHECK(s.values()[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
    CHECK(s.values()[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));
    CHECK(s.values()[0] == doctest::Approx(0.73106).epsilon(1e-4));

    Tensor big = softmax_rows(Tensor::from_data({2}, {1000, 0}));
    CHECK(big.values()[0] == doctest::Approx(1.0));
    CHECK(big.values()[1] == doctest::Approx(0.0));

    Rng rng(3);
    for (int iter = 0; iter < 50; ++iter) {
        Tensor x = rand_tensor({4, 7}, rng, -30, 30);
        Tensor y = softmax_rows(x);
        for (int64_t i = 0; i < 4; ++i) {
            double sum = 0;
            for (int64_t j = 0; j < 7; ++j) {
                double v = y.values()[i * 7 + j];
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("softmax shift invariance within 1e-12") {
    Rng rng(5);
    Tensor x = rand_tensor({3, 5}, rng, -2, 2);
    std::vector<double> shifted = x.values();
    for (auto& v : shifted) v += 17.25;
    Tensor y1 = softmax_rows(x);
    Tensor y2 = softmax_rows(Tensor::from_data({3, 5}, shifted));
    for (size_t i = 0; i < y1.values().size(); ++i)
        CHECK(std::fabs(y1.values()[i] - y2.values()[i]) < 1e-12);
}

TEST_CASE("elementwise activations and tag dispatch") {
    Tensor x = Tensor::from_data({3}, {0, -3, 3});
    CHECK(elementwise(Activation::Sigmoid, x).values()[0] == doctest::Approx(0.5));
    CHECK(elementwise(Activation::Tanh, x).values()[0] == doctest::Approx(0.0));
    Tensor r = elementwise(Activation::Relu, x);
    CHECK(r.values()[1] == 0.0);
    CHECK(r.values()[2] == 3.0);
    CHECK(activation_from_tag("tanh") == Activation::Tanh);
    CHECK_THROWS_AS(activation_from_tag("gelu"), ConfigError);
}

TEST_CASE("layer_norm examples") {
    Tensor gain1 = Tensor::from_data({3}, {1, 1, 1});
    Tensor bias0 = Tensor::from_data({3}, {0, 0, 0});
    Tensor c = layer_norm(Tensor::from_data({1, 3}, {5, 5, 5}), gain1, bias0, 1e-5);
    for (double v : c.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));

    Tensor g2 = Tensor::from_data({2}, {1, 1});
    Tensor b2 = Tensor::from_data({2}, {0, 0});
    Tensor y = layer_norm(Tensor::from_data({1, 2}, {1, 3}), g2, b2, 1e-12);
    CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-5));

    Tensor g0 = Tensor::from_data({2}, {0, 0});
    Tensor bb = Tensor::from_data({2}, {2.5, -1.5});
    Tensor z = layer_norm(Tensor::from_data({2, 2}, {1, 3, -4, 9}), g0, bb, 1e-5);
    CHECK(z.values() == std::vector<double>{2.5, -1.5, 2.5, -1.5});
}

TEST_CASE("backward: sum gives ones, quadratic gives 2x") {
    Parameter p({2}, {2, 3}, "p");
    backward(sum_all(p.tensor()));
    CHECK(p.grad() == std::vector<double>{1, 1});

    p.zero_grad();
    backward(sum_all(mul(p.tensor(), p.tensor())));
    CHECK(p.grad() == std::vector<double>{4, 6});
}

TEST_CASE("backward accumulates across calls; zero_grad resets") {
    Parameter p({2}, {1, 2}, "p");
    Tensor loss = sum_all(p.tensor());
    backward(loss);
    backward(loss);
    CHECK(p.grad() == std::vector<double>{2, 2});
    p.zero_grad();
    CHECK(p.grad() == std::vector<double>{0, 0});
}

TEST_CASE("backward on non-scalar root is a contract error") {
    Parameter p({2}, {1, 2}, "p");
    CHECK_THROWS_AS(backward(add(p.tensor(), p.tensor())), ContractError);
}

TEST_CASE("gradient of sum(A x) equals column sums of A") {
    Rng rng(9);
    Tensor a = rand_tensor({4, 3}, rng);
    Parameter x({3, 1}, {0.5, -1.0, 2.0}, "x");
    backward(sum_all(matmul(a, x.tensor())));
    for (int64_t j = 0; j < 3; ++j) {
        double col = 0;
        for (int64_t i = 0; i < 4; ++i) col += a.values()[i * 3 + j];
        CHECK(x.grad()[j] == doctest::Approx(col).epsilon(1e-15));
    }
}

TEST_CASE("finite_diff_check: quadratic is exact, bad step rejected") {
    Parameter p({3}, {0.4, -0.2, 1.1}, "p");
    auto loss = [&]() { return sum_all(mul(p.tensor(), p.tensor())); };
    auto report = finite_diff_check(loss, {&p}, 1e-5, 1e-4);
    CHECK(report.all_pass);
    CHECK(report.worst_rel_err < 1e-8);

    CHECK_THROWS_AS(finite_diff_check(loss, {&p}, 0.0, 1e-4), ConfigError);
}

TEST_CASE("finite_diff_check rejects non-deterministic loss") {
    Parameter p({1}, {1.0}, "p");
    int counter = 0;
    auto loss = [&]() {
        ++counter;
        return scale(sum_all(p.tensor()), static_cast<double>(counter));
    };
    CHECK_THROWS_AS(finite_diff_check(loss, {&p}, 1e-5, 1e-4), OracleError);
}

TEST_CASE("every differentiable op passes finite differences on random shapes") {
    Rng rng(1234);
    Parameter a = rand_param({3, 4}, rng, "a");
    Parameter b = rand_param({4, 2}, rng, "b");
    Parameter c = rand_param({3, 2}, rng, "c");
    Parameter g = rand_param({2}, rng, "g");
    Parameter h = rand_param({2}, rng, "h");
    Parameter batched = rand_param({2, 3, 4}, rng, "batched");

    SUBCASE("matmul + add + mul + activations") {
        auto loss = [&]() {
            Tensor y = matmul(a.tensor(), b.tensor());           // (3,2)
            y = add(y, c.tensor());
            y = mul(sigmoid(y), tanh_t(c.tensor()));
            return mean_all(y);
        };
        CHECK(finite_diff_check(loss, {&a, &b, &c}, 1e-5, 1e-4).all_pass);
    }
    SUBCASE("softmax + layer_norm + broadcast") {
        auto loss = [&]() {
            Tensor y = softmax_rows(matmul(a.tensor(), b.tensor()));
            y = layer_norm(y, g.tensor(), h.tensor(), 1e-5);
            y = add_broadcast(y, g.tensor());
            return mean_all(mul(y, y));
        };
        CHECK(finite_diff_check(loss, {&a, &b, &g, &h}, 1e-5, 1e-4).all_pass);
    }
    SUBCASE("structural ops") {
        auto loss = [&]() {
            Tensor y = concat_axis({batched.tensor(), batched.tensor()}, 2);  // (2,3,8)
            y = slice_last(y, 2, 5);                                          // (2,3,5)
            y = select_axis(y, 1, 1);                                         // (2,5)
            y = permute(reshape(y, {2, 5}), {1, 0});                          // (5,2)
            y = transpose_last2(y);                                           // (2,5)
            return mean_all(abs_t(y));
        };
        CHECK(finite_diff_check(loss, {&batched}, 1e-5, 1e-4).all_pass);
    }
    SUBCASE("rows ops") {
        std::vector<std::vector<int64_t>> idx{{2, 0}, {1, 2}};
        auto loss = [&]() {
            Tensor sel = gather_rows(batched.tensor(), idx);           // (2,2,4)
            Tensor fill = mean_rows(batched.tensor());                 // (2,1,4)
            Tensor y = compose_rows(3, idx, sel, fill);                // (2,3,4)
            return mean_all(mul(y, y));
        };
        CHECK(finite_diff_check(loss, {&batched}, 1e-5, 1e-4).all_pass);
    }
    SUBCASE("reductions and scalar ops") {
        auto loss = [&]() {
            Tensor y = affine(a.tensor(), 1.7, -0.3);
            Tensor s = sqrt_t(add(mul(y, y), Tensor::full({3, 4}, 0.01)));
            return add(scale(mean_all(s), 2.0), sum_all(relu(a.tensor())));
        };
        CHECK(finite_diff_check(loss, {&a}, 1e-5, 1e-4).all_pass);
    }
}

TEST_CASE("non-finite data is rejected") {
    std::vector<double> with_nan{1.0, std::nan("")};
    std::vector<double> with_inf{std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(Tensor::from_data({2}, with_nan), NumericError);
    CHECK_THROWS_AS(Tensor::from_data({1}, with_inf), NumericError);
}

TEST_CASE("node_mix matches explicit loops") {
    Rng rng(77);
    Tensor xg = rand_tensor({2, 3, 4}, rng);
    Tensor w = rand_tensor({3, 4, 5}, rng);
    Tensor out = node_mix(xg, w);
    for (int64_t bi = 0; bi < 2; ++bi)
        for (int64_t ni = 0; ni < 3; ++ni)
            for (int64_t ci = 0; ci < 5; ++ci) {
                double s = 0;
                for (int64_t fi = 0; fi < 4; ++fi)
                    s += xg.values()[(bi * 3 + ni) * 4 + fi] * w.values()[(ni * 4 + fi) * 5 + ci];
                CHECK(out.values()[(bi * 3 + ni) * 5 + ci] == doctest::Approx(s).epsilon(1e-12));
            }
}

TEST_CASE("values_mut on recorded intermediate is rejected") {
    Parameter p({2}, {1, 2}, "p");
    Tensor y = add(p.tensor(), p.tensor());
    CHECK_THROWS_AS(y.values_mut(), ContractError);
    Tensor d = y.detach();
    CHECK_NOTHROW(d.values_mut());
}

}  // TEST_SUITE
