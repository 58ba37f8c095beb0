#include <cmath>
#include <limits>

#include "doctest.h"
#include "protots/errors.hpp"
#include "protots/tensor.hpp"
#include "test_support.hpp"

using namespace protots;
using protots::testing::grad_check;
using protots::testing::random_tensor;
using protots::testing::weighted_sum;

namespace {

void check_values(const Tensor& t, std::initializer_list<double> expected, double tol = 1e-12) {
    REQUIRE(t.size() == expected.size());
    std::size_t i = 0;
    for (double e : expected) {
        CHECK(t.data()[i] == doctest::Approx(e).epsilon(tol));
        ++i;
    }
}

constexpr double kGradTol = 1e-4;

}  // namespace

TEST_CASE("matmul examples") {
    Tape tape;
    auto id = Tensor::matrix({{1, 0}, {0, 1}});
    auto m = Tensor::matrix({{1, 2}, {3, 4}});
    auto out = tape.matmul(id, m);
    CHECK(out.shape() == Shape{2, 2});
    check_values(out, {1, 2, 3, 4});

    auto proj = tape.matmul(Tensor::matrix({{1, 0}, {0, 0}}), Tensor::matrix({{5}, {7}}));
    CHECK(proj.shape() == Shape{2, 1});
    check_values(proj, {5, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    try {
        tape.matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("and [2x3]") != std::string::npos);
    }
}

TEST_CASE("softmax_neg examples") {
    Tape tape;
    check_values(tape.softmax_neg(Tensor::vector({0, 0})), {0.5, 0.5});
    check_values(tape.softmax_neg(Tensor::vector({0, std::log(3.0)})), {0.75, 0.25});
    check_values(tape.softmax_neg(Tensor::vector({5, 5, 5, 5})), {0.25, 0.25, 0.25, 0.25});
}

TEST_CASE("softmax_neg is a probability vector and shift invariant") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        Tape tape(Tape::Mode::kInference);
        auto d = random_tensor({7}, rng, false, 50.0);
        auto p = tape.softmax_neg(d);
        double total = 0.0;
        for (double v : p.data()) {
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
        std::vector<double> shifted(d.data().begin(), d.data().end());
        for (auto& v : shifted) v += 123.0;
        auto q = tape.softmax_neg(Tensor::vector(shifted));
        for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(p.data()[i] - q.data()[i]) < 1e-12);
    }
}

TEST_CASE("softmax_neg survives huge distances") {
    Tape tape;
    auto p = tape.softmax_neg(Tensor::vector({1e6, 1e6 + 1.0, 0.0}));
    check_values(p, {0.0, 0.0, 1.0});
}

TEST_CASE("gather_rows examples and gradient scatter") {
    auto table = Tensor::matrix({{1, 2}, {3, 4}}, true);
    Tape tape;
    check_values(tape.gather_row(table, 1), {3, 4});
    check_values(tape.gather_row(table, 0), {1, 2});

    Tape t2;
    auto row = t2.gather_row(table, 1);
    t2.backward(t2.sum(row));
    REQUIRE(table.has_grad());
    check_values(Tensor::vector({table.grad().begin(), table.grad().end()}), {0, 0, 1, 1});
}

TEST_CASE("gather_rows accumulates repeated indices") {
    auto table = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}, true);
    Tape tape;
    const std::size_t idx[] = {2, 0, 2};
    auto rows = tape.gather_rows(table, idx);
    CHECK(rows.shape() == Shape{3, 2});
    check_values(rows, {5, 6, 1, 2, 5, 6});
    tape.backward(tape.sum(rows));
    check_values(Tensor::vector({table.grad().begin(), table.grad().end()}), {1, 1, 0, 0, 2, 2});
}

TEST_CASE("gather out of vocabulary is rejected") {
    auto table = Tensor::matrix({{1, 2}, {3, 4}});
    Tape tape;
    CHECK_THROWS_AS(tape.gather_row(table, 2), ContractError);
    const std::size_t idx[] = {0, 5};
    CHECK_THROWS_AS(tape.gather_rows(table, idx), ContractError);
}

TEST_CASE("backward examples") {
    SUBCASE("sum gives unit gradient") {
        auto x = Tensor::vector({1, 2, 3}, true);
        Tape tape;
        tape.backward(tape.sum(x));
        check_values(Tensor::vector({x.grad().begin(), x.grad().end()}), {1, 1, 1});
    }
    SUBCASE("L1 of x against itself has zero subgradient") {
        auto x = Tensor::vector({1, -2, 3}, true);
        Tape tape;
        tape.backward(tape.l1(x, x));
        check_values(Tensor::vector({x.grad().begin(), x.grad().end()}), {0, 0, 0});
    }
    SUBCASE("fan-out accumulates") {
        auto x = Tensor::vector({1, -2, 3}, true);
        Tape tape;
        auto loss = tape.sum(tape.add(tape.mul(x, x), x));
        tape.backward(loss);
        check_values(Tensor::vector({x.grad().begin(), x.grad().end()}), {3, -3, 7});
    }
}

TEST_CASE("backward contract errors") {
    auto x = Tensor::vector({1, 2}, true);
    SUBCASE("non-scalar loss") {
        Tape tape;
        auto y = tape.scale(x, 2.0);
        CHECK_THROWS_AS(tape.backward(y), ContractError);
    }
    SUBCASE("second backward on a consumed tape") {
        Tape tape;
        auto loss = tape.sum(x);
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), ContractError);
    }
    SUBCASE("loss from another tape") {
        Tape a, b;
        auto loss = a.sum(x);
        b.sum(x);
        CHECK_THROWS_AS(b.backward(loss), ContractError);
    }
    SUBCASE("loss without gradient") {
        Tape tape;
        auto loss = tape.sum(Tensor::vector({1, 2}));
        CHECK_THROWS_AS(tape.backward(loss), ContractError);
    }
}

TEST_CASE("inference tape records nothing") {
    auto x = Tensor::vector({1, 2}, true);
    Tape tape(Tape::Mode::kInference);
    auto y = tape.sum(tape.mul(x, x));
    CHECK(tape.size() == 0);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.item() == 5.0);
}

TEST_CASE("non-finite results are rejected") {
    Tape tape;
    auto x = Tensor::vector({1e308});
    CHECK_THROWS_AS(tape.scale(x, 10.0), NumericError);
}

TEST_CASE("tensor construction invariants") {
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
    auto t = Tensor::vector({1, 2}, true);
    auto c = t.clone();
    c.mutable_data()[0] = 9;
    CHECK(t.at(0) == 1.0);
    t.mutable_grad()[0] = 3.0;
    CHECK(t.grad().size() == t.size());
}

TEST_CASE("structural ops") {
    Tape tape;
    auto m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    check_values(tape.transpose(m), {1, 4, 2, 5, 3, 6});
    CHECK(tape.transpose(m).shape() == Shape{3, 2});
    check_values(tape.row(m, 1), {4, 5, 6});
    CHECK(tape.select(m, 4).item() == 5.0);
    check_values(tape.vstack(m, Tensor::matrix({{7, 8, 9}})), {1, 2, 3, 4, 5, 6, 7, 8, 9});
    check_values(tape.concat({Tensor::vector({1}), Tensor::vector({2, 3})}), {1, 2, 3});
    check_values(tape.stack_rows({Tensor::vector({1, 2}), Tensor::vector({3, 4})}), {1, 2, 3, 4});
    check_values(tape.cyclic_slice(Tensor::vector({1, 2, 3, 4}), 2, 6), {3, 4, 1, 2, 3, 4});
    check_values(tape.add_row_bias(m, Tensor::vector({10, 20, 30})), {11, 22, 33, 14, 25, 36});
    check_values(tape.scale_by(Tensor::vector({2}), Tensor::vector({1, -1})), {2, -2});
    check_values(tape.relu(Tensor::vector({-1, 0, 2})), {0, 0, 2});
    check_values(tape.sq_distances(Tensor::vector({0, 0}), Tensor::matrix({{1, 1}, {3, 4}})), {2, 25});
    CHECK(tape.neg_entropy(Tensor::vector({0.5, 0.5})).item() == doctest::Approx(std::log(0.5)));
    CHECK(tape.neg_entropy(Tensor::vector({1.0, 0.0})).item() == 0.0);
    CHECK(tape.sq_error(Tensor::vector({1, 2}), Tensor::vector({0, 0})).item() == 5.0);
    CHECK(tape.l1(Tensor::vector({1, -2}), Tensor::vector({0, 0})).item() == 3.0);
}

TEST_CASE("finite-difference gradients of every primitive") {
    std::mt19937_64 rng(2024);
    auto check = [&](const char* name, const std::vector<Tensor>& inputs, const std::function<Tensor(Tape&)>& f) {
        auto r = grad_check(inputs, f);
        INFO(name << " worst " << r.worst << " skipped " << r.skipped);
        CHECK(r.checked > 0);
        CHECK(r.max_rel_error < kGradTol);
    };

    for (int trial = 0; trial < 5; ++trial) {
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({4, 2}, rng);
        auto w32 = random_tensor({3, 2}, rng, false);
        check("matmul", {a, b}, [&](Tape& t) { return weighted_sum(t, t.matmul(a, b), w32); });

        auto c = random_tensor({3, 4}, rng);
        auto w34 = random_tensor({3, 4}, rng, false);
        check("add", {a, c}, [&](Tape& t) { return weighted_sum(t, t.add(a, c), w34); });
        check("sub", {a, c}, [&](Tape& t) { return weighted_sum(t, t.sub(a, c), w34); });
        check("mul", {a, c}, [&](Tape& t) { return weighted_sum(t, t.mul(a, c), w34); });
        auto bias = random_tensor({4}, rng);
        check("add_row_bias", {a, bias}, [&](Tape& t) { return weighted_sum(t, t.add_row_bias(a, bias), w34); });
        check("scale", {a}, [&](Tape& t) { return weighted_sum(t, t.scale(a, -1.7), w34); });
        auto s = random_tensor({1}, rng);
        check("scale_by", {s, a}, [&](Tape& t) { return weighted_sum(t, t.scale_by(s, a), w34); });
        check("relu", {a}, [&](Tape& t) { return weighted_sum(t, t.relu(a), w34); });
        auto w43 = random_tensor({4, 3}, rng, false);
        check("transpose", {a}, [&](Tape& t) { return weighted_sum(t, t.transpose(a), w43); });
        auto w12 = random_tensor({12}, rng, false);
        check("reshape", {a}, [&](Tape& t) { return weighted_sum(t, t.reshape(a, {12}), w12); });
        auto w4 = random_tensor({4}, rng, false);
        check("row", {a}, [&](Tape& t) { return weighted_sum(t, t.row(a, 2), w4); });
        check("select", {a}, [&](Tape& t) { return t.scale(t.select(a, 5), 3.0); });

        auto table = random_tensor({5, 4}, rng);
        const std::size_t idx[] = {4, 1, 4};
        check("gather_rows", {table}, [&](Tape& t) { return weighted_sum(t, t.gather_rows(table, idx), w34); });
        check("gather_row", {table}, [&](Tape& t) { return weighted_sum(t, t.gather_row(table, 3), w4); });

        auto r1 = random_tensor({4}, rng);
        auto r2 = random_tensor({4}, rng);
        auto w24 = random_tensor({2, 4}, rng, false);
        check("stack_rows", {r1, r2}, [&](Tape& t) { return weighted_sum(t, t.stack_rows({r1, r2}), w24); });
        auto w8 = random_tensor({8}, rng, false);
        check("concat", {r1, r2}, [&](Tape& t) { return weighted_sum(t, t.concat({r1, r2}), w8); });
        auto top = random_tensor({1, 4}, rng);
        auto w44 = random_tensor({4, 4}, rng, false);
        check("vstack", {a, top}, [&](Tape& t) { return weighted_sum(t, t.vstack(a, top), w44); });
        auto w10 = random_tensor({10}, rng, false);
        check("cyclic_slice", {r1}, [&](Tape& t) { return weighted_sum(t, t.cyclic_slice(r1, 3, 10), w10); });

        auto d = random_tensor({5}, rng, true, 3.0);
        auto w5 = random_tensor({5}, rng, false);
        check("softmax_neg", {d}, [&](Tape& t) { return weighted_sum(t, t.softmax_neg(d), w5); });
        auto z = random_tensor({4}, rng);
        auto mus = random_tensor({5, 4}, rng);
        check("sq_distances", {z, mus}, [&](Tape& t) { return weighted_sum(t, t.sq_distances(z, mus), w5); });

        auto pred = random_tensor({6}, rng);
        auto target = random_tensor({6}, rng, false);
        for (std::size_t i = 0; i < 6; ++i) {
            // keep clear of the kink at pred == target
            if (std::abs(pred.at(i) - target.at(i)) < 1e-3) pred.mutable_data()[i] += 0.01;
        }
        check("l1", {pred}, [&](Tape& t) { return t.l1(pred, target); });
        check("sq_error", {pred}, [&](Tape& t) { return t.sq_error(pred, target); });
        check("neg_entropy", {d}, [&](Tape& t) { return t.neg_entropy(t.softmax_neg(d)); });
        check("sum", {a}, [&](Tape& t) { return t.sum(t.mul(a, a)); });
    }
}
