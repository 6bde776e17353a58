#include <random>

#include "dac/autodiff.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace dac;
using ad::Mat;
using ad::Tape;
using ad::Var;
using dac::testutil::fd_check;
using dac::testutil::random_matrix;

TEST_SUITE_BEGIN("autodiff");

namespace {

// Reduces any matrix Var to a scalar with fixed random weights so output
// gradients are non-uniform.
Var reduce(Tape& t, Var v, const Mat& weights) { return t.weighted_sum_all(v, weights); }

}  // namespace

TEST_CASE("matmul add bias chain matches finite differences") {
    std::mt19937_64 rng(1);
    ad::ParameterStore store;
    int w = store.add("w", random_matrix(4, 3, rng));
    int b = store.add("b", random_matrix(1, 3, rng));
    Mat x = random_matrix(5, 4, rng);
    Mat red = random_matrix(5, 3, rng);

    auto loss = [&](bool grad) {
        Tape t;
        Var out = t.add_rowvec(t.matmul(t.constant(x), t.parameter(store, w)),
                               t.parameter(store, b));
        Var s = reduce(t, out, red);
        if (grad) t.backward(s);
        return t.scalar(s);
    };
    auto rep = fd_check(store, loss);
    CHECK(rep.checked_entries > 0);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("elementwise nonlinearities match finite differences") {
    std::mt19937_64 rng(2);
    ad::ParameterStore store;
    int a = store.add("a", random_matrix(3, 4, rng));
    Mat red = random_matrix(3, 4, rng);

    for (int which = 0; which < 4; ++which) {
        auto loss = [&](bool grad) {
            Tape t;
            Var x = t.parameter(store, a);
            Var y;
            switch (which) {
                case 0: y = t.sigmoid(x); break;
                case 1: y = t.tanh(x); break;
                case 2: y = t.exp(x); break;
                default: y = t.square(x); break;
            }
            Var s = reduce(t, y, red);
            if (grad) t.backward(s);
            return t.scalar(s);
        };
        auto rep = fd_check(store, loss);
        CHECK(rep.max_rel_error < 1e-6);
    }
}

TEST_CASE("hadamard sub scale compose") {
    std::mt19937_64 rng(3);
    ad::ParameterStore store;
    int a = store.add("a", random_matrix(3, 3, rng));
    int b = store.add("b", random_matrix(3, 3, rng));
    Mat red = random_matrix(3, 3, rng);

    auto loss = [&](bool grad) {
        Tape t;
        Var va = t.parameter(store, a);
        Var vb = t.parameter(store, b);
        Var y = t.scale(t.hadamard(t.sub(va, vb), t.add(va, vb)), 0.7);
        Var s = reduce(t, y, red);
        if (grad) t.backward(s);
        return t.scalar(s);
    };
    auto rep = fd_check(store, loss);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("gather_rows accumulates duplicate indices") {
    std::mt19937_64 rng(4);
    ad::ParameterStore store;
    int table = store.add("table", random_matrix(6, 3, rng));
    std::vector<int> idx{0, 2, 2, 5, 0, 0};
    Mat red = random_matrix(6, 3, rng);

    auto loss = [&](bool grad) {
        Tape t;
        Var rows = t.gather_rows(t.parameter(store, table), idx);
        Var s = reduce(t, rows, red);
        if (grad) t.backward(s);
        return t.scalar(s);
    };
    auto rep = fd_check(store, loss);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("segment_max pools per column and routes gradient to argmax") {
    Tape t;
    Mat a(3, 2);
    a << 1.0, -2.0, 0.0, 5.0, -1.0, 4.0;
    Var v = t.constant(a);
    Var m = t.segment_max(v, {0, 0, 1}, 2);
    CHECK(t.value(m)(0, 0) == doctest::Approx(1.0));
    CHECK(t.value(m)(0, 1) == doctest::Approx(5.0));
    CHECK(t.value(m)(1, 0) == doctest::Approx(-1.0));
    CHECK(t.value(m)(1, 1) == doctest::Approx(4.0));
    CHECK_THROWS_AS(t.segment_max(v, {0, 0, 0}, 2), std::invalid_argument);

    std::mt19937_64 rng(5);
    ad::ParameterStore store;
    int p = store.add("p", random_matrix(7, 4, rng));
    std::vector<int> seg{0, 0, 1, 1, 1, 2, 2};
    Mat red = random_matrix(3, 4, rng);
    auto loss = [&](bool grad) {
        Tape tape;
        Var rows = tape.segment_max(tape.parameter(store, p), seg, 3);
        Var s = reduce(tape, rows, red);
        if (grad) tape.backward(s);
        return tape.scalar(s);
    };
    auto rep = fd_check(store, loss);
    CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("log_softmax rows sum to one and differentiate") {
    std::mt19937_64 rng(6);
    ad::ParameterStore store;
    int a = store.add("a", random_matrix(4, 5, rng));
    Mat red = random_matrix(4, 5, rng);

    {
        Tape t;
        Var ls = t.log_softmax_rows(t.parameter(store, a));
        Mat probs = t.value(ls).array().exp().matrix();
        for (int r = 0; r < probs.rows(); ++r) {
            CHECK(probs.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    auto loss = [&](bool grad) {
        Tape t;
        Var s = reduce(t, t.log_softmax_rows(t.parameter(store, a)), red);
        if (grad) t.backward(s);
        return t.scalar(s);
    };
    auto rep = fd_check(store, loss);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("select_per_row and rowwise_dot") {
    std::mt19937_64 rng(7);
    ad::ParameterStore store;
    int a = store.add("a", random_matrix(4, 3, rng));
    int b = store.add("b", random_matrix(4, 3, rng));
    std::vector<int> cols{2, 0, 1, 2};
    Mat red = random_matrix(4, 1, rng);

    auto loss = [&](bool grad) {
        Tape t;
        Var va = t.parameter(store, a);
        Var vb = t.parameter(store, b);
        Var picked = t.select_per_row(va, cols);
        Var dot = t.rowwise_dot(va, vb);
        Var s = t.add(reduce(t, picked, red), reduce(t, dot, red));
        if (grad) t.backward(s);
        return t.scalar(s);
    };
    auto rep = fd_check(store, loss);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("concat_cols splits gradient") {
    std::mt19937_64 rng(8);
    ad::ParameterStore store;
    int a = store.add("a", random_matrix(3, 2, rng));
    int b = store.add("b", random_matrix(3, 4, rng));
    Mat red = random_matrix(3, 6, rng);

    auto loss = [&](bool grad) {
        Tape t;
        Var s = reduce(t, t.concat_cols(t.parameter(store, a), t.parameter(store, b)), red);
        if (grad) t.backward(s);
        return t.scalar(s);
    };
    auto rep = fd_check(store, loss);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("clamped_log floors and keeps slope above the floor") {
    ad::ParameterStore store;
    Mat init(1, 3);
    init << 0.5, 1e-9, 2.0;
    store.add("a", init);

    Tape t;
    Var v = t.clamped_log(t.parameter(store, 0), 1e-7);
    CHECK(t.value(v)(0, 0) == doctest::Approx(std::log(0.5)));
    CHECK(t.value(v)(0, 1) == doctest::Approx(std::log(1e-7)));
    Var s = t.sum_all(v);
    t.backward(s);
    CHECK(store.at(0).grad(0, 0) == doctest::Approx(2.0));
    CHECK(store.at(0).grad(0, 1) == doctest::Approx(0.0));  // below floor
    CHECK(store.at(0).grad(0, 2) == doctest::Approx(0.5));
}

TEST_CASE("mean_all and reuse of a node in two branches") {
    std::mt19937_64 rng(9);
    ad::ParameterStore store;
    int a = store.add("a", random_matrix(3, 3, rng));
    auto loss = [&](bool grad) {
        Tape t;
        Var va = t.parameter(store, a);
        Var z = t.hadamard(t.tanh(va), t.sigmoid(va));  // same node consumed twice
        Var s = t.add(t.mean_all(z), t.mean_all(t.square(va)));
        if (grad) t.backward(s);
        return t.scalar(s);
    };
    auto rep = fd_check(store, loss);
    CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("adam converges on a quadratic") {
    ad::ParameterStore store;
    Mat init(1, 2);
    init << 5.0, -3.0;
    int p = store.add("x", init);
    ad::AdamOptimizer opt;
    opt.learning_rate = 0.05;
    for (int i = 0; i < 2000; ++i) {
        store.zero_grad();
        Tape t;
        Var x = t.parameter(store, p);
        Var lossv = t.sum_all(t.square(x));
        t.backward(lossv);
        opt.step(store);
    }
    CHECK(store.at(p).value.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("constants do not accumulate gradients") {
    Tape t;
    Var c = t.constant(Mat::Ones(2, 2));
    Var s = t.sum_all(t.square(c));
    t.backward(s);  // must not throw
    CHECK(t.scalar(s) == doctest::Approx(4.0));
}

TEST_CASE("parameter store hashing tracks values") {
    ad::ParameterStore store;
    store.add("a", Mat::Ones(2, 2));
    auto h1 = store.value_hash();
    store.at(0).value(0, 0) = 2.0;
    auto h2 = store.value_hash();
    CHECK(h1 != h2);
    store.at(0).value(0, 0) = 1.0;
    CHECK(store.value_hash() == h1);
}

TEST_SUITE_END();
