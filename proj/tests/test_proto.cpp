#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dapn/proto.hpp"
#include "gradcheck.hpp"

using namespace dapn;
using namespace dapn::proto;
using ad::Mat;
using ad::Var;

namespace {

Mat randn(int r, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = d(rng);
    return m;
}

}  // namespace

TEST_SUITE("proto") {

TEST_CASE("prototype of a single vector is that vector") {
    Mat s(1, 3);
    s << 1.0, -2.0, 0.5;
    Var p = compute_prototypes(ad::constant(s), {0}, 1);
    CHECK(p.value() == s);
}

TEST_CASE("prototype is the arithmetic mean") {
    Mat s(2, 2);
    s << 0.0, 0.0, 2.0, 4.0;
    Var p = compute_prototypes(ad::constant(s), {0, 0}, 1);
    CHECK(p.value()(0, 0) == doctest::Approx(1.0));
    CHECK(p.value()(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("prototypes ignore support ordering") {
    Mat s = randn(6, 4, 1);
    std::vector<int> slots{0, 1, 2, 0, 1, 2};
    Mat a = compute_prototypes(ad::constant(s), slots, 3).value();
    Mat s2(6, 4);
    std::vector<int> slots2{2, 0, 1, 1, 0, 2};
    s2.row(0) = s.row(2);
    s2.row(1) = s.row(0);
    s2.row(2) = s.row(1);
    s2.row(3) = s.row(4);
    s2.row(4) = s.row(3);
    s2.row(5) = s.row(5);
    Mat b = compute_prototypes(ad::constant(s2), slots2, 3).value();
    CHECK((a - b).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("duplicating every support sample leaves prototypes unchanged") {
    Mat s = randn(4, 3, 2);
    std::vector<int> slots{0, 0, 1, 1};
    Mat once = compute_prototypes(ad::constant(s), slots, 2).value();
    Mat doubled(8, 3);
    doubled << s, s;
    std::vector<int> slots2{0, 0, 1, 1, 0, 0, 1, 1};
    Mat twice = compute_prototypes(ad::constant(doubled), slots2, 2).value();
    CHECK((once - twice).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("empty class group is rejected") {
    Mat s = randn(2, 3, 3);
    CHECK_THROWS_AS(compute_prototypes(ad::constant(s), {0, 0}, 2), ValidationError);
}

TEST_CASE("equidistant sample splits mass evenly") {
    Mat protos(2, 2);
    protos << 1.0, 0.0, -1.0, 0.0;
    Mat x(1, 2);
    x << 0.0, 0.7;
    Mat g = class_distribution(x, protos, DistMode::kSqEuclidean);
    CHECK(g(0, 0) == doctest::Approx(0.5));
    CHECK(g(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("query at a prototype with others far: softmax oracle") {
    // squared distances (0, 21, 21): p0 = 1 / (1 + 2 e^-21)
    Mat protos(3, 1);
    protos << 0.0, std::sqrt(21.0), -std::sqrt(21.0);
    Mat x(1, 1);
    x << 0.0;
    Mat g = class_distribution(x, protos, DistMode::kSqEuclidean);
    const double oracle = 1.0 / (1.0 + 2.0 * std::exp(-21.0));
    CHECK(g(0, 0) == doctest::Approx(oracle).epsilon(1e-14));
    CHECK(g(0, 0) >= 1.0 - 3e-9);
    CHECK(g.row(0).sum() == doctest::Approx(1.0));
}

TEST_CASE("distribution is invariant to constant distance shifts") {
    Eigen::VectorXd d(4);
    d << 0.3, 5.0, 2.2, 7.7;
    Eigen::VectorXd a = class_distribution_from_dists(d);
    Eigen::VectorXd b = class_distribution_from_dists((d.array() + 123.5).matrix());
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a.sum() == doctest::Approx(1.0));
}

TEST_CASE("non-finite distances raise a numeric error") {
    Eigen::VectorXd d(2);
    d << 1.0, std::nan("");
    CHECK_THROWS_AS(class_distribution_from_dists(d), NumericError);
}

TEST_CASE("perfect predictor drives the loss to zero") {
    // query sits on its prototype; the others are at squared distance 40
    Mat support(3, 2);
    support << 0.0, 0.0, std::sqrt(40.0), 0.0, 0.0, std::sqrt(40.0);
    std::vector<int> slots{0, 1, 2};
    Var protos = compute_prototypes(ad::constant(support), slots, 3);
    Mat q(1, 2);
    q << 0.0, 0.0;
    Var loss = proto_loss(ad::constant(q), {0}, protos, DistMode::kSqEuclidean);
    CHECK(ad::scalar(loss) <= 1e-9);
}

TEST_CASE("all-equidistant prototypes give loss log(way)") {
    const int way = 5;
    Mat support = Mat::Identity(way, way) * 3.0;
    std::vector<int> slots{0, 1, 2, 3, 4};
    Var protos = compute_prototypes(ad::constant(support), slots, way);
    Mat q = Mat::Zero(4, way);  // origin is equidistant from all prototypes
    Var loss = proto_loss(ad::constant(q), {0, 1, 2, 3}, protos, DistMode::kSqEuclidean);
    CHECK(ad::scalar(loss) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("loss is invariant to query ordering") {
    Mat support = randn(6, 4, 5);
    std::vector<int> sslots{0, 0, 1, 1, 2, 2};
    Var protos = compute_prototypes(ad::constant(support), sslots, 3);
    Mat q = randn(5, 4, 6);
    std::vector<int> qs{0, 2, 1, 1, 0};
    double a = ad::scalar(proto_loss(ad::constant(q), qs, protos, DistMode::kSqEuclidean));
    Mat q2(5, 4);
    std::vector<int> qs2{0, 1, 1, 2, 0};
    q2.row(0) = q.row(4);
    q2.row(1) = q.row(2);
    q2.row(2) = q.row(3);
    q2.row(3) = q.row(1);
    q2.row(4) = q.row(0);
    double b = ad::scalar(proto_loss(ad::constant(q2), qs2, protos, DistMode::kSqEuclidean));
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("query label outside the support classes is rejected") {
    Mat support = randn(2, 3, 7);
    Var protos = compute_prototypes(ad::constant(support), {0, 1}, 2);
    Mat q = randn(1, 3, 8);
    CHECK_THROWS_AS(proto_loss(ad::constant(q), {2}, protos, DistMode::kSqEuclidean), ValidationError);
}

TEST_CASE("loss gradients match finite differences on random 3-way 2-shot episodes") {
    for (std::uint64_t seed : {11ULL, 12ULL}) {
        Var support = ad::param(randn(6, 4, seed));
        Var query = ad::param(randn(9, 4, seed + 50));
        std::vector<int> sslots{0, 0, 1, 1, 2, 2};
        std::vector<int> qslots{0, 1, 2, 0, 1, 2, 0, 1, 2};
        for (auto mode : {DistMode::kSqEuclidean, DistMode::kEuclidean}) {
            auto build = [&] {
                Var protos = compute_prototypes(support, sslots, 3);
                return proto_loss(query, qslots, protos, mode);
            };
            auto r = testing::fd_gradcheck(build, {support, query});
            CHECK(r.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("scaling embeddings never changes the nearest prototype") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> su(0.1, 10.0);
    for (int t = 0; t < 50; ++t) {
        Mat protos = randn(4, 3, 100 + static_cast<std::uint64_t>(t));
        Mat x = randn(1, 3, 200 + static_cast<std::uint64_t>(t));
        const double s = su(rng);
        Eigen::RowVectorXd r0 = x.row(0);
        Eigen::RowVectorXd r1 = (x.row(0) * s).eval();
        Mat ps = protos * s;
        CHECK(nearest_prototype(r0, protos, DistMode::kSqEuclidean) ==
              nearest_prototype(r1, ps, DistMode::kSqEuclidean));
    }
}

TEST_CASE("evaluation: copies of the support classify perfectly") {
    Mat support = randn(4, 5, 31);
    std::vector<int> slots{0, 1, 2, 3};
    double acc = episode_accuracy(support, slots, 4, support, slots, DistMode::kSqEuclidean);
    CHECK(acc == doctest::Approx(1.0));
}

TEST_CASE("evaluation: a single misplaced query scores zero") {
    Mat support(2, 1);
    support << 0.0, 10.0;
    Mat q(1, 1);
    q << 9.0;  // closer to prototype 1 but labelled 0
    CHECK(episode_accuracy(support, {0, 1}, 2, q, {0}, DistMode::kSqEuclidean) == doctest::Approx(0.0));
}

TEST_CASE("ties resolve to the lowest class index") {
    Mat protos(2, 2);
    protos << 1.0, 0.0, -1.0, 0.0;
    Eigen::RowVectorXd x(2);
    x << 0.0, 0.0;
    CHECK(nearest_prototype(x, protos, DistMode::kSqEuclidean) == 0);
}

TEST_CASE("random embeddings sit at chance level over 2000 episodes") {
    std::mt19937_64 rng(777);
    std::normal_distribution<double> d(0.0, 1.0);
    const int way = 5, shot = 1, q = 15, dim = 16;
    double sum = 0.0;
    for (int e = 0; e < 2000; ++e) {
        Mat support(way * shot, dim), query(way * q, dim);
        for (Eigen::Index i = 0; i < support.rows(); ++i)
            for (int j = 0; j < dim; ++j) support(i, j) = d(rng);
        for (Eigen::Index i = 0; i < query.rows(); ++i)
            for (int j = 0; j < dim; ++j) query(i, j) = d(rng);
        std::vector<int> sslots(static_cast<size_t>(way * shot));
        std::vector<int> qslots(static_cast<size_t>(way * q));
        for (int i = 0; i < way * shot; ++i) sslots[static_cast<size_t>(i)] = i / shot;
        for (int i = 0; i < way * q; ++i) qslots[static_cast<size_t>(i)] = i / q;
        sum += episode_accuracy(support, sslots, way, query, qslots, DistMode::kSqEuclidean);
    }
    const double mean = sum / 2000.0;
    CHECK(mean == doctest::Approx(0.20).epsilon(0.10));  // 0.20 +- 0.02
    CHECK(std::abs(mean - 0.20) <= 0.02);
}

}  // TEST_SUITE
