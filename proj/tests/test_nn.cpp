#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

#include "vaf/nn.hpp"

using namespace vaf;
using namespace vaf::nn;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, unsigned seed, double scale = 1.0) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> d(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(gen);
    return m;
}

/// Straight-line evaluator written with explicit loops, independent of forward().
Matrix naive_forward(const DenseNet& net, const Matrix& x) {
    Matrix a = x;
    for (const auto& l : net.layers()) {
        Matrix z(a.rows(), l.out());
        for (Eigen::Index n = 0; n < a.rows(); ++n)
            for (int o = 0; o < l.out(); ++o) {
                double s = l.bias(o);
                for (int i = 0; i < l.in(); ++i) s += l.weight(o, i) * a(n, i);
                if (l.activation == Activation::relu) s = s > 0 ? s : 0;
                if (l.activation == Activation::tanh) s = std::tanh(s);
                z(n, o) = s;
            }
        a = z;
    }
    return a;
}

/// Central-difference gradient of f at p.
Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector p, double h = 1e-4) {
    Vector g(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double orig = p(i);
        p(i) = orig + h;
        const double up = f(p);
        p(i) = orig - h;
        const double down = f(p);
        p(i) = orig;
        g(i) = (up - down) / (2 * h);
    }
    return g;
}

double max_relative_error(const Vector& a, const Vector& b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a(i)), std::abs(b(i)), 1e-6});
        worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
    }
    return worst;
}

} // namespace

TEST(Forward, IdentityNet) {
    DenseLayer l;
    l.weight = Matrix::Identity(4, 4);
    l.bias = Vector::Zero(4);
    const DenseNet net({l});
    const Matrix x = random_matrix(5, 4, 1);
    EXPECT_EQ(forward(net, x).first, x);
}

TEST(Forward, ZeroWeightsGiveActivatedBias) {
    for (Activation a : {Activation::identity, Activation::relu, Activation::tanh}) {
        DenseLayer l;
        l.weight = Matrix::Zero(3, 2);
        l.bias = Vector(3);
        l.bias << -0.5, 0.25, 2.0;
        l.activation = a;
        const DenseNet net({l});
        const Matrix y = forward(net, random_matrix(4, 2, 2)).first;
        for (Eigen::Index r = 0; r < y.rows(); ++r)
            for (Eigen::Index c = 0; c < 3; ++c) {
                const double b = l.bias(c);
                const double expect = a == Activation::identity ? b : a == Activation::relu ? std::max(b, 0.0) : std::tanh(b);
                EXPECT_DOUBLE_EQ(y(r, c), expect);
            }
    }
}

TEST(Forward, MatchesNaiveEvaluator) {
    DenseNet net({6, 9, 3}, {Activation::tanh, Activation::identity}, 7);
    auto& layers = net.mutable_layers();
    layers[0].bias = random_matrix(9, 1, 8);
    layers[1].bias = random_matrix(3, 1, 9);
    const Matrix x = random_matrix(10, 6, 3);
    EXPECT_LT((forward(net, x).first - naive_forward(net, x)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((predict(net, x) - naive_forward(net, x)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, DimensionMismatch) {
    const DenseNet net({3, 2}, {Activation::identity}, 1);
    EXPECT_THROW(forward(net, Matrix::Zero(2, 4)), ArgumentError);
    EXPECT_THROW(DenseNet({3, 2}, {}, 1), ArgumentError);
}

TEST(Backward, LinearLeastSquaresGradient) {
    const DenseNet net({4, 2}, {Activation::identity}, 5);
    const Matrix x = random_matrix(20, 4, 11);
    const Matrix y = random_matrix(20, 2, 12);
    const auto [out, tape] = forward(net, x);
    const double n = static_cast<double>(x.rows());
    const Gradients g = backward(net, tape, 2.0 * (out - y) / n);
    // Closed form with W stored out x in: dL/dW = 2 (X W^T - Y)^T X / N.
    const Matrix& w = net.layers()[0].weight;
    const Matrix expected = 2.0 * (x * w.transpose() - y).transpose() * x / n;
    EXPECT_LT((g.weight[0] - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Backward, FiniteDifferenceCheckAllActivations) {
    const std::vector<std::vector<Activation>> configs{
        {Activation::tanh, Activation::relu, Activation::identity},
        {Activation::relu, Activation::tanh, Activation::tanh},
        {Activation::identity, Activation::identity, Activation::relu},
    };
    unsigned seed = 0;
    for (const auto& acts : configs) {
        DenseNet net({5, 7, 6, 3}, acts, ++seed);
        auto& layers = net.mutable_layers();
        for (auto& l : layers) l.bias = random_matrix(l.out(), 1, 100 + seed, 0.3);
        const Matrix x = random_matrix(8, 5, 200 + seed);
        const Matrix gout = random_matrix(8, 3, 300 + seed);
        const auto [out, tape] = forward(net, x);
        const Gradients g = backward(net, tape, gout);
        DenseNet probe = net;
        auto loss = [&](const Vector& p) {
            probe.set_parameters(p);
            return predict(probe, x).cwiseProduct(gout).sum();
        };
        EXPECT_LT(max_relative_error(g.flat(), numeric_gradient(loss, net.parameters())), 1e-4);
        auto loss_x = [&](const Vector& flat_x) {
            const Matrix xm = Eigen::Map<const Matrix>(flat_x.data(), x.rows(), x.cols());
            return predict(net, xm).cwiseProduct(gout).sum();
        };
        const Vector xv = Eigen::Map<const Vector>(x.data(), x.size());
        const Vector gx = Eigen::Map<const Vector>(g.input.data(), g.input.size());
        EXPECT_LT(max_relative_error(gx, numeric_gradient(loss_x, xv)), 1e-4);
    }
}

TEST(Backward, MseLossGradientCheck) {
    DenseNet net({3, 4, 2}, {Activation::tanh, Activation::identity}, 4);
    const Matrix x = random_matrix(6, 3, 1);
    const Matrix y = random_matrix(6, 2, 2);
    const auto [out, tape] = forward(net, x);
    const auto [loss, dout] = mse_loss(out, y);
    const Gradients g = backward(net, tape, dout);
    DenseNet probe = net;
    auto f = [&](const Vector& p) {
        probe.set_parameters(p);
        return mse_loss(predict(probe, x), y).first;
    };
    EXPECT_LT(max_relative_error(g.flat(), numeric_gradient(f, net.parameters())), 1e-4);
}

TEST(Backward, ZeroOutputGradient) {
    const DenseNet net({3, 4, 2}, {Activation::relu, Activation::tanh}, 3);
    const auto [out, tape] = forward(net, random_matrix(5, 3, 1));
    const Gradients g = backward(net, tape, Matrix::Zero(5, 2));
    EXPECT_EQ(g.flat().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, StaleTapeIsRejected) {
    DenseNet net({3, 2}, {Activation::identity}, 3);
    const auto [out, tape] = forward(net, random_matrix(5, 3, 1));
    net.set_parameters(net.parameters());
    EXPECT_THROW(backward(net, tape, Matrix::Zero(5, 2)), ContractError);
    const DenseNet other({3, 2}, {Activation::identity}, 3);
    const auto [out2, tape2] = forward(other, random_matrix(5, 3, 1));
    EXPECT_THROW(backward(net, tape2, Matrix::Zero(5, 2)), ContractError);
}

TEST(Backward, DataParallelAccumulationIsThreadIndependent) {
    const DenseNet net({6, 16, 4}, {Activation::tanh, Activation::identity}, 9);
    const Matrix x = random_matrix(70, 6, 5);
    const Matrix gout = random_matrix(70, 4, 6);
    const Vector serial = accumulate_gradients(net, x, gout, 16, 1).flat();
    for (int threads : {2, 3, 8}) EXPECT_EQ(accumulate_gradients(net, x, gout, 16, threads).flat(), serial);
    const auto [out, tape] = forward(net, x);
    EXPECT_LT((backward(net, tape, gout).flat() - serial).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Optimizer, SgdStep) {
    Optimizer opt({OptimizerKind::sgd, 0.1});
    Vector p(1);
    p << 1.0;
    Vector g(1);
    g << 2.0;
    opt.step(p, g);
    EXPECT_DOUBLE_EQ(p(0), 0.8);
}

TEST(Optimizer, AdamFirstStepIsScaleFree) {
    for (double scale : {1e-3, 1.0, 1e3}) {
        Optimizer opt({OptimizerKind::adam, 0.01});
        Vector p = Vector::Zero(3);
        const Vector g = Vector::Constant(3, scale);
        opt.step(p, g);
        for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(p(i), -0.01, 1e-6);
    }
}

TEST(Optimizer, ZeroGradientsLeaveParameters) {
    for (OptimizerKind k : {OptimizerKind::sgd, OptimizerKind::adam}) {
        Optimizer opt({k, 0.1});
        Vector p = random_matrix(4, 1, 1);
        const Vector before = p;
        opt.step(p, Vector::Zero(4));
        opt.step(p, Vector::Zero(4));
        EXPECT_EQ(p, before);
    }
}

TEST(Optimizer, NonFiniteGradientsRaise) {
    Optimizer opt;
    Vector p = Vector::Zero(2);
    Vector g(2);
    g << 1.0, std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(opt.step(p, g), NumericError);
    g << 1.0, std::numeric_limits<double>::infinity();
    EXPECT_THROW(opt.step(p, g), NumericError);
    EXPECT_THROW(opt.step(p, Vector::Zero(3)), ArgumentError);
}

TEST(Optimizer, LinearRegressionReachesClosedForm) {
    const Matrix x = random_matrix(64, 3, 21);
    Vector w_true(3);
    w_true << 0.5, -1.5, 2.0;
    const Matrix y = x * w_true + 0.1 * random_matrix(64, 1, 22) + Matrix::Constant(64, 1, 0.7);
    Matrix design(64, 4);
    design << x, Matrix::Ones(64, 1);
    const Vector closed = design.colPivHouseholderQr().solve(y);

    DenseNet net({3, 1}, {Activation::identity}, 1);
    Optimizer opt({OptimizerKind::sgd, 0.2});
    for (int step = 0; step < 3000; ++step) {
        const auto [out, tape] = forward(net, x);
        const auto [loss, dout] = mse_loss(out, y);
        opt.step(net, backward(net, tape, dout));
    }
    const auto& l = net.layers()[0];
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(l.weight(0, i), closed(i), 1e-6);
    EXPECT_NEAR(l.bias(0), closed(3), 1e-6);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Checkpoint ck;
    ck.nets.emplace_back("a", DenseNet({5, 4, 3}, {Activation::relu, Activation::tanh}, 1));
    ck.nets.emplace_back("b", DenseNet({2, 2}, {Activation::identity}, 2));
    ck.metadata = {{"tau", 0.0712345678901234}, {"seed", 3}};
    const auto path = std::filesystem::temp_directory_path() / "vaf_nn_ck.bin";
    save_checkpoint(path, ck);
    const Checkpoint back = load_checkpoint(path);
    ASSERT_EQ(back.nets.size(), 2u);
    EXPECT_EQ(back.net("a").parameters(), ck.net("a").parameters());
    EXPECT_EQ(back.net("b").parameters(), ck.net("b").parameters());
    EXPECT_EQ(back.net("a").layers()[1].activation, Activation::tanh);
    EXPECT_EQ(back.metadata, ck.metadata);
    EXPECT_THROW(back.net("c"), ArgumentError);
    const auto bytes = encode_checkpoint(ck);
    EXPECT_THROW(decode_checkpoint(std::span(bytes).first(bytes.size() - 5)), ParseError);
    EXPECT_THROW(decode_checkpoint(std::span(bytes).first(30)), ParseError);
}
