#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fsps/graph.hpp"
#include "oracles.hpp"

using fsps::graph::Mat;
using fsps::graph::NodeId;
using fsps::graph::Tape;

namespace {

Mat mat2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

}  // namespace

TEST_CASE("elementwise and matmul values") {
  Tape t;
  NodeId x = t.leaf(mat2(1, 2, 3, 4));
  NodeId y = t.leaf(mat2(5, 6, 7, 8));
  CHECK(t.val(t.add(x, y))(0, 0) == 6.0);
  CHECK(t.val(t.sub(x, y))(1, 1) == -4.0);
  CHECK(t.val(t.mul(x, y))(0, 1) == 12.0);
  Mat mm = t.val(t.matmul(x, y));
  CHECK(mm(0, 0) == doctest::Approx(19.0));
  CHECK(mm(1, 1) == doctest::Approx(50.0));
  CHECK_THROWS_AS(t.add(x, t.leaf(Mat::Zero(1, 3))), fsps::ShapeError);
  CHECK_THROWS_AS(t.matmul(x, t.leaf(Mat::Zero(3, 2))), fsps::ShapeError);
}

TEST_CASE("first-order gradients match finite differences") {
  Mat x0 = mat2(0.5, -0.2, 0.7, 1.3);

  Tape t;
  NodeId x = t.leaf(x0);
  NodeId w = t.constant(mat2(0.3, -0.8, 1.1, 0.4));
  NodeId h = t.tanh(t.matmul(x, w));
  NodeId s = t.mul(h, t.exp(t.scale(x, 0.1)));
  NodeId out = t.sum_all(t.mul(s, s));
  Mat analytic = t.val(t.grad(out, {x})[0]);

  auto f = [&](const Mat& xv) {
    Tape u;
    NodeId xx = u.leaf(xv);
    NodeId ww = u.constant(mat2(0.3, -0.8, 1.1, 0.4));
    NodeId hh = u.tanh(u.matmul(xx, ww));
    NodeId ss = u.mul(hh, u.exp(u.scale(xx, 0.1)));
    return u.val(u.sum_all(u.mul(ss, ss)))(0, 0);
  };
  Mat numeric = oracles::fd_grad(f, x0);
  CHECK(oracles::rel_err(analytic, numeric) < 1e-7);
}

TEST_CASE("log, pow, rowsum, broadcast gradients") {
  Mat x0 = mat2(0.5, 1.2, 2.0, 0.8);
  auto build = [](Tape& t, NodeId x) {
    NodeId p = t.pow(x, 1.7);
    NodeId l = t.log(t.affine(x, 1.0, 0.5));
    NodeId rs = t.row_sum(t.mul(p, l));
    NodeId b = t.broadcast_col(rs, 3);
    return t.sum_all(t.mul(b, b));
  };
  Tape t;
  NodeId x = t.leaf(x0);
  Mat analytic = t.val(t.grad(build(t, x), {x})[0]);
  auto f = [&](const Mat& xv) {
    Tape u;
    NodeId xx = u.leaf(xv);
    return u.val(build(u, xx))(0, 0);
  };
  CHECK(oracles::rel_err(analytic, oracles::fd_grad(f, x0)) < 1e-7);
}

TEST_CASE("col_sum / broadcast_row gradients") {
  Mat x0(3, 2);
  x0 << 0.5, -0.2, 0.7, 1.3, -0.4, 0.6;
  auto build = [](Tape& t, NodeId x) {
    NodeId cs = t.col_sum(t.tanh(x));       // (1,2)
    NodeId br = t.broadcast_row(cs, 3);     // (3,2)
    return t.sum_all(t.mul(br, t.exp(t.scale(x, 0.3))));
  };
  Tape t;
  NodeId x = t.leaf(x0);
  Mat analytic = t.val(t.grad(build(t, x), {x})[0]);
  auto f = [&](const Mat& xv) {
    Tape u;
    NodeId xx = u.leaf(xv);
    return u.val(build(u, xx))(0, 0);
  };
  CHECK(oracles::rel_err(analytic, oracles::fd_grad(f, x0)) < 1e-7);
}

TEST_CASE("softmax and cross-entropy closed forms") {
  Tape t;
  Mat z(1, 5);
  z << 0, 0, 0, 0, 0;
  Mat sm = t.val(fsps::graph::softmax_rows(t, t.leaf(z)));
  for (int i = 0; i < 5; ++i) CHECK(sm(0, i) == doctest::Approx(0.2));

  Mat z2(1, 2);
  z2 << std::log(2.0), 0.0;
  Mat sm2 = t.val(fsps::graph::softmax_rows(t, t.leaf(z2)));
  CHECK(sm2(0, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(sm2(0, 1) == doctest::Approx(1.0 / 3.0));

  // CE gradient equals softmax - onehot, averaged over rows.
  Mat logits(2, 3);
  logits << 0.2, -1.0, 0.7, 1.5, 0.3, -0.2;
  NodeId lg = t.leaf(logits);
  NodeId ce = fsps::graph::cross_entropy(t, lg, {2, 0});
  Mat g = t.val(t.grad(ce, {lg})[0]);
  Mat sm3 = t.val(fsps::graph::softmax_rows(t, t.constant(logits)));
  Mat expected = sm3;
  expected(0, 2) -= 1.0;
  expected(1, 0) -= 1.0;
  expected /= 2.0;
  CHECK(oracles::rel_err(g, expected) < 1e-12);
}

TEST_CASE("softmax shift invariance") {
  Tape t;
  Mat z(1, 4);
  z << 0.3, -0.7, 2.1, 0.0;
  Mat a = t.val(fsps::graph::softmax_rows(t, t.leaf(z)));
  Mat b = t.val(fsps::graph::softmax_rows(t, t.leaf(Mat(z.array() + 13.5))));
  CHECK(oracles::rel_err(a, b) < 1e-12);
}

TEST_CASE("gather and scatter are adjoint and differentiable") {
  // 2x3 -> 2x2 gather picking a few cells, one padding cell.
  auto table = std::make_shared<fsps::graph::IndexTable>();
  table->src_rows = 2;
  table->src_cols = 3;
  table->dst_rows = 2;
  table->dst_cols = 2;
  table->src = {0, 4, 5, -1};

  Mat x0(2, 3);
  x0 << 1, 2, 3, 4, 5, 6;
  Tape t;
  NodeId x = t.leaf(x0);
  NodeId g = t.gather(x, table);
  CHECK(t.val(g)(0, 0) == 1.0);
  CHECK(t.val(g)(0, 1) == 5.0);
  CHECK(t.val(g)(1, 0) == 6.0);
  CHECK(t.val(g)(1, 1) == 0.0);

  NodeId loss = t.sum_all(t.mul(g, g));
  Mat analytic = t.val(t.grad(loss, {x})[0]);
  auto f = [&](const Mat& xv) {
    Tape u;
    NodeId gg = u.gather(u.leaf(xv), table);
    return u.val(u.sum_all(u.mul(gg, gg)))(0, 0);
  };
  CHECK(oracles::rel_err(analytic, oracles::fd_grad(f, x0)) < 1e-7);
}

TEST_CASE("second-order: closed-form quadratic meta-gradient") {
  // Inner step theta_hat = theta - beta * dL/dtheta with L = 0.5*(theta-t)^2.
  // Outer Q = 0.5*(theta_hat - q)^2 gives dQ/dtheta = (theta_hat - q)(1-beta).
  const double beta = 0.3, tv = 2.0, qv = -1.0, th0 = 0.5;
  Tape t;
  NodeId theta = t.leaf(Mat::Constant(1, 1, th0));
  NodeId tgt = t.constant(Mat::Constant(1, 1, tv));
  NodeId inner = t.scale(t.sum_all(t.mul(t.sub(theta, tgt), t.sub(theta, tgt))), 0.5);
  NodeId gin = t.grad(inner, {theta})[0];
  NodeId theta_hat = t.sub(theta, t.scale(gin, beta));
  NodeId qtgt = t.constant(Mat::Constant(1, 1, qv));
  NodeId outer = t.scale(t.sum_all(t.mul(t.sub(theta_hat, qtgt), t.sub(theta_hat, qtgt))), 0.5);
  Mat meta = t.val(t.grad(outer, {theta})[0]);

  const double th_hat = th0 - beta * (th0 - tv);
  const double expected = (th_hat - qv) * (1.0 - beta);
  CHECK(meta(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("second-order: nonlinear inner step vs finite differences") {
  // theta_hat = theta - beta * d/dtheta [sum(tanh(theta x)^2)], outer loss is
  // a different nonlinear functional of theta_hat.
  Mat x0 = mat2(0.4, -0.3, 0.9, 0.2);
  Mat th0 = mat2(0.7, 0.1, -0.5, 1.2);
  const double beta = 0.25;

  auto outer_of = [&](const Mat& thv, Tape& t, bool& built) -> double {
    NodeId th = t.leaf(thv);
    NodeId xx = t.constant(x0);
    NodeId h = t.tanh(t.matmul(th, xx));
    NodeId inner = t.sum_all(t.mul(h, h));
    NodeId gin = t.grad(inner, {th})[0];
    NodeId th_hat = t.sub(th, t.scale(gin, beta));
    NodeId out = t.sum_all(t.exp(t.scale(th_hat, 0.5)));
    built = true;
    (void)out;
    return t.val(out)(0, 0);
  };

  Tape t;
  NodeId th = t.leaf(th0);
  NodeId xx = t.constant(x0);
  NodeId h = t.tanh(t.matmul(th, xx));
  NodeId inner = t.sum_all(t.mul(h, h));
  NodeId gin = t.grad(inner, {th})[0];
  NodeId th_hat = t.sub(th, t.scale(gin, beta));
  NodeId out = t.sum_all(t.exp(t.scale(th_hat, 0.5)));
  Mat analytic = t.val(t.grad(out, {th})[0]);

  auto f = [&](const Mat& thv) {
    Tape u;
    bool built = false;
    return outer_of(thv, u, built);
  };
  Mat numeric = oracles::fd_grad(f, th0, 1e-5);
  CHECK(oracles::rel_err(analytic, numeric) < 1e-6);

  // The severed first-order gradient must differ from the exact one here.
  Tape s;
  NodeId th2 = s.leaf(th0);
  NodeId xx2 = s.constant(x0);
  NodeId h2 = s.tanh(s.matmul(th2, xx2));
  NodeId inner2 = s.sum_all(s.mul(h2, h2));
  NodeId gin2 = s.grad(inner2, {th2}, /*create_graph=*/false)[0];
  NodeId th_hat2 = s.sub(th2, s.scale(gin2, beta));
  NodeId out2 = s.sum_all(s.exp(s.scale(th_hat2, 0.5)));
  Mat severed = s.val(s.grad(out2, {th2})[0]);
  CHECK(oracles::rel_err(severed, analytic) > 1e-3);
}

TEST_CASE("stop_grad severs and zero-gradient results are zero") {
  Tape t;
  NodeId x = t.leaf(mat2(1, 2, 3, 4));
  NodeId y = t.stop_grad(x);
  NodeId loss = t.sum_all(t.mul(y, y));
  Mat g = t.val(t.grad(loss, {x})[0]);
  CHECK(g.norm() == 0.0);

  // Unrelated wrt target gets zeros of its own shape.
  NodeId z = t.leaf(Mat::Ones(3, 1));
  NodeId loss2 = t.sum_all(x);
  Mat gz = t.val(t.grad(loss2, {z})[0]);
  CHECK(gz.rows() == 3);
  CHECK(gz.norm() == 0.0);
}

TEST_CASE("normalize_rows yields unit rows") {
  Tape t;
  Mat x(2, 3);
  x << 3, 4, 0, 0, 0, 2;
  Mat n = t.val(fsps::graph::normalize_rows(t, t.leaf(x)));
  CHECK(n.row(0).norm() == doctest::Approx(1.0));
  CHECK(n(0, 0) == doctest::Approx(0.6));
  CHECK(n(1, 2) == doctest::Approx(1.0));
}

TEST_CASE("relu gradient masks negatives") {
  Tape t;
  Mat x0 = mat2(1.5, -2.0, 0.5, -0.1);
  NodeId x = t.leaf(x0);
  NodeId loss = t.sum_all(t.relu(x));
  Mat g = t.val(t.grad(loss, {x})[0]);
  CHECK(g(0, 0) == 1.0);
  CHECK(g(0, 1) == 0.0);
  CHECK(g(1, 0) == 1.0);
  CHECK(g(1, 1) == 0.0);
}

TEST_CASE("accuracy helper") {
  Mat logits(3, 2);
  logits << 0.9, 0.1, 0.2, 0.8, 0.6, 0.4;
  CHECK(fsps::graph::accuracy(logits, {0, 1, 1}) == doctest::Approx(2.0 / 3.0));
}
