#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>

#include "fsilab/accel.hpp"

using namespace fsilab;
using namespace fsilab::accel;

namespace {

struct Lcg {
  std::uint64_t state;
  explicit Lcg(std::uint64_t seed) : state(seed) {}
  double uniform() {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return 2.0 * (static_cast<double>(state >> 11) / 9007199254740992.0) - 1.0;
  }
};

Vector unit(std::size_t m, std::size_t i) {
  Vector e(m);
  e[i] = 1.0;
  return e;
}

// Affine map with prescribed eigenvalues, conjugated by a Householder
// reflection so the test matrix is not diagonal.
Matrix conjugated_diagonal(const std::vector<double>& eigs, Lcg& rng) {
  const std::size_t m = eigs.size();
  Vector u(m);
  for (std::size_t i = 0; i < m; ++i) u[i] = rng.uniform();
  u *= 1.0 / u.norm2();
  Matrix a(m, m);
  // A = (I - 2uu^T) D (I - 2uu^T)
  for (std::size_t j = 0; j < m; ++j) {
    Vector col(m);
    col[j] = 1.0;
    double proj = dot(u, col);
    for (std::size_t i = 0; i < m; ++i) col[i] -= 2.0 * proj * u[i];
    for (std::size_t i = 0; i < m; ++i) col[i] *= eigs[i];
    proj = dot(u, col);
    for (std::size_t i = 0; i < m; ++i) col[i] -= 2.0 * proj * u[i];
    a.set_column(j, col);
  }
  return a;
}

}  // namespace

TEST_CASE("residual and relax follow their definitions") {
  CHECK(residual(Vector{1.0, 2.0}, Vector{1.0, 1.0}) == Vector{0.0, 1.0});
  CHECK(residual(Vector{2.0}, Vector{2.0}) == Vector{0.0});
  CHECK(residual(Vector{2.0}, Vector{0.0}) == Vector{2.0});
  CHECK_THROWS_AS(residual(Vector{1.0}, Vector{1.0, 2.0}), DimensionError);

  CHECK(relax(Vector{3.0, -1.0}, Vector{0.0, 0.0}, 1.0) == Vector{3.0, -1.0});
  CHECK(relax(Vector{2.0}, Vector{0.0}, 0.5) == Vector{1.0});
  const Vector blended = relax(Vector{4.0, 0.0}, Vector{0.0, 4.0}, 0.25);
  CHECK(blended[0] == doctest::Approx(1.0));
  CHECK(blended[1] == doctest::Approx(3.0));
  CHECK_THROWS_AS(relax(Vector{1.0}, Vector{0.0}, 0.0), ParameterError);
  CHECK_THROWS_AS(relax(Vector{1.0}, Vector{0.0}, 1.5), ParameterError);
}

TEST_CASE("aitken_step first call keeps omega, later calls follow the formula") {
  AitkenState state{0.5, 1e-4, 1.0, std::nullopt};
  state = aitken_step(state, Vector{1.0});
  CHECK(state.omega == doctest::Approx(0.5));

  // scalar case: raw omega = -0.5 * (1 * (0.5 - 1)) / (0.5 - 1)^2 = 1.0
  state = aitken_step(state, Vector{0.5});
  CHECK(state.omega == doctest::Approx(1.0));

  CHECK_THROWS_AS(aitken_step(state, Vector{0.5}), DegenerateResidual);
}

TEST_CASE("aitken_step clamps to its bounds") {
  AitkenState state{0.5, 1e-4, 0.8, std::nullopt};
  state = aitken_step(state, Vector{1.0});
  state = aitken_step(state, Vector{0.5});  // raw 1.0 clamps to 0.8
  CHECK(state.omega == doctest::Approx(0.8));

  AitkenState neg{0.5, 1e-4, 1.0, std::nullopt};
  neg = aitken_step(neg, Vector{1.0});
  neg = aitken_step(neg, Vector{2.0});  // raw -0.5 clamps to 1e-4
  CHECK(neg.omega == doctest::Approx(1e-4));
}

TEST_CASE("push_pair differencing matches the newest-first layout") {
  PairHistory h;
  h = push_pair(h, FixedPointSnapshot{Vector{1.0}, Vector{1.0}, 1});
  CHECK(h.columns() == 0);

  h = push_pair(h, FixedPointSnapshot{Vector{1.25}, Vector{0.75}, 2});
  REQUIRE(h.columns() == 1);
  CHECK(h.v()(0, 0) == doctest::Approx(-0.25));
  CHECK(h.w()(0, 0) == doctest::Approx(0.25));

  h = push_pair(h, FixedPointSnapshot{Vector{2.0}, Vector{0.1}, 3});
  REQUIRE(h.columns() == 2);
  // newest difference sits in column 0
  CHECK(h.v()(0, 0) == doctest::Approx(0.1 - 0.75));
  CHECK(h.v()(0, 1) == doctest::Approx(-0.25));
  CHECK(h.w()(0, 0) == doctest::Approx(0.75));

  CHECK_THROWS_AS(push_pair(h, FixedPointSnapshot{Vector{2.0}, Vector{0.0}, 7}), SequenceError);
}

TEST_CASE("filter_columns keeps full-rank sets and drops duplicates") {
  SUBCASE("orthonormal columns survive") {
    const Matrix v = Matrix::from_columns({unit(3, 0), unit(3, 1)});
    const FilteredPair f = filter_columns(v, v, 1e-8);
    CHECK(f.dropped.empty());
    CHECK(f.v.cols() == 2);
  }
  SUBCASE("the second of two identical columns is dropped") {
    const Vector c{1.0, 2.0, 3.0};
    const FilteredPair f = filter_columns(Matrix::from_columns({c, c}),
                                          Matrix::from_columns({c, c}), 1e-8);
    REQUIRE(f.dropped.size() == 1);
    CHECK(f.dropped[0] == 1);
  }
  SUBCASE("a nearly dependent column falls below the threshold") {
    Vector almost = unit(3, 0);
    almost[1] = 1e-12;
    const FilteredPair f = filter_columns(Matrix::from_columns({unit(3, 0), almost}),
                                          Matrix::from_columns({unit(3, 0), almost}), 1e-8);
    CHECK(f.dropped.size() == 1);
  }
  SUBCASE("all-zero data leaves nothing") {
    CHECK_THROWS_AS(filter_columns(Matrix(3, 2), Matrix(3, 2), 1e-8), AllColumnsFiltered);
  }
}

TEST_CASE("ils_update reproduces the hand-iterated affine case") {
  // x_tilde = 0.5 x + 1, started at x = 0, relaxed once with omega = 0.5
  PairHistory h;
  h.push(FixedPointSnapshot{Vector{1.0}, Vector{1.0}, 1});
  h.push(FixedPointSnapshot{Vector{1.25}, Vector{0.75}, 2});
  const Vector next = ils_update(h, Vector{1.25}, Vector{0.75}, 1e-8);
  CHECK(next[0] == doctest::Approx(2.0).epsilon(1e-13));  // exact fixed point
}

TEST_CASE("ils_update keeps a converged state and solves one-column systems") {
  PairHistory h;
  h.push(FixedPointSnapshot{Vector{1.0, 0.0}, Vector{1.0, 1.0}, 1});
  h.push(FixedPointSnapshot{Vector{1.5, 0.5}, Vector{0.5, 0.5}, 2});

  const Vector zero(2);
  const Vector kept = ils_update(h, Vector{1.5, 0.5}, zero, 1e-8);
  CHECK(kept == Vector{1.5, 0.5});

  // V = [c], R = -c, W = [w]  ->  alpha = 1, output x_tilde + w
  PairHistory single;
  single.push(FixedPointSnapshot{Vector{0.0, 0.0}, Vector{1.0, 2.0}, 1});
  single.push(FixedPointSnapshot{Vector{3.0, 1.0}, Vector{2.0, 4.0}, 2});
  // V column = (1, 2), W column = (3, 1); residual = -(1, 2)
  const Vector out = ils_update(single, Vector{3.0, 1.0}, Vector{-1.0, -2.0}, 1e-8);
  CHECK(out[0] == doctest::Approx(6.0));
  CHECK(out[1] == doctest::Approx(2.0));
}

TEST_CASE("ils_update refuses an empty history") {
  PairHistory h;
  CHECK_THROWS_AS(ils_update(h, Vector{1.0}, Vector{1.0}, 1e-8), ParameterError);
}

TEST_CASE("mvj_apply projects block-wise") {
  MultiVectorJacobian jac(8);
  CHECK(mvj_apply(jac, unit(3, 0), 1e-8) == Vector(3));

  jac.append(Matrix::from_columns({unit(3, 0)}), Matrix::from_columns({2.0 * unit(3, 0)}));
  CHECK(mvj_apply(jac, unit(3, 0), 1e-8)[0] == doctest::Approx(2.0));
  CHECK(mvj_apply(jac, unit(3, 1), 1e-8).norm2() == doctest::Approx(0.0));
}

TEST_CASE("imvls_update reduces to the documented special cases") {
  SUBCASE("empty jacobian matches ils_update exactly") {
    Lcg rng(0xabc1ULL);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t m = 4;
      PairHistory h;
      Vector x(m), xt(m);
      for (std::size_t i = 0; i < m; ++i) {
        x[i] = rng.uniform();
        xt[i] = rng.uniform();
      }
      h.push(FixedPointSnapshot::from_iterate(xt, x, 1));
      for (int k = 2; k <= 3; ++k) {
        for (std::size_t i = 0; i < m; ++i) {
          x[i] = rng.uniform();
          xt[i] = rng.uniform();
        }
        h.push(FixedPointSnapshot::from_iterate(xt, x, k));
      }
      const Vector res = residual(xt, x);
      const Vector a = ils_update(h, xt, res, 1e-8);
      const Vector b = imvls_update(MultiVectorJacobian(8), h, xt, res, 1e-8);
      CHECK((a - b).norm2() <= 1e-12 * std::max(a.norm2(), 1.0));
    }
  }
  SUBCASE("empty jacobian and empty history keep a converged state") {
    const MultiVectorJacobian jac(8);
    PairHistory h;
    CHECK(imvls_update(jac, h, Vector{2.0, 3.0}, Vector(2), 1e-8) == Vector{2.0, 3.0});
  }
  SUBCASE("a single projecting block applies the newton correction") {
    MultiVectorJacobian jac(8);
    jac.append(Matrix::from_columns({unit(2, 0)}), Matrix::from_columns({-1.0 * unit(2, 0)}));
    PairHistory h;
    const Vector out = imvls_update(jac, h, unit(2, 0), unit(2, 0), 1e-8);
    CHECK(out[0] == doctest::Approx(2.0));  // e1 - (-e1)
    CHECK(out[1] == doctest::Approx(0.0));
  }
}

TEST_CASE("imvls_finalize_timestep appends and evicts blocks") {
  MultiVectorJacobian jac(1);
  PairHistory empty;
  jac = imvls_finalize_timestep(jac, empty, Matrix(0, 0));
  CHECK(jac.empty());

  PairHistory h;
  h.push(FixedPointSnapshot{Vector{0.0}, Vector{1.0}, 1});
  h.push(FixedPointSnapshot{Vector{2.0}, Vector{0.5}, 2});
  jac = imvls_finalize_timestep(jac, h, Matrix(1, 1));
  REQUIRE(jac.blocks().size() == 1);
  CHECK(jac.blocks()[0].v(0, 0) == doctest::Approx(-0.5));
  CHECK(jac.blocks()[0].w_tilde(0, 0) == doctest::Approx(2.0));

  PairHistory h2;
  h2.push(FixedPointSnapshot{Vector{0.0}, Vector{2.0}, 1});
  h2.push(FixedPointSnapshot{Vector{1.0}, Vector{1.0}, 2});
  Matrix jv(1, 1);
  jv(0, 0) = mvj_apply(jac, Vector{-1.0}, 1e-8)[0];
  jac = imvls_finalize_timestep(jac, h2, jv);
  REQUIRE(jac.blocks().size() == 1);  // max_blocks = 1 keeps only the newest
  CHECK(jac.blocks()[0].v(0, 0) == doctest::Approx(-1.0));

  CHECK_THROWS_AS(imvls_finalize_timestep(jac, h2, Matrix(1, 3)), DimensionError);
}

TEST_CASE("ils-driven iteration solves affine maps within m + 2 iterations") {
  Lcg rng(0xfee1ULL);
  for (std::size_t m : {2u, 5u, 8u}) {
    std::vector<double> eigs(m);
    for (std::size_t i = 0; i < m; ++i) {
      double lambda = 0.3 + 1.5 * (static_cast<double>(i) / m);
      if (lambda > 0.8 && lambda < 1.2) lambda = lambda < 1.0 ? 0.8 : 1.2;  // keep I - A well conditioned
      eigs[i] = lambda;
    }
    const Matrix a = conjugated_diagonal(eigs, rng);
    Vector b(m);
    for (std::size_t i = 0; i < m; ++i) b[i] = 0.2 * rng.uniform();

    IlsUpdate update(0.1, 1e-8);
    update.begin_step();
    Vector x(m);
    double res_norm = 1.0;
    int used = 0;
    for (int k = 1; k <= static_cast<int>(m) + 2; ++k) {
      const Vector xt = a.apply(x) + b;
      res_norm = residual(xt, x).norm2();
      used = k;
      if (res_norm <= 1e-12) break;
      x = update.apply(xt, x, k);
    }
    CAPTURE(m);
    CAPTURE(used);
    CHECK(res_norm <= 1e-12);
  }
}

TEST_CASE("duplicating a column changes the ils step only at filtering level") {
  Lcg rng(0xd0d0ULL);
  const std::size_t m = 5;
  std::vector<Vector> vcols, wcols;
  for (int j = 0; j < 3; ++j) {
    Vector v(m), w(m);
    for (std::size_t i = 0; i < m; ++i) {
      v[i] = rng.uniform();
      w[i] = rng.uniform();
    }
    vcols.push_back(v);
    wcols.push_back(w);
  }
  Vector xt(m), res(m);
  for (std::size_t i = 0; i < m; ++i) {
    xt[i] = rng.uniform();
    res[i] = rng.uniform();
  }

  const Vector base =
      detail::ils_step(Matrix::from_columns(vcols), Matrix::from_columns(wcols), xt, res, 1e-8).next;

  auto vdup = vcols;
  auto wdup = wcols;
  vdup.insert(vdup.begin() + 1, vcols[0]);
  wdup.insert(wdup.begin() + 1, wcols[0]);
  const Vector dup =
      detail::ils_step(Matrix::from_columns(vdup), Matrix::from_columns(wdup), xt, res, 1e-8).next;

  CHECK((base - dup).norm2() <= 1e-10 * std::max(base.norm2(), 1.0));
}

TEST_CASE("aitken recovers a scalar affine fixed point right after the secant kicks in") {
  const double a = -0.5;
  const double b = 3.0;
  const double x_star = b / (1.0 - a);

  AitkenUpdate update(0.4, 1e-4, 1.0);
  update.begin_step();
  Vector x{0.0};
  int iterations_after_first = -1;
  for (int k = 1; k <= 5; ++k) {
    const Vector xt{a * x[0] + b};
    if (std::abs(xt[0] - x_star) <= 1e-12 && std::abs(xt[0] - x[0]) <= 1e-12) break;
    x = update.apply(xt, x, k);
    if (k >= 2 && std::abs(x[0] - x_star) <= 1e-12 && iterations_after_first < 0) {
      iterations_after_first = k - 1;
    }
  }
  REQUIRE(iterations_after_first > 0);
  CHECK(iterations_after_first <= 3);
}

TEST_CASE("all strategies leave a zero residual invariant") {
  const Vector xt{1.5, -2.0};
  const Vector x = xt;

  RelaxUpdate relax_u(0.5);
  CHECK(relax_u.apply(xt, x, 1) == xt);

  AitkenUpdate aitken_u(0.5, 1e-4, 1.0);
  aitken_u.begin_step();
  CHECK(aitken_u.apply(xt, x, 1) == xt);

  IlsUpdate ils_u(0.5, 1e-8);
  ils_u.begin_step();
  // seed one genuine pair, then feed the converged state
  Vector x0{0.0, 0.0};
  Vector xt0{1.0, -1.0};
  ils_u.apply(xt0, x0, 1);
  CHECK(ils_u.apply(xt, x, 2) == xt);

  ImvlsUpdate imvls_u(0.5, 1e-8, 8);
  imvls_u.begin_step();
  imvls_u.apply(xt0, x0, 1);
  CHECK(imvls_u.apply(xt, x, 2) == xt);
}

TEST_CASE("imvls strategy carries its jacobian across steps and matches ils on step one") {
  Lcg rng(0xcafeULL);
  const std::size_t m = 3;
  std::vector<double> eigs{0.4, 0.7, 1.2};
  const Matrix a = conjugated_diagonal(eigs, rng);
  Vector b(m);
  for (std::size_t i = 0; i < m; ++i) b[i] = rng.uniform();

  IlsUpdate ils_u(0.1, 1e-8);
  ImvlsUpdate imvls_u(0.1, 1e-8, 8);
  ils_u.begin_step();
  imvls_u.begin_step();

  Vector xa(m), xb(m);
  for (int k = 1; k <= 5; ++k) {
    const Vector xta = a.apply(xa) + b;
    const Vector xtb = a.apply(xb) + b;
    const Vector next_a = ils_u.apply(xta, xa, k);
    const Vector next_b = imvls_u.apply(xtb, xb, k);
    CHECK((next_a - next_b).norm2() <= 1e-12 * std::max(next_a.norm2(), 1.0));
    xa = next_a;
    xb = next_b;
  }
  imvls_u.end_step();
  CHECK_FALSE(imvls_u.jacobian().empty());
}
