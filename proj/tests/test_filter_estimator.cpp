#include "cipflow/filter_estimator.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace cipflow;

namespace
{
	constexpr Real pi = std::numbers::pi;

	MeshPtr square(int n) { return std::make_shared<const Mesh>(generate_unit_square_mesh(n)); }

	Real sine(const Vec2 &x) { return std::sin(pi * x.x()) * std::sin(pi * x.y()); }

	FeFunction random_field(MeshPtr m, unsigned seed)
	{
		std::mt19937 g(seed);
		std::uniform_real_distribution<Real> U(-1, 1);
		Vector c(m->n_vertices());
		for (auto &v : c)
			v = U(g);
		return FeFunction(m, c);
	}

	Real l2(const FeFunction &u) { return std::sqrt(quadratic_form(assemble_mass(*u.mesh), u.coefficients)); }

	ProblemSetup rotating(MeshPtr m, Real gamma = 0.05)
	{
		ProblemSetup s;
		s.mesh = m;
		s.mu = 1e-3;
		s.field = fields::multiscale(1e-3);
		s.u0 = [](const Vec2 &x) { return std::exp(-10 * (x - Vec2(0.3, 0)).squaredNorm()); };
		s.T = 0.2;
		s.gamma = gamma;
		return s;
	}

	TimeSteppingOptions steps(Real tau)
	{
		TimeSteppingOptions o;
		o.tau = tau;
		return o;
	}

	MeshPtr disc(int r) { return std::make_shared<const Mesh>(generate_polygonal_disc_mesh(6, r)); }
} // namespace

TEST(Filter, ZeroInZeroOut)
{
	const auto m = square(4);
	const FeFunction t = helmholtz_filter(FeFunction::zero(m, false), {});
	EXPECT_EQ(t.coefficients.norm(), 0);
	const auto n = filtered_norm(t, FeFunction::zero(m, false), {});
	EXPECT_EQ(n.norm_h, 0);
	EXPECT_EQ(n.identity_residual, 0);
}

TEST(Filter, SineEigenfunctionDamping)
{
	const auto m = square(64);
	const FilterConfig cfg{0.01};
	const FeFunction e = l2_project(m, sine, true);
	const FeFunction t = helmholtz_filter(e, cfg);
	int center = 0;
	for (int v = 0; v < m->n_vertices(); ++v)
		if ((m->vertex(v) - Vec2(0.5, 0.5)).norm() < (m->vertex(center) - Vec2(0.5, 0.5)).norm())
			center = v;
	const Real expected = 1 / (1 + 2 * pi * pi * cfg.h_frak);
	EXPECT_NEAR(t.coefficients[center] / e.coefficients[center] / expected, 1, 0.01);
	const FeFunction exact_filtered(m, expected * e.coefficients);
	const auto n = filtered_norm(t, e, cfg);
	EXPECT_LE(n.identity_residual, 1e-10);
	EXPECT_LT(l2(FeFunction(m, t.coefficients - exact_filtered.coefficients)), 0.01 * l2(t));
}

TEST(Filter, ConsistencyAsParameterShrinks)
{
	const auto m = square(16);
	const FeFunction e = l2_project(m, [](const Vec2 &x) { return x.x() * x.y() * (1 - x.x()); }, true);
	Real previous = std::numeric_limits<Real>::infinity();
	for (Real h_frak : {1e-1, 1e-2, 1e-3})
	{
		const FeFunction t = helmholtz_filter(e, {h_frak});
		const Real gap = l2(FeFunction(m, t.coefficients - e.coefficients));
		EXPECT_LT(gap, previous);
		previous = gap;
	}
}

TEST(Filter, NormIdentityAndContraction)
{
	const auto m = disc(3);
	const FilterConfig cfg{0.01};
	for (unsigned s = 0; s < 20; ++s)
	{
		const FeFunction e = random_field(m, s);
		const FeFunction t = helmholtz_filter(e, cfg);
		const auto n = filtered_norm(t, e, cfg);
		EXPECT_LE(n.identity_residual, 1e-10);
		EXPECT_LE(l2(t), l2(e));
		EXPECT_LE(n.norm_h, l2(e) * (1 + 1e-12));
	}
}

TEST(Filter, Linearity)
{
	const auto m = disc(3);
	const FilterConfig cfg{0.02};
	const FeFunction a = random_field(m, 1), b = random_field(m, 2);
	const FeFunction lhs = helmholtz_filter(FeFunction(m, 2 * a.coefficients - 3 * b.coefficients), cfg);
	const Vector rhs = 2 * helmholtz_filter(a, cfg).coefficients - 3 * helmholtz_filter(b, cfg).coefficients;
	EXPECT_LT((lhs.coefficients - rhs).norm(), 1e-10 * rhs.norm());
}

TEST(Filter, NormNonIncreasingInParameter)
{
	const auto m = disc(3);
	const FeFunction e = random_field(m, 5);
	Real previous = std::numeric_limits<Real>::infinity();
	for (Real h_frak : {1e-3, 1e-2, 1e-1, 1.0})
	{
		const FilterConfig cfg{h_frak};
		const Real n = filtered_norm(helmholtz_filter(e, cfg), e, cfg).norm_h;
		EXPECT_LE(n, previous * (1 + 1e-10));
		previous = n;
	}
}

TEST(Filter, RejectsNonPositiveParameter)
{
	EXPECT_THROW(helmholtz_filter(FeFunction::zero(square(2)), {0}), InvalidArgument);
}

TEST(Estimator, ScalesAsInverseSquareRootOfFilterParameter)
{
	const ProblemSetup s = rotating(disc(3));
	const auto traj = run_forward(s, steps(0.02));
	const ErrorReport a = a_posteriori_estimate(traj, s, {0.01});
	const ErrorReport b = a_posteriori_estimate(traj, s, {0.04});
	EXPECT_DOUBLE_EQ(a.total_estimate / b.total_estimate, 2);
	EXPECT_EQ(a.terms, b.terms);
}

TEST(Estimator, PrefactorAndTotal)
{
	const ProblemSetup s = rotating(disc(3));
	const auto traj = run_forward(s, steps(0.02));
	for (auto reading : {TauFReading::literal, TauFReading::max, TauFReading::tilde})
	{
		const ErrorReport r = a_posteriori_estimate(traj, s, {0.01}, reading);
		for (Real t : r.terms)
			EXPECT_GE(t, 0);
		EXPECT_EQ(r.terms[1], 0);
		const Real c_t = std::isinf(r.tau_F) ? 1 : std::exp(r.T / r.tau_F);
		EXPECT_NEAR(r.prefactor, c_t * std::sqrt(r.h / r.h_frak), 1e-12 * r.prefactor);
		EXPECT_NEAR(r.total_estimate, r.prefactor * r.term_sum(), 1e-12 * r.total_estimate);
		EXPECT_EQ(r.tau_F, flow_timescale(s, reading));
	}
}

TEST(Estimator, StabilizationTermVanishesWithoutPenalty)
{
	for (auto method : {Method::cip, Method::galerkin})
	{
		ProblemSetup s = rotating(disc(2), method == Method::cip ? 0 : 0.05);
		s.method = method;
		const ErrorReport r = a_posteriori_estimate(run_forward(s, steps(0.05)), s, {});
		EXPECT_EQ(r.terms[3], 0);
		EXPECT_GT(r.terms[0], 0);
	}
}

TEST(Estimator, ConvectiveTermVanishesForAffineStateAndConstantField)
{
	const auto m = square(4);
	ProblemSetup s;
	s.mesh = m;
	s.mu = 1e-2;
	s.field = fields::coarse_only("const", {[](const Vec2 &, Real) { return Vec2(1, 0.5); }, {}});
	s.T = 1;
	const FeFunction u(m, l2_project(m, [](const Vec2 &x) { return 1 + 2 * x.x() - x.y(); }).coefficients);
	TrajectoryRecord traj;
	traj.tau = 0.5;
	for (int n = 0; n < 3; ++n)
	{
		traj.times.push_back(0.5 * n);
		traj.snapshots.push_back(u);
		traj.snapshot_levels.push_back(n);
	}
	EXPECT_THROW(a_posteriori_estimate(traj, s, {}), InvalidArgument);
	traj.s_h.assign(3, 0);
	const ErrorReport r = a_posteriori_estimate(traj, s, {});
	EXPECT_LT(r.terms[0], 1e-12);
	EXPECT_LT(r.terms[2], 1e-12);
	EXPECT_EQ(r.terms[1], 0);
}

TEST(Estimator, ZeroTrajectory)
{
	ProblemSetup s = rotating(disc(2));
	s.u0 = {};
	const ErrorReport r = a_posteriori_estimate(run_forward(s, steps(0.05)), s, {});
	for (Real t : r.terms)
		EXPECT_EQ(t, 0);
	EXPECT_EQ(r.total_estimate, 0);
}

TEST(Estimator, DataOscillationTerms)
{
	ProblemSetup s = rotating(disc(2));
	s.f = [](const Vec2 &x, Real) { return std::sin(5 * x.x()); };
	const ErrorReport r = a_posteriori_estimate(run_forward(s, steps(0.05)), s, {});
	EXPECT_GT(r.terms[4], 0);
	EXPECT_GT(r.terms[5], 0);
}

TEST(Estimator, RejectsStridedTrajectory)
{
	const ProblemSetup s = rotating(disc(2));
	TimeSteppingOptions o = steps(0.05);
	o.snapshot_stride = 2;
	EXPECT_THROW(a_posteriori_estimate(run_forward(s, o), s, {}), InvalidArgument);
}

TEST(Estimator, ReportSerialization)
{
	const ProblemSetup s = rotating(disc(2));
	ErrorReport r = a_posteriori_estimate(run_forward(s, steps(0.05)), s, {});
	attach_measurement(r, 0.5 * r.total_estimate);
	const std::string header = ErrorReport::csv_header(), row = r.to_csv_row();
	EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
	for (const char *name : ErrorReport::term_names)
	{
		EXPECT_NE(header.find(name), std::string::npos);
		EXPECT_NE(r.to_key_value().find(name), std::string::npos);
	}
}

TEST(Effectivity, Definition)
{
	ErrorReport r;
	r.total_estimate = 0.25;
	auto e = effectivity(r, 0.25);
	EXPECT_EQ(e.value, 1);
	EXPECT_FALSE(e.undefined);
	e = effectivity(r, 0);
	EXPECT_TRUE(std::isinf(e.value));
	EXPECT_TRUE(e.undefined);
	attach_measurement(r, 0.125);
	EXPECT_EQ(*r.effectivity, 2);
	EXPECT_EQ(*r.measured_filtered_error, 0.125);
}

TEST(MeasuredError, InjectedReferenceGivesZero)
{
	MeshHierarchy h = MeshHierarchy::disc(6);
	const FeFunction coarse = l2_project(h.level(1), [](const Vec2 &x) { return std::cos(x.x()) * x.y(); }, true);
	const FeFunction reference(h.level(3), h.prolongate(coarse.coefficients, 1, 3));
	const auto r = measure_filtered_error(coarse, reference, h, {});
	EXPECT_EQ(r.norm_h, 0);
}

TEST(MeasuredError, FilterIsNonExpansive)
{
	MeshHierarchy h = MeshHierarchy::unit_square(4);
	const FeFunction coarse = l2_project(h.level(0), sine, true);
	const FeFunction reference = l2_project(h.level(2), sine, true);
	const auto r = measure_filtered_error(coarse, reference, h, {0.01});
	EXPECT_GT(r.norm_h, 0);
	EXPECT_LE(l2(r.e_tilde), l2(r.e));
	EXPECT_LE(r.identity_residual, 1e-10);
}

TEST(MeasuredError, RejectsForeignMeshes)
{
	MeshHierarchy h = MeshHierarchy::unit_square(4);
	const FeFunction foreign = l2_project(square(3), sine, true);
	const FeFunction fine = l2_project(h.level(1), sine, true);
	EXPECT_THROW(measure_filtered_error(foreign, fine, h, {}), InvalidArgument);
	EXPECT_THROW(measure_filtered_error(fine, l2_project(h.level(0), sine, true), h, {}), InvalidArgument);
}

TEST(Representation, DiscreteDualityZeroDatum)
{
	const ProblemSetup s = rotating(disc(2));
	const FeFunction zero = FeFunction::zero(s.mesh);
	const auto c = discrete_duality_check(s, steps(0.05), PsiSource::custom, {}, &zero);
	EXPECT_EQ(c.lhs, 0);
	EXPECT_EQ(c.rhs, 0);
	EXPECT_EQ(c.rel_gap, 0);
	EXPECT_THROW(discrete_duality_check(s, steps(0.05), PsiSource::custom, {}), InvalidArgument);
}

TEST(Representation, HeatGapShrinksWithDualRefinement)
{
	MeshHierarchy h = MeshHierarchy::unit_square(2);
	ProblemSetup s;
	s.mesh = h.level(0);
	s.mu = 0.05;
	s.field = fields::zero();
	s.gamma = 0;
	s.method = Method::galerkin;
	s.u0 = [](const Vec2 &x) { return sine(x) + 0.5 * std::sin(3 * pi * x.x()) * std::sin(2 * pi * x.y()); };
	s.T = 0.1;
	std::vector<Real> gaps;
	for (int dual_level : {1, 2, 3})
		gaps.push_back(
			run_error_representation(s, h, 0.01, 1, dual_level, 4, PsiSource::filtered_error, {0.01}).check.rel_gap);
	EXPECT_LT(gaps[1], gaps[0]);
	EXPECT_LT(gaps[2], gaps[1]);
	EXPECT_LT(run_error_representation(s, h, 0.01, 1, 4, 4, PsiSource::filtered_error, {0.01}).check.rel_gap, 1e-10);
}

TEST(Representation, MismatchedTimeGridsRejected)
{
	MeshHierarchy h = MeshHierarchy::disc(6);
	ProblemSetup s = rotating(h.level(1));
	const auto coarse = run_forward(s, steps(0.05));
	s.mesh = h.level(2);
	const auto reference = run_forward(s, steps(0.025));
	const FeFunction psi = FeFunction::zero(h.level(2));
	const auto dual = run_dual(s, psi, steps(0.025));
	EXPECT_THROW(error_representation_check(coarse, reference, dual, psi, s, h), InvalidArgument);
}

TEST(TauFReading, Names)
{
	for (auto r : {TauFReading::literal, TauFReading::max, TauFReading::tilde})
		EXPECT_EQ(parse_tau_f_reading(to_string(r)), r);
	EXPECT_THROW(parse_tau_f_reading("min"), InvalidArgument);
}
