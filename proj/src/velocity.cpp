#include "cipflow/velocity.hpp"

#include "cipflow/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace cipflow
{
	FieldComponent FieldComponent::zero()
	{
		return {[](const Vec2 &, Real) { return Vec2::Zero().eval(); },
				[](const Vec2 &, Real) { return Mat2::Zero().eval(); }};
	}

	VelocityField::VelocityField(std::string name, FieldComponent coarse, FieldComponent fine, bool time_dependent)
		: name_(std::move(name)), coarse_(std::move(coarse)), fine_(std::move(fine)), time_dependent_(time_dependent)
	{
		if (!coarse_.value)
			coarse_ = FieldComponent::zero();
		has_fine_ = static_cast<bool>(fine_.value);
		if (!fine_.value)
			fine_ = FieldComponent::zero();
	}

	Vec2 VelocityField::evaluate(const Vec2 &x, Real t, VelocityPart part) const
	{
		switch (part)
		{
		case VelocityPart::coarse:
			return coarse(x, t);
		case VelocityPart::fine:
			return fine(x, t);
		default:
			return (*this)(x, t);
		}
	}

	namespace
	{
		Mat2 component_jacobian(const FieldComponent &c, const Vec2 &x, Real t, Real step)
		{
			if (c.jacobian)
				return c.jacobian(x, t);
			Mat2 J;
			for (int j = 0; j < 2; ++j)
			{
				Vec2 dx = Vec2::Zero();
				dx[j] = step;
				J.col(j) = (c.value(x + dx, t) - c.value(x - dx, t)) / (2 * step);
			}
			return J;
		}
	} // namespace

	Mat2 VelocityField::jacobian(const Vec2 &x, Real t, VelocityPart part, Real fd_step) const
	{
		switch (part)
		{
		case VelocityPart::coarse:
			return component_jacobian(coarse_, x, t, fd_step);
		case VelocityPart::fine:
			return component_jacobian(fine_, x, t, fd_step);
		default:
			return component_jacobian(coarse_, x, t, fd_step) + component_jacobian(fine_, x, t, fd_step);
		}
	}

	DecomposedVelocity evaluate_decomposed(const VelocityField &field, const Vec2 &x, Real t)
	{
		DecomposedVelocity d;
		d.coarse = field.coarse(x, t);
		d.fine = field.fine(x, t);
		d.full = d.coarse + d.fine;
		return d;
	}

	namespace fields
	{
		FieldComponent rigid_rotation()
		{
			return {[](const Vec2 &x, Real) { return Vec2(-x.y(), x.x()); },
					[](const Vec2 &, Real) { return (Mat2() << 0, -1, 1, 0).finished(); }};
		}

		FieldComponent shear()
		{
			return {[](const Vec2 &x, Real) { return Vec2(x.y(), 0); },
					[](const Vec2 &, Real) { return (Mat2() << 0, 1, 0, 0).finished(); }};
		}

		FieldComponent oscillatory_fine(Real eps, Real kappa)
		{
			return {[eps, kappa](const Vec2 &x, Real) { return Vec2(eps * std::sin(kappa * x.y()), 0); },
					[eps, kappa](const Vec2 &x, Real) {
						return (Mat2() << 0, eps * kappa * std::cos(kappa * x.y()), 0, 0).finished();
					}};
		}

		FieldComponent cellular_fine(Real eps, Real kappa, Real r0, Real r1)
		{
			const Real k = 2 * std::numbers::pi * kappa;
			const Real amp = eps / std::sqrt(2.0);
			auto cutoff = [r0, r1](Real r) {
				const Real s = std::clamp((r - r0) / (r1 - r0), Real(0), Real(1));
				return 1 - s * s * s * (10 - 15 * s + 6 * s * s);
			};
			return {[=](const Vec2 &x, Real) -> Vec2 {
						return Vec2(amp * std::sin(k * x.y()), amp * std::sin(k * x.x())) * cutoff(x.norm());
					},
					{}};
		}

		VelocityField coarse_only(std::string name, FieldComponent coarse)
		{
			return VelocityField(std::move(name), std::move(coarse), {});
		}

		VelocityField composite(std::string name, FieldComponent coarse, FieldComponent fine)
		{
			return VelocityField(std::move(name), std::move(coarse), std::move(fine));
		}

		VelocityField zero() { return VelocityField("zero", FieldComponent::zero(), {}); }

		VelocityField multiscale(Real mu, Real kappa)
		{
			return composite("multiscale", rigid_rotation(), cellular_fine(std::sqrt(mu), kappa));
		}

		namespace
		{
			std::string trim(const std::string &s)
			{
				const auto b = s.find_first_not_of(" \t");
				const auto e = s.find_last_not_of(" \t");
				return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
			}

			std::vector<std::string> split_top_level(const std::string &s)
			{
				std::vector<std::string> out;
				int depth = 0;
				std::string cur;
				for (char c : s)
				{
					if (c == '(')
						++depth;
					if (c == ')')
						--depth;
					if (c == ',' && depth == 0)
					{
						out.push_back(trim(cur));
						cur.clear();
					}
					else
						cur += c;
				}
				if (!trim(cur).empty())
					out.push_back(trim(cur));
				return out;
			}

			Real parse_number(const std::string &s, Real mu)
			{
				const std::string t = trim(s);
				if (t == "sqrt_mu")
					return std::sqrt(mu);
				std::size_t used = 0;
				Real v = 0;
				try
				{
					v = std::stod(t, &used);
				}
				catch (const std::exception &)
				{
					throw InvalidArgument("field spec: bad number '" + t + "'");
				}
				if (used != t.size())
					throw InvalidArgument("field spec: bad number '" + t + "'");
				return v;
			}

			struct Call
			{
				std::string name;
				std::vector<std::string> args;
			};

			Call parse_call(const std::string &spec)
			{
				const std::string s = trim(spec);
				const auto open = s.find('(');
				if (open == std::string::npos)
					return {s, {}};
				if (s.back() != ')')
					throw InvalidArgument("field spec: unbalanced parentheses in '" + s + "'");
				return {trim(s.substr(0, open)), split_top_level(s.substr(open + 1, s.size() - open - 2))};
			}

			// Returns {component, is_fine}.
			std::pair<FieldComponent, bool> parse_component(const std::string &spec, Real mu)
			{
				const Call c = parse_call(spec);
				auto want = [&](std::size_t n) {
					if (c.args.size() != n)
						throw InvalidArgument("field spec: '" + c.name + "' expects " + std::to_string(n) + " arguments");
				};
				if (c.name == "rigid_rotation")
				{
					want(0);
					return {rigid_rotation(), false};
				}
				if (c.name == "shear")
				{
					want(0);
					return {shear(), false};
				}
				if (c.name == "zero")
				{
					want(0);
					return {FieldComponent::zero(), false};
				}
				if (c.name == "oscillatory_fine")
				{
					want(2);
					return {oscillatory_fine(parse_number(c.args[0], mu), parse_number(c.args[1], mu)), true};
				}
				if (c.name == "cellular_fine")
				{
					want(2);
					return {cellular_fine(parse_number(c.args[0], mu), parse_number(c.args[1], mu)), true};
				}
				throw InvalidArgument("field spec: unknown field '" + c.name + "'");
			}
		} // namespace

		VelocityField parse(const std::string &spec, Real mu)
		{
			const Call c = parse_call(spec);
			if (c.name == "composite")
			{
				if (c.args.size() != 2)
					throw InvalidArgument("field spec: composite expects (coarse, fine)");
				auto coarse = parse_component(c.args[0], mu);
				auto fine = parse_component(c.args[1], mu);
				if (coarse.second)
					throw InvalidArgument("field spec: first composite argument must be a coarse field");
				return composite(trim(spec), std::move(coarse.first), std::move(fine.first));
			}
			if (c.name == "multiscale")
			{
				const Real kappa = c.args.empty() ? 8 : parse_number(c.args.at(0), mu);
				return multiscale(mu, kappa);
			}
			auto comp = parse_component(spec, mu);
			if (comp.second)
				return VelocityField(trim(spec), FieldComponent::zero(), std::move(comp.first));
			return VelocityField(trim(spec), std::move(comp.first), {});
		}
	} // namespace fields

	SamplingPlan SamplingPlan::on_mesh(const Mesh &mesh, std::vector<Real> times)
	{
		SamplingPlan p;
		p.points.reserve(mesh.n_vertices() + mesh.n_triangles());
		for (int v = 0; v < mesh.n_vertices(); ++v)
			p.points.push_back(mesh.vertex(v));
		for (int t = 0; t < mesh.n_triangles(); ++t)
			p.points.push_back(mesh.centroid(t));
		p.times = std::move(times);
		if (p.times.empty())
			p.times.push_back(0);
		return p;
	}

	std::vector<Real> SamplingPlan::uniform_times(Real T, int n_samples)
	{
		if (n_samples <= 1)
			return {0};
		std::vector<Real> t(n_samples);
		for (int i = 0; i < n_samples; ++i)
			t[i] = T * i / (n_samples - 1);
		return t;
	}

	Real sampled_coarse_w1inf(const VelocityField &field, const std::vector<Vec2> &points, Real t)
	{
		Real w = 0;
		for (const auto &x : points)
		{
			w = std::max(w, field.coarse(x, t).norm());
			w = std::max(w, field.jacobian(x, t, VelocityPart::coarse).operatorNorm());
		}
		return w;
	}

	Real sampled_fine_linf(const VelocityField &field, const std::vector<Vec2> &points, Real t)
	{
		Real w = 0;
		for (const auto &x : points)
			w = std::max(w, field.fine(x, t).norm());
		return w;
	}

	Real sampled_linf(const VelocityField &field, const std::vector<Vec2> &points, Real t)
	{
		Real w = 0;
		for (const auto &x : points)
			w = std::max(w, field(x, t).norm());
		return w;
	}

	ScaleSeparationReport check_assumptions(const VelocityField &field, const Mesh &mesh, Real mu,
											 const std::vector<Real> &times, Real divergence_tolerance,
											 Real boundary_tolerance)
	{
		if (!(mu > 0))
			throw InvalidArgument("check_assumptions: mu must be positive");
		const SamplingPlan plan = SamplingPlan::on_mesh(mesh, times);
		const Real fd_step = 1e-6 * mesh.h_max();
		const auto &edge = edge_rule(3);

		ScaleSeparationReport r;
		for (Real t : plan.times)
		{
			for (const auto &x : plan.points)
				r.max_divergence = std::max(r.max_divergence, std::abs(field.jacobian(x, t, VelocityPart::full, fd_step).trace()));
			for (const auto &f : mesh.faces())
			{
				if (!f.is_boundary())
					continue;
				const Vec2 a = mesh.vertex(f.vertices[0]), b = mesh.vertex(f.vertices[1]);
				auto probe = [&](const Vec2 &x) {
					r.max_boundary_normal = std::max(r.max_boundary_normal, std::abs(field.coarse(x, t).dot(f.normal)));
				};
				probe(a);
				probe(b);
				for (int q = 0; q < edge.size(); ++q)
					probe(edge.points[q][0] * a + edge.points[q][1] * b);
			}
			r.coarse_w1inf = std::max(r.coarse_w1inf, sampled_coarse_w1inf(field, plan.points, t));
			r.fine_linf = std::max(r.fine_linf, sampled_fine_linf(field, plan.points, t));
		}
		r.fine_ratio = r.fine_linf * r.fine_linf / mu;

		std::ostringstream msg;
		if (r.max_divergence > divergence_tolerance)
		{
			msg << "divergence: max |div beta| = " << r.max_divergence;
			r.violations.push_back(msg.str());
			msg.str("");
		}
		if (r.max_boundary_normal > boundary_tolerance)
		{
			msg << "non-penetration: max |beta_bar . n| = " << r.max_boundary_normal;
			r.violations.push_back(msg.str());
			msg.str("");
		}
		if (r.fine_ratio < 0.1 || r.fine_ratio > 10)
		{
			msg << "scale separation: |beta'|^2/mu = " << r.fine_ratio << " outside [0.1, 10]";
			r.violations.push_back(msg.str());
			msg.str("");
		}
		if (field.declared_coarse_w1inf && r.coarse_w1inf > *field.declared_coarse_w1inf * (1 + 1e-9))
		{
			msg << "declared |beta_bar|_W1inf = " << *field.declared_coarse_w1inf << " exceeded by sample " << r.coarse_w1inf;
			r.violations.push_back(msg.str());
			msg.str("");
		}
		if (field.declared_fine_linf && r.fine_linf > *field.declared_fine_linf * (1 + 1e-9))
		{
			msg << "declared |beta'|_inf = " << *field.declared_fine_linf << " exceeded by sample " << r.fine_linf;
			r.violations.push_back(msg.str());
		}
		return r;
	}

	PecletNumbers compute_peclet(Real U, Real mu, Real L, Real h)
	{
		if (!(mu > 0))
			throw InvalidArgument("compute_peclet: mu must be positive");
		PecletNumbers p;
		p.U = U;
		p.Pe_L = U * L / mu;
		p.Pe_h = U * h / mu;
		p.low_mesh_peclet = p.Pe_h < 1;
		return p;
	}

	PecletNumbers compute_peclet(const VelocityField &field, const SamplingPlan &plan, Real mu, Real L, Real h)
	{
		Real U = 0;
		for (Real t : plan.times)
			U = std::max(U, sampled_linf(field, plan.points, t));
		return compute_peclet(U, mu, L, h);
	}

	FlowTimescales compute_tau_F(const VelocityField &field, Real mu, const SamplingPlan &plan)
	{
		if (!(mu > 0))
			throw InvalidArgument("compute_tau_F: mu must be positive");
		Real inv_literal = 0, inv_max = 0;
		for (Real t : plan.times)
		{
			const Real w = sampled_coarse_w1inf(field, plan.points, t);
			const Real fl = sampled_fine_linf(field, plan.points, t);
			const Real fine_term = fl * fl / mu;
			const Real inv_w = w > 0 ? 1 / w : std::numeric_limits<Real>::infinity();
			inv_literal = std::max(inv_literal, 0.5 * std::min(inv_w, fine_term));
			inv_max = std::max(inv_max, 0.5 * std::max(w, fine_term));
		}
		auto invert = [](Real inv) { return inv > 0 ? 1 / inv : infinite_time; };
		return {invert(inv_literal), invert(inv_max)};
	}

	Mat2 lambda_matrix(const VelocityField &field, const Vec2 &x, Real t, Real mu)
	{
		const Mat2 J = field.jacobian(x, t, VelocityPart::coarse);
		const Real fine2 = field.fine(x, t).squaredNorm();
		return 0.5 * (J + J.transpose()) + (-0.5 * J.trace() + 0.5 * fine2 / mu) * Mat2::Identity();
	}

	Real sigma_p(const Mat2 &lambda) { return std::max(largest_symmetric_eigenvalue(lambda), Real(0)); }

	Real compute_tilde_tau_F(const VelocityField &field, Real mu, const Mesh &mesh, const std::vector<Real> &times)
	{
		if (!(mu > 0))
			throw InvalidArgument("compute_tilde_tau_F: mu must be positive");
		Real s = 0;
		for (Real t : times.empty() ? std::vector<Real>{0} : times)
			for (int k = 0; k < mesh.n_triangles(); ++k)
				s = std::max(s, sigma_p(lambda_matrix(field, mesh.centroid(k), t, mu)));
		return s > 0 ? 2 / s : infinite_time;
	}
} // namespace cipflow
