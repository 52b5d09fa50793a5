#include "cipflow/filter_estimator.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <cstdio>
#include <sstream>

namespace cipflow
{
	void FilterConfig::validate() const
	{
		if (!(h_frak > 0) || !std::isfinite(h_frak))
			throw InvalidArgument("filter: h_frak must be positive");
	}

	FeFunction helmholtz_filter(const FeFunction &e, const FilterConfig &cfg)
	{
		cfg.validate();
		if (!e.mesh || e.coefficients.size() != e.mesh->n_vertices())
			throw InvalidArgument("helmholtz_filter: function does not match its mesh");
		const Mesh &mesh = *e.mesh;
		const DofMap dofs(mesh);
		const SparseMatrix M = assemble_mass(mesh);
		const SparseMatrix K = assemble_stiffness(mesh);
		const Vector rhs = dofs.restrict(Vector(M * e.coefficients));
		if (rhs.norm() == 0)
			return FeFunction::zero(e.mesh, true);
		const SparseMatrix A = dofs.restrict(SparseMatrix(cfg.h_frak * K + M));
		const auto sol = solve_linear(A, rhs, cfg.solver);
		return FeFunction(e.mesh, dofs.extend(sol.x), true);
	}

	FilteredNorm filtered_norm(const FeFunction &e_tilde, const FeFunction &e, const FilterConfig &cfg)
	{
		cfg.validate();
		if (!e.mesh || !e_tilde.mesh || e_tilde.coefficients.size() != e.coefficients.size())
			throw InvalidArgument("filtered_norm: functions live on different meshes");
		const Mesh &mesh = *e_tilde.mesh;
		const SparseMatrix M = assemble_mass(mesh);
		const SparseMatrix K = assemble_stiffness(mesh);
		const Vector &et = e_tilde.coefficients;
		const Real sq = cfg.h_frak * quadratic_form(K, et) + quadratic_form(M, et);
		FilteredNorm r;
		r.norm_h = std::sqrt(std::max(sq, Real(0)));
		r.identity_residual = sq > 0 ? std::abs(sq - et.dot(M * e.coefficients)) / sq : 0;
		return r;
	}

	std::string to_string(TauFReading reading)
	{
		switch (reading)
		{
		case TauFReading::literal:
			return "literal";
		case TauFReading::max:
			return "max";
		default:
			return "tilde";
		}
	}

	TauFReading parse_tau_f_reading(const std::string &name)
	{
		if (name == "literal")
			return TauFReading::literal;
		if (name == "max")
			return TauFReading::max;
		if (name == "tilde")
			return TauFReading::tilde;
		throw InvalidArgument("unknown tau_F reading '" + name + "' (expected literal, max or tilde)");
	}

	Real flow_timescale(const ProblemSetup &setup, TauFReading reading, int n_time_samples)
	{
		const std::vector<Real> times = setup.field.time_dependent()
											? SamplingPlan::uniform_times(setup.T, std::max(n_time_samples, 2))
											: std::vector<Real>{0};
		if (reading == TauFReading::tilde)
			return compute_tilde_tau_F(setup.field, setup.mu, *setup.mesh, times);
		const auto ts = compute_tau_F(setup.field, setup.mu, SamplingPlan::on_mesh(*setup.mesh, times));
		return reading == TauFReading::literal ? ts.tau_F_literal : ts.tau_F_max;
	}

	Real ErrorReport::term_sum() const
	{
		Real s = 0;
		for (Real t : terms)
			s += t;
		return s;
	}

	namespace
	{
		std::string fmt(Real v)
		{
			char buf[64];
			std::snprintf(buf, sizeof buf, "%.17g", v);
			return buf;
		}

		std::string fmt(const std::optional<Real> &v) { return v ? fmt(*v) : std::string(); }
	} // namespace

	std::string ErrorReport::to_key_value() const
	{
		std::ostringstream out;
		out << "h = " << fmt(h) << '\n'
			<< "h_frak = " << fmt(h_frak) << '\n'
			<< "gamma = " << fmt(gamma) << '\n'
			<< "mu = " << fmt(mu) << '\n'
			<< "T = " << fmt(T) << '\n'
			<< "tau_F = " << fmt(tau_F) << '\n'
			<< "tau_F_reading = " << to_string(reading) << '\n';
		for (std::size_t i = 0; i < terms.size(); ++i)
			out << term_names[i] << " = " << fmt(terms[i]) << '\n';
		out << "prefactor = " << fmt(prefactor) << '\n' << "total_estimate = " << fmt(total_estimate) << '\n';
		if (measured_filtered_error)
			out << "measured_filtered_error = " << fmt(*measured_filtered_error) << '\n';
		if (effectivity)
			out << "effectivity = " << fmt(*effectivity) << '\n';
		if (effectivity_undefined)
			out << "effectivity_undefined = true\n";
		return out.str();
	}

	std::string ErrorReport::csv_header()
	{
		std::string header = "h,h_frak,gamma,mu,T,tau_F";
		for (const char *name : term_names)
			header += std::string(",") + name;
		return header + ",prefactor,total,measured,effectivity";
	}

	std::string ErrorReport::to_csv_row() const
	{
		std::string row = fmt(h) + ',' + fmt(h_frak) + ',' + fmt(gamma) + ',' + fmt(mu) + ',' + fmt(T) + ',' + fmt(tau_F);
		for (Real t : terms)
			row += ',' + fmt(t);
		row += ',' + fmt(prefactor) + ',' + fmt(total_estimate) + ',' + fmt(measured_filtered_error) + ','
			   + fmt(effectivity);
		return row;
	}

	namespace
	{
		/// Elementwise data for the L2 projection onto the full P1 space.
		class Projector
		{
		public:
			explicit Projector(const Mesh &mesh) : mesh_(mesh), rule_(triangle_rule(5))
			{
				chol_.compute(Eigen::SparseMatrix<Real>(assemble_mass(mesh)));
				if (chol_.info() != Eigen::Success)
					throw SolverError("estimator: mass factorization failed", 1);
			}

			const QuadratureRule &rule() const { return rule_; }

			/// ||g - pi_h g|| for g given at the quadrature points of every
			/// element (row t, column q).
			Real oscillation(const Eigen::MatrixXd &g) const
			{
				const auto &T = mesh_.triangles();
				Vector b = Vector::Zero(mesh_.n_vertices());
				for (int t = 0; t < mesh_.n_triangles(); ++t)
					for (int q = 0; q < rule_.size(); ++q)
					{
						const Real w = 2 * mesh_.area(t) * rule_.weights[q] * g(t, q);
						for (int i = 0; i < 3; ++i)
							b[T(t, i)] += w * rule_.points[q][i];
					}
				if (b.norm() == 0 && g.norm() == 0)
					return 0;
				const Vector x = chol_.solve(b);
				Real sum = 0;
				for (int t = 0; t < mesh_.n_triangles(); ++t)
					for (int q = 0; q < rule_.size(); ++q)
					{
						const auto &l = rule_.points[q];
						const Real p = l[0] * x[T(t, 0)] + l[1] * x[T(t, 1)] + l[2] * x[T(t, 2)];
						const Real d = g(t, q) - p;
						sum += 2 * mesh_.area(t) * rule_.weights[q] * d * d;
					}
				return std::sqrt(sum);
			}

			Eigen::MatrixXd sample(const ScalarFunction &f) const
			{
				Eigen::MatrixXd g(mesh_.n_triangles(), rule_.size());
				for (int t = 0; t < mesh_.n_triangles(); ++t)
				{
					const auto c = mesh_.corners(t);
					for (int q = 0; q < rule_.size(); ++q)
						g(t, q) = f(map_barycentric(rule_.points[q], c[0], c[1], c[2]));
				}
				return g;
			}

		private:
			const Mesh &mesh_;
			const QuadratureRule &rule_;
			Eigen::SimplicialLDLT<Eigen::SparseMatrix<Real>> chol_;
		};

		/// Laplacian of u_h on each element; piecewise affine functions have a
		/// vanishing Hessian.
		Vector element_laplacian(const FeFunction &u)
		{
			return Vector::Zero(u.mesh->n_triangles());
		}

		Real face_jump_residual(const FeFunction &u, Real mu)
		{
			const Mesh &mesh = *u.mesh;
			std::vector<Vec2> grads(mesh.n_triangles());
			for (int t = 0; t < mesh.n_triangles(); ++t)
				grads[t] = u.gradient(t);
			Real sum = 0;
			for (const auto &f : mesh.faces())
			{
				if (f.is_boundary())
					continue;
				const Real jump = mu * (grads[f.left] - grads[f.right]).dot(f.normal);
				sum += jump * jump * f.length;
			}
			return std::sqrt(sum);
		}

		Real trapezoid(const std::vector<Real> &times, const std::vector<Real> &values)
		{
			Real s = 0;
			for (std::size_t i = 1; i < times.size(); ++i)
				s += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
			return s;
		}
	} // namespace

	ErrorReport a_posteriori_estimate(const TrajectoryRecord &traj, const ProblemSetup &setup, const FilterConfig &cfg,
									  TauFReading reading)
	{
		cfg.validate();
		setup.validate();
		if (traj.snapshot_stride != 1 || traj.snapshots.size() != traj.times.size())
			throw InvalidArgument("a_posteriori_estimate: needs a trajectory recorded with snapshot stride 1");
		if (traj.snapshots.empty() || traj.snapshots.front().mesh.get() != setup.mesh.get())
			throw InvalidArgument("a_posteriori_estimate: trajectory was not computed on the setup mesh");
		if (traj.s_h.size() != traj.times.size())
			throw InvalidArgument("a_posteriori_estimate: trajectory lacks the s_h monitor");

		const Mesh &mesh = *setup.mesh;
		const Projector proj(mesh);
		const auto &rule = proj.rule();
		const int nt = mesh.n_triangles();
		const std::size_t n_levels = traj.times.size();

		ErrorReport r;
		r.h = mesh.h_max();
		r.h_frak = cfg.h_frak;
		r.gamma = setup.effective_gamma();
		r.mu = setup.mu;
		r.T = setup.T;
		r.reading = reading;
		r.tau_F = flow_timescale(setup, reading, 4 * traj.n_steps() + 1);
		const Real sqrt_h = std::sqrt(r.h);

		// Velocity of the scheme at the quadrature points.
		Eigen::MatrixXd bx(nt, rule.size()), by(nt, rule.size());
		auto sample_velocity = [&](Real t) {
			for (int k = 0; k < nt; ++k)
			{
				const auto c = mesh.corners(k);
				for (int q = 0; q < rule.size(); ++q)
				{
					const Vec2 b = setup.field.evaluate(map_barycentric(rule.points[q], c[0], c[1], c[2]), t,
														setup.advection_part());
					bx(k, q) = b.x();
					by(k, q) = b.y();
				}
			}
		};
		if (!setup.field.time_dependent())
			sample_velocity(0);

		std::vector<Real> t1(n_levels), t2(n_levels), t3(n_levels), t4(n_levels), t5(n_levels, 0);
		for (std::size_t n = 0; n < n_levels; ++n)
		{
			const FeFunction &u = traj.snapshots[n];
			const Real t = traj.times[n];
			if (setup.field.time_dependent())
				sample_velocity(t);

			Eigen::MatrixXd g(nt, rule.size());
			Eigen::MatrixXd lap(nt, rule.size());
			const Vector lap_k = element_laplacian(u);
			for (int k = 0; k < nt; ++k)
			{
				const Vec2 grad = u.gradient(k);
				for (int q = 0; q < rule.size(); ++q)
				{
					g(k, q) = bx(k, q) * grad.x() + by(k, q) * grad.y();
					lap(k, q) = setup.mu * lap_k[k];
				}
			}
			t1[n] = sqrt_h * proj.oscillation(g);
			t2[n] = sqrt_h * proj.oscillation(lap);
			t3[n] = face_jump_residual(u, setup.mu);
			t4[n] = std::sqrt(std::max(traj.s_h[n], Real(0)));
			if (setup.f)
				t5[n] = proj.oscillation(proj.sample([&](const Vec2 &x) { return setup.f(x, t); }));
		}

		r.terms[0] = trapezoid(traj.times, t1);
		r.terms[1] = trapezoid(traj.times, t2);
		r.terms[2] = trapezoid(traj.times, t3);
		r.terms[3] = trapezoid(traj.times, t4);
		r.terms[4] = sqrt_h * trapezoid(traj.times, t5);
		if (setup.u0)
		{
			const FeFunction &u_init = traj.snapshots.front();
			r.terms[5] = sqrt_h * l2_error(u_init, setup.u0);
		}

		const Real c_T = std::isinf(r.tau_F) ? 1 : std::exp(setup.T / r.tau_F);
		r.prefactor = c_T * std::sqrt(r.h / cfg.h_frak);
		r.total_estimate = r.prefactor * r.term_sum();
		return r;
	}

	EffectivityResult effectivity(const ErrorReport &report, Real measured)
	{
		if (!(measured > 0))
			return {std::numeric_limits<Real>::infinity(), true};
		return {report.total_estimate / measured, false};
	}

	void attach_measurement(ErrorReport &report, Real measured)
	{
		report.measured_filtered_error = measured;
		const auto eff = effectivity(report, measured);
		report.effectivity = eff.value;
		report.effectivity_undefined = eff.undefined;
	}

	FilteredError measure_filtered_error(const FeFunction &u_h_final, const FeFunction &reference_final,
										 MeshHierarchy &hierarchy, const FilterConfig &cfg)
	{
		const int coarse = hierarchy.find(*u_h_final.mesh);
		const int fine = hierarchy.find(*reference_final.mesh);
		if (coarse < 0 || fine < 0 || coarse > fine)
			throw InvalidArgument("measure_filtered_error: meshes are not nested levels of the hierarchy");
		const Vector injected = hierarchy.prolongate(u_h_final.coefficients, coarse, fine);
		FilteredError r;
		r.e = FeFunction(reference_final.mesh, reference_final.coefficients - injected);
		r.e_tilde = helmholtz_filter(r.e, cfg);
		const auto n = filtered_norm(r.e_tilde, r.e, cfg);
		r.norm_h = n.norm_h;
		r.identity_residual = n.identity_residual;
		return r;
	}

	namespace
	{
		RepresentationCheck finish(Real lhs, Real rhs)
		{
			const Real scale = std::max(std::abs(lhs), std::abs(rhs));
			return {lhs, rhs, scale > 0 ? std::abs(lhs - rhs) / scale : 0};
		}
	} // namespace

	RepresentationCheck discrete_duality_check(const ProblemSetup &setup, const TimeSteppingOptions &options,
											   PsiSource source, const FilterConfig &cfg, const FeFunction *custom_psi)
	{
		TimeSteppingOptions fwd = options;
		fwd.snapshot_stride = std::max(step_count(setup.T, options.tau), 1);
		const TrajectoryRecord forward = run_forward(setup, fwd);

		FeFunction psi;
		if (source == PsiSource::filtered_error)
			psi = helmholtz_filter(forward.final_state(), cfg);
		else
		{
			if (!custom_psi || custom_psi->mesh.get() != setup.mesh.get())
				throw InvalidArgument("discrete_duality_check: custom terminal datum missing or on another mesh");
			psi = *custom_psi;
		}

		const TrajectoryRecord dual = run_dual(setup, psi, options);
		const SpaceOperators ops(setup);
		const DofMap &dofs = ops.dofs();

		const Real lhs = forward.final_state().coefficients.dot(ops.mass_full() * psi.coefficients);
		const Vector u0 = dofs.restrict(forward.snapshots.front().coefficients);
		const Vector phi0 = dofs.restrict(dual.snapshots.front().coefficients);
		Real rhs = u0.dot(ops.mass() * phi0);
		if (setup.f)
			for (int n = 0; n < dual.n_steps(); ++n)
				rhs += ops.step_load(n * options.tau, (n + 1) * options.tau, options.integrator)
						   .dot(dual.dual_multipliers[n]);
		return finish(lhs, rhs);
	}

	RepresentationCheck error_representation_check(const TrajectoryRecord &coarse, const TrajectoryRecord &reference,
												   const TrajectoryRecord &dual, const FeFunction &psi,
												   const ProblemSetup &reference_setup, MeshHierarchy &hierarchy)
	{
		const auto &times = reference.times;
		for (const TrajectoryRecord *tr : {&coarse, &dual})
		{
			if (tr->times.size() != times.size())
				throw InvalidArgument("error_representation_check: time grids differ");
			for (std::size_t i = 0; i < times.size(); ++i)
				if (std::abs(tr->times[i] - times[i]) > 1e-12 * std::max(Real(1), std::abs(times.back())))
					throw InvalidArgument("error_representation_check: time grids differ");
		}
		for (const TrajectoryRecord *tr : {&coarse, &reference, &dual})
			if (tr->snapshots.size() != times.size())
				throw InvalidArgument("error_representation_check: trajectories need snapshot stride 1");

		const int lr = hierarchy.find(*reference.snapshots.front().mesh);
		const int lc = hierarchy.find(*coarse.snapshots.front().mesh);
		const int ld = hierarchy.find(*dual.snapshots.front().mesh);
		if (lr < 0 || lc < 0 || ld < 0 || lc > lr || ld > lr)
			throw InvalidArgument("error_representation_check: meshes are not nested below the reference level");
		const MeshPtr mesh = hierarchy.level(lr);
		if (psi.coefficients.size() != mesh->n_vertices())
			throw InvalidArgument("error_representation_check: psi must live on the reference mesh");

		const SparseMatrix M = assemble_mass(*mesh);
		const SparseMatrix K = assemble_stiffness(*mesh);
		auto operator_at = [&](Real t) -> SparseMatrix {
			return assemble_convection(*mesh, reference_setup.field, t, VelocityPart::full) + reference_setup.mu * K;
		};

		std::vector<Vector> e(times.size()), phi(times.size());
		for (std::size_t n = 0; n < times.size(); ++n)
		{
			e[n] = reference.snapshots[n].coefficients - hierarchy.prolongate(coarse.snapshots[n].coefficients, lc, lr);
			phi[n] = hierarchy.prolongate(dual.snapshots[n].coefficients, ld, lr);
		}

		const Real lhs = e.back().dot(M * psi.coefficients);
		Real rhs = e.front().dot(M * phi.front());
		const bool constant = !reference_setup.field.time_dependent();
		SparseMatrix A_prev = operator_at(times.front());
		for (std::size_t n = 0; n + 1 < times.size(); ++n)
		{
			const Real dt = times[n + 1] - times[n];
			const SparseMatrix A_next = constant ? A_prev : operator_at(times[n + 1]);
			const Vector phi_mid = 0.5 * (phi[n] + phi[n + 1]);
			const Vector e_mid = 0.5 * (e[n] + e[n + 1]);
			rhs += (e[n + 1] - e[n]).dot(M * phi_mid);
			rhs += dt * 0.5 * (phi_mid.dot(A_prev * e_mid) + phi_mid.dot(A_next * e_mid));
			A_prev = A_next;
		}
		return finish(lhs, rhs);
	}

	RepresentationStudy run_error_representation(const ProblemSetup &setup, MeshHierarchy &hierarchy, Real tau,
												 int coarse_level, int dual_level, int reference_level,
												 PsiSource source, const FilterConfig &cfg,
												 const ScalarFunction &custom_psi)
	{
		if (coarse_level > reference_level || dual_level > reference_level || coarse_level < 0 || dual_level < 0)
			throw InvalidArgument("run_error_representation: levels must not exceed the reference level");
		TimeSteppingOptions opts;
		opts.tau = tau;

		ProblemSetup sc = setup, sr = setup, sd = setup;
		sc.mesh = hierarchy.level(coarse_level);
		sr.mesh = hierarchy.level(reference_level);
		sd.mesh = hierarchy.level(dual_level);
		sd.f = {};
		sd.u0 = {};

		const TrajectoryRecord coarse = run_forward(sc, opts);
		const TrajectoryRecord reference = run_forward(sr, opts);

		FeFunction psi;
		if (source == PsiSource::filtered_error)
		{
			const FeFunction eT(sr.mesh, reference.final_state().coefficients
											 - hierarchy.prolongate(coarse.final_state().coefficients, coarse_level,
																	reference_level));
			psi = helmholtz_filter(eT, cfg);
		}
		else
		{
			if (!custom_psi)
				throw InvalidArgument("run_error_representation: custom terminal datum missing");
			psi = l2_project(sr.mesh, custom_psi, true);
		}

		// Terminal datum of the dual: L2 projection of psi onto the dual level.
		const Vector load = hierarchy.prolongate_transpose(assemble_mass(*sr.mesh) * psi.coefficients, dual_level,
														   reference_level);
		const Vector psi_d = l2_project(*sd.mesh, assemble_mass(*sd.mesh), load, true);
		const TrajectoryRecord dual = run_dual(sd, FeFunction(sd.mesh, psi_d, true), opts);

		return {coarse_level, dual_level, reference_level,
				error_representation_check(coarse, reference, dual, psi, sr, hierarchy)};
	}
} // namespace cipflow
