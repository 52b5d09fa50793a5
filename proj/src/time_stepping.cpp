#include "cipflow/time_stepping.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>

namespace cipflow
{
	void ProblemSetup::validate() const
	{
		if (!mesh)
			throw InvalidArgument("problem setup: mesh missing");
		if (!(mu > 0))
			throw InvalidArgument("problem setup: mu must be positive");
		if (!(T > 0))
			throw InvalidArgument("problem setup: T must be positive");
		if (!(gamma >= 0))
			throw InvalidArgument("problem setup: gamma must be non-negative");
		if (weight_field == WeightField::coarse_only && method != Method::cip)
			throw InvalidArgument("problem setup: coarse_only weighting requires the cip method");
	}

	int step_count(Real T, Real tau)
	{
		if (!(tau > 0))
			throw InvalidArgument("time step must be positive");
		const Real steps = T / tau;
		const long n = std::lround(steps);
		if (n < 1 || std::abs(steps - n) > 1e-8 * std::max(steps, Real(1)))
			throw InvalidArgument("time step does not divide the final time");
		return static_cast<int>(n);
	}

	std::string to_string(Integrator integrator)
	{
		switch (integrator)
		{
		case Integrator::cn_implicit_stab:
			return "cn_implicit_stab";
		case Integrator::cn_explicit_stab:
			return "cn_explicit_stab";
		default:
			return "backward_euler";
		}
	}

	std::string to_string(Method method) { return method == Method::cip ? "cip" : "galerkin"; }

	SpaceOperators::SpaceOperators(const ProblemSetup &setup)
		: setup_(setup), dofs_(*setup.mesh), mass_full_(assemble_mass(*setup.mesh)),
		  stiffness_full_(assemble_stiffness(*setup.mesh))
	{
		mass_ = dofs_.restrict(mass_full_);
		stiffness_ = dofs_.restrict(stiffness_full_);
	}

	SparseMatrix SpaceOperators::transport(Real t) const
	{
		const SparseMatrix C = assemble_convection(*setup_.mesh, setup_.field, t, setup_.advection_part());
		return dofs_.restrict(C) + setup_.mu * stiffness_;
	}

	SparseMatrix SpaceOperators::penalty_full(Real t) const
	{
		return assemble_cip(*setup_.mesh, setup_.field, setup_.advection_part(), t, setup_.effective_gamma());
	}

	SparseMatrix SpaceOperators::penalty(Real t) const { return dofs_.restrict(penalty_full(t)); }

	Vector SpaceOperators::load(Real t) const
	{
		if (!setup_.f)
			return Vector::Zero(dofs_.n_free());
		const auto &f = setup_.f;
		return dofs_.restrict(assemble_load(*setup_.mesh, [&f, t](const Vec2 &x) { return f(x, t); }));
	}

	std::pair<SparseMatrix, SparseMatrix> SpaceOperators::step_matrices(Real t0, Real t1, Real tau,
																		 Integrator integrator) const
	{
		const SparseMatrix Mt = mass_ / tau;
		switch (integrator)
		{
		case Integrator::cn_implicit_stab:
		{
			const SparseMatrix A0 = transport(t0) + penalty(t0);
			const SparseMatrix A1 = transport(t1) + penalty(t1);
			return {Mt + 0.5 * A1, Mt - 0.5 * A0};
		}
		case Integrator::cn_explicit_stab:
		{
			const SparseMatrix A0 = transport(t0);
			const SparseMatrix A1 = transport(t1);
			return {Mt + 0.5 * A1, Mt - 0.5 * A0 - penalty(t0)};
		}
		default:
			return {Mt + transport(t1) + penalty(t1), Mt};
		}
	}

	Vector SpaceOperators::step_load(Real t0, Real t1, Integrator integrator) const
	{
		if (!setup_.f)
			return Vector::Zero(dofs_.n_free());
		if (integrator == Integrator::backward_euler)
			return load(t1);
		return 0.5 * (load(t0) + load(t1));
	}

	namespace
	{
		struct MonitorState
		{
			Real previous_contrib = 0;
			Real integral = 0;
		};

		void record_level(TrajectoryRecord &rec, MonitorState &state, const SpaceOperators &ops, const Vector &u_free,
						  const SparseMatrix &S, Real t, int level, int stride, bool keep_snapshot)
		{
			const Real l2sq = std::max(quadratic_form(ops.mass(), u_free), Real(0));
			const Real ksq = std::max(quadratic_form(ops.stiffness(), u_free), Real(0));
			const Real s = S.nonZeros() > 0 ? std::max(quadratic_form(S, u_free), Real(0)) : 0;
			const Real contrib = ops.setup().mu * ksq + s;

			rec.times.push_back(t);
			rec.l2.push_back(std::sqrt(l2sq));
			rec.h1_weighted.push_back(std::sqrt(ops.setup().mu * ksq));
			rec.s_h.push_back(s);
			if (level > 0)
				state.integral += 0.5 * rec.tau * (state.previous_contrib + contrib);
			state.previous_contrib = contrib;
			rec.triple_norm = std::sqrt(state.integral);

			if (keep_snapshot && (level % stride == 0))
			{
				rec.snapshots.emplace_back(ops.setup().mesh, ops.dofs().extend(u_free), true);
				rec.snapshot_levels.push_back(level);
			}
		}

		LinearSolverConfig solver_config(const TimeSteppingOptions &options, int n)
		{
			return options.solver.value_or(LinearSolverConfig::for_size(n));
		}
	} // namespace

	TrajectoryRecord run_forward(const ProblemSetup &setup, const TimeSteppingOptions &options)
	{
		setup.validate();
		if (options.snapshot_stride < 1)
			throw InvalidArgument("run_forward: snapshot stride must be positive");
		const int n_steps = step_count(setup.T, options.tau);
		const Real tau = options.tau;
		SpaceOperators ops(setup);
		const Mesh &mesh = *setup.mesh;

		TrajectoryRecord rec;
		rec.tau = tau;
		rec.integrator = options.integrator;
		rec.snapshot_stride = options.snapshot_stride;

		Vector u = Vector::Zero(ops.dofs().n_free());
		if (setup.u0)
			u = ops.dofs().restrict(l2_project(mesh, ops.mass_full(), assemble_load(mesh, setup.u0), true));

		const bool constant = !setup.field.time_dependent();
		SparseMatrix S = ops.penalty(0);
		MonitorState state;
		record_level(rec, state, ops, u, S, 0, 0, options.snapshot_stride, true);
		if (options.observer)
			options.observer(0, 0, FeFunction(setup.mesh, ops.dofs().extend(u), true));

		LinearSolver solver(solver_config(options, ops.dofs().n_free()));
		SparseMatrix L, R;
		for (int n = 0; n < n_steps; ++n)
		{
			const Real t0 = n * tau, t1 = (n + 1) * tau;
			try
			{
				if (!constant || n == 0)
				{
					std::tie(L, R) = ops.step_matrices(t0, t1, tau, options.integrator);
					solver.compute(L);
				}
				Vector rhs = R * u;
				if (setup.f)
					rhs += ops.step_load(t0, t1, options.integrator);
				u = solver.solve(rhs, &u).x;
			}
			catch (const SolverError &e)
			{
				throw e.with_context("run_forward: step " + std::to_string(n + 1));
			}
			if (!u.allFinite())
				throw SolverError("run_forward: non-finite solution at step " + std::to_string(n + 1),
								  std::numeric_limits<Real>::quiet_NaN());
			if (!constant)
				S = ops.penalty(t1);
			const bool last = n + 1 == n_steps;
			record_level(rec, state, ops, u, S, t1, n + 1, last ? 1 : options.snapshot_stride, true);
			if (options.observer)
				options.observer(n + 1, t1, FeFunction(setup.mesh, ops.dofs().extend(u), true));
		}
		return rec;
	}

	TrajectoryRecord run_dual(const ProblemSetup &setup, const FeFunction &psi, const TimeSteppingOptions &options)
	{
		setup.validate();
		if (!psi.mesh || psi.coefficients.size() != setup.mesh->n_vertices())
			throw InvalidArgument("run_dual: terminal datum lives on a different mesh");
		const int n_steps = step_count(setup.T, options.tau);
		const Real tau = options.tau;
		SpaceOperators ops(setup);
		const DofMap &dofs = ops.dofs();

		Eigen::SimplicialLDLT<Eigen::SparseMatrix<Real>> mass_solver;
		mass_solver.compute(Eigen::SparseMatrix<Real>(ops.mass()));
		if (mass_solver.info() != Eigen::Success)
			throw SolverError("run_dual: mass factorization failed", 1);

		// z^n = M phi^n; the pairing (u_h, psi) needs the full-vertex mass.
		Vector z = dofs.restrict(Vector(ops.mass_full() * psi.coefficients));
		std::vector<Vector> states(n_steps + 1);
		std::vector<Vector> multipliers(n_steps);
		states[n_steps] = mass_solver.solve(z);

		const bool constant = !setup.field.time_dependent();
		LinearSolver solver(solver_config(options, dofs.n_free()));
		SparseMatrix Lt, Rt;
		Vector w = Vector::Zero(dofs.n_free());
		for (int n = n_steps - 1; n >= 0; --n)
		{
			const Real t0 = n * tau, t1 = (n + 1) * tau;
			try
			{
				if (!constant || n == n_steps - 1)
				{
					auto [L, R] = ops.step_matrices(t0, t1, tau, options.integrator);
					Lt = L.transpose();
					Rt = R.transpose();
					solver.compute(Lt);
				}
				w = solver.solve(z, &w).x;
			}
			catch (const SolverError &e)
			{
				throw e.with_context("run_dual: step " + std::to_string(n + 1));
			}
			z = Rt * w;
			if (!z.allFinite())
				throw SolverError("run_dual: non-finite solution at step " + std::to_string(n + 1),
								  std::numeric_limits<Real>::quiet_NaN());
			multipliers[n] = w;
			states[n] = mass_solver.solve(z);
		}

		TrajectoryRecord rec;
		rec.tau = tau;
		rec.integrator = options.integrator;
		rec.snapshot_stride = 1;
		MonitorState state;
		for (int n = 0; n <= n_steps; ++n)
		{
			const SparseMatrix S = ops.penalty(n * tau);
			record_level(rec, state, ops, states[n], S, n * tau, n, 1, true);
		}
		// The terminal snapshot is psi itself, including any boundary values.
		rec.snapshots.back() = psi;
		rec.dual_multipliers = std::move(multipliers);
		return rec;
	}

	StabilityReport stability_report(const TrajectoryRecord &traj, const ProblemSetup &setup)
	{
		StabilityReport r;
		const Mesh &mesh = *setup.mesh;
		for (Real v : traj.l2)
			r.sup_L2 = std::max(r.sup_L2, v);
		r.triple_norm = traj.triple_norm;

		Real f_integral = 0;
		if (setup.f)
		{
			Real prev = 0;
			for (std::size_t i = 0; i < traj.times.size(); ++i)
			{
				const Real t = traj.times[i];
				const Real norm = l2_norm(mesh, [&](const Vec2 &x) { return setup.f(x, t); });
				if (i > 0)
					f_integral += 0.5 * (traj.times[i] - traj.times[i - 1]) * (prev + norm);
				prev = norm;
			}
		}
		const Real u0_norm = setup.u0 ? l2_norm(mesh, setup.u0) : 0;
		r.bound_rhs = f_integral + u0_norm;

		Real energy = 0;
		for (std::size_t i = 1; i < traj.times.size(); ++i)
			energy += 0.5 * (traj.times[i] - traj.times[i - 1])
					  * (traj.h1_weighted[i] * traj.h1_weighted[i] + traj.h1_weighted[i - 1] * traj.h1_weighted[i - 1]);
		r.energy_lhs = r.sup_L2 + std::sqrt(energy);

		const Real lhs = r.sup_L2 + r.triple_norm;
		r.ratio = r.bound_rhs > 0 ? lhs / r.bound_rhs : 0;
		r.energy_ratio = r.bound_rhs > 0 ? r.energy_lhs / r.bound_rhs : 0;
		return r;
	}
} // namespace cipflow
