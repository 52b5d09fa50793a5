#pragma once

#include "cipflow/fem.hpp"
#include "cipflow/linear_solver.hpp"
#include "cipflow/velocity.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cipflow
{
	enum class Method
	{
		galerkin,
		cip
	};

	/// Velocity used by the discrete scheme. coarse_only replaces beta by
	/// beta_bar in both the convection term and the penalty weight.
	enum class WeightField
	{
		full_beta,
		coarse_only
	};

	enum class Integrator
	{
		cn_implicit_stab,
		cn_explicit_stab,
		backward_euler
	};

	struct ProblemSetup
	{
		MeshPtr mesh;
		Real mu = 1e-6;
		VelocityField field = fields::zero();
		SpaceTimeFunction f;   // empty means zero source
		ScalarFunction u0;	   // empty means zero initial datum
		Real T = 1;
		Real gamma = 0.01;
		Method method = Method::cip;
		WeightField weight_field = WeightField::full_beta;

		void validate() const;

		VelocityPart advection_part() const
		{
			return weight_field == WeightField::coarse_only ? VelocityPart::coarse : VelocityPart::full;
		}
		/// Penalty actually applied (zero for the Galerkin method).
		Real effective_gamma() const { return method == Method::cip ? gamma : 0; }
	};

	struct TimeSteppingOptions
	{
		Real tau = 0.01;
		Integrator integrator = Integrator::cn_implicit_stab;
		std::optional<LinearSolverConfig> solver; // chosen from the system size when empty
		int snapshot_stride = 1;
		/// Called with every computed time level of a forward run.
		std::function<void(int level, Real t, const FeFunction &u)> observer;
	};

	/// Time history of a discrete solution. Monitor vectors have one entry per
	/// time level (steps + 1); snapshots are kept every `snapshot_stride` levels.
	struct TrajectoryRecord
	{
		std::vector<Real> times;
		std::vector<FeFunction> snapshots;
		std::vector<int> snapshot_levels;
		int snapshot_stride = 1;
		Real tau = 0;
		Integrator integrator = Integrator::cn_implicit_stab;

		std::vector<Real> l2;
		std::vector<Real> h1_weighted; // mu^{1/2} |grad u|
		std::vector<Real> s_h;		   // s_h(u,u) at each level
		Real triple_norm = 0;		   // (int mu |grad u|^2 + s_h dt)^{1/2}, trapezoid

		/// Adjoint step multipliers w_n (free DOFs) of a dual run; empty for
		/// forward runs.
		std::vector<Vector> dual_multipliers;

		int n_steps() const { return static_cast<int>(times.size()) - 1; }
		const FeFunction &final_state() const { return snapshots.back(); }
	};

	/// Number of steps for the final time; throws when tau does not divide T.
	int step_count(Real T, Real tau);

	/// System matrices of one time level restricted to free DOFs.
	class SpaceOperators
	{
	public:
		explicit SpaceOperators(const ProblemSetup &setup);

		const ProblemSetup &setup() const { return setup_; }
		const DofMap &dofs() const { return dofs_; }
		const SparseMatrix &mass_full() const { return mass_full_; }
		const SparseMatrix &stiffness_full() const { return stiffness_full_; }
		const SparseMatrix &mass() const { return mass_; }
		const SparseMatrix &stiffness() const { return stiffness_; }

		/// C(t) + mu K on free DOFs.
		SparseMatrix transport(Real t) const;
		/// Penalty operator on free DOFs (empty matrix for Galerkin).
		SparseMatrix penalty(Real t) const;
		/// Full-vertex penalty operator used for monitors and estimators.
		SparseMatrix penalty_full(Real t) const;
		/// Load vector on free DOFs.
		Vector load(Real t) const;

		/// Left and right step matrices of L u^{n+1} = R u^n + g.
		std::pair<SparseMatrix, SparseMatrix> step_matrices(Real t0, Real t1, Real tau, Integrator integrator) const;
		Vector step_load(Real t0, Real t1, Integrator integrator) const;

	private:
		ProblemSetup setup_;
		DofMap dofs_;
		SparseMatrix mass_full_, stiffness_full_, mass_, stiffness_;
	};

	/// Forward solve from u_h(0) = constrained L2 projection of u0.
	TrajectoryRecord run_forward(const ProblemSetup &setup, const TimeSteppingOptions &options);

	/// Discrete adjoint of the forward scheme: marching backward from psi with
	/// the transposed step matrices, so that for zero source
	/// (u_h(T), psi) = (u_h(0), phi_h(0)) holds to rounding. Snapshots are
	/// stored in ascending time order.
	TrajectoryRecord run_dual(const ProblemSetup &setup, const FeFunction &psi, const TimeSteppingOptions &options);

	struct StabilityReport
	{
		Real sup_L2 = 0;
		Real triple_norm = 0;
		Real bound_rhs = 0; // int ||f|| dt + ||u0||
		Real ratio = 0;
		/// sup ||u_h|| + ||mu^{1/2} grad u_h||_Q, the energy-estimate left side.
		Real energy_lhs = 0;
		Real energy_ratio = 0;
	};

	StabilityReport stability_report(const TrajectoryRecord &traj, const ProblemSetup &setup);

	std::string to_string(Integrator integrator);
	std::string to_string(Method method);
} // namespace cipflow
