#pragma once

#include "cipflow/time_stepping.hpp"

#include <array>
#include <optional>
#include <string>

namespace cipflow
{
	struct FilterConfig
	{
		Real h_frak = 0.01; // filter parameter, delta^2 for a filter width delta
		LinearSolverConfig solver{LinearSolverKind::cg, 1e-12};

		void validate() const;
		Real width() const { return std::sqrt(h_frak); }
	};

	/// Solves (h_frak K + M) e_tilde = M e on the interior vertices with a
	/// homogeneous trace.
	FeFunction helmholtz_filter(const FeFunction &e, const FilterConfig &cfg);

	struct FilteredNorm
	{
		Real norm_h = 0;
		Real identity_residual = 0; // |norm_h^2 - (e, e_tilde)| / norm_h^2
	};

	FilteredNorm filtered_norm(const FeFunction &e_tilde, const FeFunction &e, const FilterConfig &cfg);

	enum class TauFReading
	{
		literal,
		max,
		tilde
	};

	std::string to_string(TauFReading reading);
	TauFReading parse_tau_f_reading(const std::string &name);

	/// Flow timescale of the given reading for a setup, sampled on its mesh.
	Real flow_timescale(const ProblemSetup &setup, TauFReading reading, int n_time_samples = 1);

	struct ErrorReport
	{
		static constexpr std::array<const char *, 6> term_names{"T1_convective_inf", "T2_element_residual",
																 "T3_face_jump",	  "T4_stabilization",
																 "T5_data_osc_f",	  "T6_data_osc_u0"};

		Real h = 0;
		Real h_frak = 0;
		Real gamma = 0;
		Real mu = 0;
		Real T = 0;
		Real tau_F = 0;
		TauFReading reading = TauFReading::max;
		std::array<Real, 6> terms{};
		Real prefactor = 0; // exp(T / tau_F) (h / h_frak)^{1/2}
		Real total_estimate = 0;
		std::optional<Real> measured_filtered_error;
		std::optional<Real> effectivity;
		bool effectivity_undefined = false;

		Real term_sum() const;
		std::string to_key_value() const;
		static std::string csv_header();
		std::string to_csv_row() const;
	};

	/// Residual estimator of the filtered error for a full-stride trajectory.
	ErrorReport a_posteriori_estimate(const TrajectoryRecord &traj, const ProblemSetup &setup, const FilterConfig &cfg,
									  TauFReading reading = TauFReading::max);

	struct EffectivityResult
	{
		Real value;
		bool undefined; // measured error vanished
	};

	EffectivityResult effectivity(const ErrorReport &report, Real measured);
	/// Stores the measured error and the effectivity in the report.
	void attach_measurement(ErrorReport &report, Real measured);

	struct FilteredError
	{
		Real norm_h = 0;
		Real identity_residual = 0;
		FeFunction e;
		FeFunction e_tilde;
	};

	/// e = reference - prolongated coarse solution on the reference mesh, then
	/// filtered there. Both meshes must be levels of the hierarchy.
	FilteredError measure_filtered_error(const FeFunction &u_h_final, const FeFunction &reference_final,
										 MeshHierarchy &hierarchy, const FilterConfig &cfg);

	enum class PsiSource
	{
		filtered_error,
		custom
	};

	struct RepresentationCheck
	{
		Real lhs = 0;
		Real rhs = 0;
		Real rel_gap = 0;
	};

	/// Discrete duality on one mesh: (u_h(T), psi) against
	/// (u_h(0), phi_h(0)) + sum_n g_n . w_n from the transposed chain. The
	/// filtered_error source uses psi = filter(u_h(T)).
	RepresentationCheck discrete_duality_check(const ProblemSetup &setup, const TimeSteppingOptions &options,
											   PsiSource source, const FilterConfig &cfg,
											   const FeFunction *custom_psi = nullptr);

	/// Continuous error representation evaluated on the reference mesh with a
	/// dual trajectory from a level between coarse and reference:
	/// (e(T), psi) = (e(0), phi(0)) + sum_n (e^{n+1} - e^n, phi^{n+1/2})
	///             + tau a(e^{n+1/2}, phi^{n+1/2}).
	/// All trajectories must share the time grid.
	RepresentationCheck error_representation_check(const TrajectoryRecord &coarse, const TrajectoryRecord &reference,
												   const TrajectoryRecord &dual, const FeFunction &psi,
												   const ProblemSetup &reference_setup, MeshHierarchy &hierarchy);

	struct RepresentationStudy
	{
		int coarse_level;
		int dual_level;
		int reference_level;
		RepresentationCheck check;
	};

	/// Runs coarse, reference and dual solves with a common step and evaluates
	/// the representation. The setup mesh is ignored; levels come from the
	/// hierarchy. The filtered_error source uses psi = filter(e(T)).
	RepresentationStudy run_error_representation(const ProblemSetup &setup, MeshHierarchy &hierarchy, Real tau,
												 int coarse_level, int dual_level, int reference_level,
												 PsiSource source, const FilterConfig &cfg,
												 const ScalarFunction &custom_psi = {});
} // namespace cipflow
