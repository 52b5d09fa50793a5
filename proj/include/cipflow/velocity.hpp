#pragma once

#include "cipflow/mesh.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cipflow
{
	enum class VelocityPart
	{
		full,
		coarse,
		fine
	};

	/// One scale of a velocity field. The Jacobian is optional; when absent it
	/// is approximated by central differences.
	struct FieldComponent
	{
		std::function<Vec2(const Vec2 &, Real)> value;
		std::function<Mat2(const Vec2 &, Real)> jacobian;

		static FieldComponent zero();
	};

	struct DecomposedVelocity
	{
		Vec2 coarse;
		Vec2 fine;
		Vec2 full;
	};

	/// Multiscale advection field beta = coarse + fine. Jacobians are stored
	/// row-wise: J(i,j) = d beta_i / d x_j.
	class VelocityField
	{
	public:
		VelocityField(std::string name, FieldComponent coarse, FieldComponent fine, bool time_dependent = false);

		const std::string &name() const { return name_; }
		bool time_dependent() const { return time_dependent_; }

		Vec2 coarse(const Vec2 &x, Real t) const { return coarse_.value(x, t); }
		Vec2 fine(const Vec2 &x, Real t) const { return fine_.value(x, t); }
		Vec2 operator()(const Vec2 &x, Real t) const { return coarse(x, t) + fine(x, t); }
		Vec2 evaluate(const Vec2 &x, Real t, VelocityPart part) const;

		Mat2 jacobian(const Vec2 &x, Real t, VelocityPart part, Real fd_step = 1e-6) const;

		bool has_fine_scale() const { return has_fine_; }

		/// User-declared bounds, checked by sampling in check_assumptions.
		std::optional<Real> declared_coarse_w1inf;
		std::optional<Real> declared_fine_linf;

	private:
		std::string name_;
		FieldComponent coarse_;
		FieldComponent fine_;
		bool time_dependent_;
		bool has_fine_;
	};

	DecomposedVelocity evaluate_decomposed(const VelocityField &field, const Vec2 &x, Real t);

	namespace fields
	{
		/// (-y, x): solid-body rotation about the origin.
		FieldComponent rigid_rotation();
		/// (y, 0).
		FieldComponent shear();
		/// eps * (sin(kappa y), 0); divergence free, sup-norm eps.
		FieldComponent oscillatory_fine(Real eps, Real kappa);
		/// eps/sqrt(2) * (sin(2 pi kappa y), sin(2 pi kappa x)) * chi(|x|), with chi a
		/// smooth cutoff equal to one for |x| <= r0 and zero for |x| >= r1.
		/// Sup-norm at most eps.
		FieldComponent cellular_fine(Real eps, Real kappa, Real r0 = 0.75, Real r1 = 0.9);

		VelocityField coarse_only(std::string name, FieldComponent coarse);
		VelocityField composite(std::string name, FieldComponent coarse, FieldComponent fine);
		VelocityField zero();

		/// Default multiscale field: rigid rotation plus a cellular fine scale
		/// of amplitude sqrt(mu) (so that |beta'|_inf^2 = mu).
		VelocityField multiscale(Real mu, Real kappa = 8);

		/// Parses a field name from configuration:
		///   rigid_rotation | shear | zero
		///   oscillatory_fine(eps,kappa) | cellular_fine(eps,kappa)
		///   composite(<coarse>,<fine>) | multiscale(kappa)
		/// Fine-only names yield a field with zero coarse part. `mu` resolves the
		/// symbolic amplitude `sqrt_mu` and the multiscale preset.
		VelocityField parse(const std::string &spec, Real mu);
	} // namespace fields

	/// Sampling points used for sup-norm surrogates: vertices and centroids,
	/// each evaluated at every time sample.
	struct SamplingPlan
	{
		std::vector<Vec2> points;
		std::vector<Real> times;

		static SamplingPlan on_mesh(const Mesh &mesh, std::vector<Real> times);
		static std::vector<Real> uniform_times(Real T, int n_samples);
	};

	struct ScaleSeparationReport
	{
		Real max_divergence = 0;
		Real max_boundary_normal = 0;
		Real fine_ratio = 0; // |beta'|_inf^2 / mu
		Real coarse_w1inf = 0;
		Real fine_linf = 0;
		std::vector<std::string> violations;
	};

	/// Samples divergence, the coarse normal component on boundary faces, and
	/// the fine-scale amplitude ratio. `boundary_tolerance` is the accepted
	/// geometric residual of beta_bar . n (polygonal approximations of curved
	/// domains cannot make it vanish).
	ScaleSeparationReport check_assumptions(const VelocityField &field, const Mesh &mesh, Real mu,
											 const std::vector<Real> &times, Real divergence_tolerance = 1e-8,
											 Real boundary_tolerance = 1e-8);

	struct PecletNumbers
	{
		Real U;
		Real Pe_L;
		Real Pe_h;
		bool low_mesh_peclet;
	};

	PecletNumbers compute_peclet(Real U, Real mu, Real L, Real h);
	PecletNumbers compute_peclet(const VelocityField &field, const SamplingPlan &plan, Real mu, Real L, Real h);

	/// Sup-norm surrogates over the sampling plan at a single time.
	Real sampled_coarse_w1inf(const VelocityField &field, const std::vector<Vec2> &points, Real t);
	Real sampled_fine_linf(const VelocityField &field, const std::vector<Vec2> &points, Real t);
	Real sampled_linf(const VelocityField &field, const std::vector<Vec2> &points, Real t);

	constexpr Real infinite_time = std::numeric_limits<Real>::infinity();

	struct FlowTimescales
	{
		/// min(|beta_bar|_{W1,inf}^{-1}, |beta'|^2/mu) inside the supremum.
		Real tau_F_literal;
		/// max(|beta_bar|_{W1,inf}, |beta'|^2/mu) inside the supremum.
		Real tau_F_max;
	};

	FlowTimescales compute_tau_F(const VelocityField &field, Real mu, const SamplingPlan &plan);

	/// Lambda = sym(grad beta_bar) - 1/2 div(beta_bar) I + 1/2 |beta'|^2 / mu I.
	Mat2 lambda_matrix(const VelocityField &field, const Vec2 &x, Real t, Real mu);

	/// Largest eigenvalue of a symmetric 2x2 matrix, closed form.
	template <typename Derived>
	typename Derived::Scalar largest_symmetric_eigenvalue(const Eigen::MatrixBase<Derived> &A)
	{
		using std::sqrt;
		const auto mean = (A(0, 0) + A(1, 1)) / 2;
		const auto half_diff = (A(0, 0) - A(1, 1)) / 2;
		const auto off = (A(0, 1) + A(1, 0)) / 2;
		return mean + sqrt(half_diff * half_diff + off * off);
	}

	/// Largest positive eigenvalue of Lambda (zero when none is positive).
	Real sigma_p(const Mat2 &lambda);

	/// tilde tau_F with 1/tilde tau_F = 1/2 max over samples of sigma_p(Lambda);
	/// samples at triangle centroids. Returns +inf when the maximum is zero.
	Real compute_tilde_tau_F(const VelocityField &field, Real mu, const Mesh &mesh, const std::vector<Real> &times);
} // namespace cipflow
