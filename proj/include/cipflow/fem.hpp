#pragma once

#include "cipflow/mesh.hpp"
#include "cipflow/quadrature.hpp"
#include "cipflow/velocity.hpp"

#include <filesystem>
#include <functional>
#include <optional>

namespace cipflow
{
	using ScalarFunction = std::function<Real(const Vec2 &)>;
	using SpaceTimeFunction = std::function<Real(const Vec2 &, Real)>;

	/// Continuous P1 function given by its vertex values. When `constrained` is
	/// set the function lies in the subspace vanishing on the boundary.
	struct FeFunction
	{
		MeshPtr mesh;
		Vector coefficients;
		bool constrained = false;

		FeFunction() = default;
		FeFunction(MeshPtr m, Vector c, bool constrained_ = false);

		static FeFunction zero(MeshPtr m, bool constrained = true);

		/// Checks length and, for constrained functions, exact zeros on the boundary.
		bool valid() const;

		/// Value inside triangle t at barycentric coordinates lambda.
		Real value(int t, const Eigen::Vector3d &lambda) const;
		Vec2 gradient(int t) const;
	};

	/// Gradients of the three barycentric coordinates on triangle t, one per row.
	Eigen::Matrix<Real, 3, 2> p1_gradients(const Mesh &mesh, int t);

	/// Index map between all vertices and the free (interior) ones.
	class DofMap
	{
	public:
		explicit DofMap(const Mesh &mesh);

		int n_total() const { return static_cast<int>(to_free_.size()); }
		int n_free() const { return static_cast<int>(free_.size()); }
		/// Free index of vertex v or -1 for constrained vertices.
		int free_index(int v) const { return to_free_[v]; }
		const std::vector<int> &free_vertices() const { return free_; }

		SparseMatrix restrict(const SparseMatrix &A) const;
		Vector restrict(const Vector &x) const;
		/// Embeds a free-DOF vector, writing zeros on the boundary.
		Vector extend(const Vector &x) const;

	private:
		std::vector<int> free_;
		std::vector<int> to_free_;
	};

	/// Integrals are accumulated triangle by triangle in index order and face
	/// by face in face-index order; the result is therefore deterministic.
	SparseMatrix assemble_mass(const Mesh &mesh);
	SparseMatrix assemble_stiffness(const Mesh &mesh);

	/// C_ij = int (beta . grad phi_j) phi_i with the degree-2 triangle rule.
	SparseMatrix assemble_convection(const Mesh &mesh, const VelocityField &field, Real t,
									 VelocityPart part = VelocityPart::full);

	/// Weight |beta . n_F|_inf on a face, approximated by the maximum over
	/// three Gauss points and both endpoints.
	Real face_velocity_weight(const Mesh &mesh, const Face &face, const VelocityField &field, Real t,
							  VelocityPart part);

	/// Continuous interior penalty operator:
	/// S_ij = gamma sum_F h_F^2 w_F int_F [grad phi_i . n_F][grad phi_j . n_F].
	/// `weight` selects beta (s_h) or beta_bar (the coarse-weighted variant).
	SparseMatrix assemble_cip(const Mesh &mesh, const VelocityField &field, VelocityPart weight, Real t, Real gamma);

	/// Load vector b_i = int f phi_i.
	Vector assemble_load(const Mesh &mesh, const ScalarFunction &f, int degree = 5);

	/// L2 projection. The constrained variant projects onto the subspace with
	/// zero boundary values.
	FeFunction l2_project(MeshPtr mesh, const ScalarFunction &f, bool constrained = false, int degree = 5);

	/// L2 projection from a precomputed mass matrix and load vector.
	Vector l2_project(const Mesh &mesh, const SparseMatrix &mass, const Vector &load, bool constrained);

	/// Piecewise-constant velocity: element means in the interior, boundary
	/// face averages (normal and tangential moments) on boundary elements.
	std::vector<Vec2> project_velocity_pw_constant(const Mesh &mesh, const VelocityField &field, Real t,
												   VelocityPart part = VelocityPart::full);

	struct DiscreteNorms
	{
		Real L2 = 0;
		Real H1_semi = 0;
		Real face_jump = 0;		 // s_h(u,u)^{1/2}
		Real triple_contrib = 0; // mu |grad u|^2 + s_h(u,u)
	};

	DiscreteNorms compute_norms(const FeFunction &u, Real mu, const SparseMatrix &mass, const SparseMatrix &stiffness,
								const SparseMatrix *cip = nullptr);

	/// Quadratic form x^T A x.
	Real quadratic_form(const SparseMatrix &A, const Vector &x);

	/// ||u_h - f|| by triangle quadrature.
	Real l2_error(const FeFunction &u, const ScalarFunction &exact, int degree = 5);
	Real l2_norm(const Mesh &mesh, const ScalarFunction &f, int degree = 5);

	struct InverseConstants
	{
		Real c_i;
		Real c_t;
	};

	/// Sharp per-element constants of the inverse and trace inequalities,
	/// maximised over the mesh, from 3x3 generalized eigenproblems.
	InverseConstants estimate_inverse_constants(const Mesh &mesh);

	/// MatrixMarket coordinate export for debugging.
	void write_matrix_market(const SparseMatrix &A, const std::filesystem::path &path);
} // namespace cipflow
