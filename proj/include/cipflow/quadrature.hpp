#pragma once

#include "cipflow/types.hpp"

#include <vector>

namespace cipflow
{
	/// Points in barycentric coordinates on the reference triangle (measure 1/2)
	/// or on the reference edge [0,1] (measure 1; only the first two barycentric
	/// coordinates are used).
	struct QuadratureRule
	{
		std::vector<Eigen::Vector3d> points;
		std::vector<Real> weights;
		int degree;

		int size() const { return static_cast<int>(weights.size()); }
		Real weight_sum() const;
	};

	/// Triangle rules exact for polynomials up to the given degree (1..5).
	const QuadratureRule &triangle_rule(int degree);

	/// Gauss-Legendre rules on [0,1] with n points (1..5); exact to degree 2n-1.
	const QuadratureRule &edge_rule(int n_points);

	/// Maps barycentric coordinates onto a physical triangle.
	template <typename Derived>
	Vec2 map_barycentric(const Eigen::Vector3d &lambda, const Eigen::MatrixBase<Derived> &a,
						 const Eigen::MatrixBase<Derived> &b, const Eigen::MatrixBase<Derived> &c)
	{
		return lambda[0] * a + lambda[1] * b + lambda[2] * c;
	}
} // namespace cipflow
