#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <stdexcept>
#include <string>

namespace cipflow
{
	using Real = double;

	template <typename Scalar>
	using Vec2T = Eigen::Matrix<Scalar, 2, 1>;
	template <typename Scalar>
	using Mat2T = Eigen::Matrix<Scalar, 2, 2>;

	using Vec2 = Vec2T<Real>;
	using Mat2 = Mat2T<Real>;
	using Vector = Eigen::VectorXd;

	// Compressed-row storage; Eigen keeps inner indices sorted and unique after makeCompressed().
	using SparseMatrix = Eigen::SparseMatrix<Real, Eigen::RowMajor>;
	using Triplet = Eigen::Triplet<Real>;

	class InvalidArgument : public std::invalid_argument
	{
	public:
		using std::invalid_argument::invalid_argument;
	};

	class InvalidMesh : public std::runtime_error
	{
	public:
		using std::runtime_error::runtime_error;
	};

	class ParseError : public std::runtime_error
	{
	public:
		ParseError(const std::string &what, int line)
			: std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line)
		{
		}

		int line() const { return line_; }

	private:
		int line_;
	};

	class SolverError : public std::runtime_error
	{
	public:
		SolverError(const std::string &what, Real residual, Vector best_iterate = {})
			: std::runtime_error(what + " (relative residual " + std::to_string(residual) + ")"), message_(what),
			  residual_(residual), best_(std::move(best_iterate))
		{
		}

		Real residual() const { return residual_; }
		const Vector &best_iterate() const { return best_; }
		/// Same failure with a location prefix.
		SolverError with_context(const std::string &context) const
		{
			return SolverError(context + ": " + message_, residual_, best_);
		}

	private:
		std::string message_;
		Real residual_;
		Vector best_;
	};
} // namespace cipflow
