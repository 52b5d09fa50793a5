#pragma once

#include "cipflow/types.hpp"

#include <memory>

namespace cipflow
{
	enum class LinearSolverKind
	{
		direct_small,
		cg,
		bicgstab
	};

	struct LinearSolverConfig
	{
		static constexpr int max_direct_size = 20000;

		LinearSolverKind kind = LinearSolverKind::direct_small;
		Real rtol = 1e-12;
		int max_iters = 5000;

		/// Direct factorization up to max_direct_size unknowns, otherwise the
		/// given iterative kind.
		static LinearSolverConfig for_size(int n, LinearSolverKind iterative = LinearSolverKind::bicgstab,
										   Real rtol = 1e-12);

		/// Throws InvalidArgument on an out-of-range tolerance or an oversized
		/// direct solve.
		void validate(int n) const;
	};

	struct LinearSolveResult
	{
		Vector x;
		Real residual;
		int iterations;
	};

	/// Factorizes or preconditions a matrix once and solves repeatedly.
	class LinearSolver
	{
	public:
		explicit LinearSolver(LinearSolverConfig config = {});
		~LinearSolver();
		LinearSolver(LinearSolver &&) noexcept;
		LinearSolver &operator=(LinearSolver &&) noexcept;

		void compute(const SparseMatrix &A);
		/// Solves with the computed operator; `guess` seeds iterative kinds.
		LinearSolveResult solve(const Vector &b, const Vector *guess = nullptr) const;

		const LinearSolverConfig &config() const { return config_; }

	private:
		struct Impl;
		LinearSolverConfig config_;
		std::unique_ptr<Impl> impl_;
	};

	/// Relative symmetry defect |A - A^T|_F / |A|_F.
	Real symmetry_defect(const SparseMatrix &A);

	LinearSolveResult solve_linear(const SparseMatrix &A, const Vector &b, const LinearSolverConfig &config);
} // namespace cipflow
